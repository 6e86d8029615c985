"""
ELAND: 早期圖異常偵測 (early graph anomaly detection)
透過預測使用者未來行為來擴增 user-item 二分圖，再交給圖異常偵測模型。
"""

__version__ = "1.0.0"
