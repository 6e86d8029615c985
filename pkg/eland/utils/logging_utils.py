import os
import logging
import datetime
from typing import Optional


def setup_logging(log_directory: str = "logs", level: str = "INFO", to_file: bool = True) -> Optional[str]:
    """
    設定根 logger：同時輸出到控制台與帶時間戳的日誌檔。

    Returns:
        日誌檔路徑 (to_file=False 時為 None)
    """
    # 獲取根 logger
    logger = logging.getLogger()
    logger.setLevel(getattr(logging, level.upper(), logging.INFO))

    # 移除可能存在的舊 handlers
    for handler in logger.handlers[:]:
        logger.removeHandler(handler)

    formatter = logging.Formatter(
        '%(asctime)s - %(name)s - %(levelname)s - %(message)s'
    )

    stream_handler = logging.StreamHandler()
    stream_handler.setFormatter(formatter)
    logger.addHandler(stream_handler)

    log_file = None
    if to_file:
        os.makedirs(log_directory, exist_ok=True)
        current_time = datetime.datetime.now().strftime("%Y%m%d_%H%M%S")
        log_file = os.path.join(log_directory, f"eland_{current_time}.log")
        file_handler = logging.FileHandler(log_file, encoding='utf-8')
        file_handler.setFormatter(formatter)
        logger.addHandler(file_handler)
        logger.info(f"日誌系統已設定完成，本次執行日誌將輸出到控制台和 {log_file}")
    return log_file


def flush_logging() -> None:
    """強制刷新日誌緩衝區，確保訊息立即寫入檔案"""
    for handler in logging.getLogger().handlers:
        if hasattr(handler, 'flush'):
            handler.flush()
