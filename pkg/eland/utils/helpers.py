import json
from typing import Any, List

import numpy as np


# 將 numpy 數據轉換為可序列化的格式
def handle_numpy_data(data):
    """遞歸處理 numpy 數據，將 ndarray / numpy 純量轉換為 Python 原生型別"""
    if isinstance(data, dict):
        return {key: handle_numpy_data(value) for key, value in data.items()}
    if isinstance(data, (list, tuple)):
        return [handle_numpy_data(item) for item in data]
    if isinstance(data, np.ndarray):
        return data.tolist()
    if isinstance(data, np.integer):
        return int(data)
    if isinstance(data, np.floating):
        return float(data)
    if isinstance(data, np.bool_):
        return bool(data)
    return data


# 用於處理 numpy 型別的 JSON 編碼器
class NumpyJSONEncoder(json.JSONEncoder):
    def default(self, obj):
        if isinstance(obj, (np.ndarray, np.integer, np.floating, np.bool_)):
            return handle_numpy_data(obj)
        return super(NumpyJSONEncoder, self).default(obj)


def dumps_stable(data: Any, indent: int = 2) -> str:
    """鍵排序、固定縮排的 JSON 字串，相同內容必定產生相同位元組"""
    return json.dumps(data, indent=indent, sort_keys=True, ensure_ascii=False, cls=NumpyJSONEncoder)


def derive_seed(seed: int, index: int) -> int:
    """迭代 / 訓練輪次的區域 seed：seed ⊕ index"""
    return int(seed) ^ int(index)


def parse_float_list(text: str) -> List[float]:
    """解析 "0.1,0.2,0.4" 形式的命令列參數"""
    return [float(part) for part in text.split(",") if part.strip()]


def parse_int_list(text: str) -> List[int]:
    """解析 "0,1,2" 或 "0-9" 形式的命令列參數"""
    values: List[int] = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        if "-" in part[1:]:
            start, end = part.split("-", 1)
            values.extend(range(int(start), int(end) + 1))
        else:
            values.append(int(part))
    return values
