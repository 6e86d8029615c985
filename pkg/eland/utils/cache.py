import json
import hashlib
import logging
from pathlib import Path
from typing import Any, Optional, Union

import aiofiles

from eland.utils.helpers import NumpyJSONEncoder

logger = logging.getLogger(__name__)


def create_cache_key(prefix: str, **kwargs) -> str:
    """
    根據前綴和參數創建一個標準化的快取鍵。
    例如: prefix="sweep_cell", method="eland-e2e", fraction=0.2, seed=0
    會產生 "sweep_cell:fraction=0.2&method=eland-e2e&seed=0" (參數按字母順序排列)
    """
    sorted_params = "&".join(f"{k}={v}" for k, v in sorted(kwargs.items()))
    return f"{prefix}:{sorted_params}"


def config_digest(config_json: str) -> str:
    """設定內容的 sha256，與 cache key 一起決定一個 sweep cell"""
    return hashlib.sha256(config_json.encode("utf-8")).hexdigest()[:16]


def _cache_path(cache_dir: Union[str, Path], key: str) -> Path:
    name = hashlib.sha256(key.encode("utf-8")).hexdigest()
    return Path(cache_dir) / f"{name}.json"


async def get_cache(cache_dir: Optional[Union[str, Path]], key: str) -> Optional[Any]:
    """從快取目錄讀取數據"""
    if not cache_dir:
        return None
    path = _cache_path(cache_dir, key)
    try:
        async with aiofiles.open(path, mode="r", encoding="utf-8") as f:
            content = await f.read()
        logger.info(f"Cache HIT for key: {key}")
        return json.loads(content)
    except FileNotFoundError:
        logger.info(f"Cache MISS for key: {key}")
        return None
    except (OSError, json.JSONDecodeError) as e:
        logger.error(f"Error getting cache for key {key}: {e}")
        return None


async def set_cache(cache_dir: Optional[Union[str, Path]], key: str, data: Any) -> None:
    """將數據寫入快取目錄"""
    if not cache_dir:
        return
    path = _cache_path(cache_dir, key)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        async with aiofiles.open(path, mode="w", encoding="utf-8") as f:
            await f.write(json.dumps(data, cls=NumpyJSONEncoder, sort_keys=True))
        logger.info(f"Cache SET for key: {key}")
    except OSError as e:
        logger.error(f"Error setting cache for key {key}: {e}")
