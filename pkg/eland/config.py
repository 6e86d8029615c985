import os
import logging
from pathlib import Path
from typing import Optional, Union

from dotenv import load_dotenv
from pydantic import ValidationError

from eland.errors import ConfigurationError
from eland.models.config_models import RunConfig

# 載入環境變數 (如果有 .env 的話)
load_dotenv()

logger = logging.getLogger(__name__)

ELAND_LOG_DIR = os.getenv("ELAND_LOG_DIR", "logs")
ELAND_LOG_LEVEL = os.getenv("ELAND_LOG_LEVEL", "INFO")
ELAND_OUTPUT_DIR = os.getenv("ELAND_OUTPUT_DIR", "runs")
ELAND_MAX_WORKERS = int(os.getenv("ELAND_MAX_WORKERS", 1))
ELAND_CACHE_DIR = os.getenv("ELAND_CACHE_DIR")  # 未設定時不使用 sweep cell 快取


def load_run_config(path: Optional[Union[str, Path]] = None) -> RunConfig:
    """
    讀取 --config 指定的 JSON 設定檔。

    Args:
        path: JSON 檔路徑；None 表示使用全部預設值

    Returns:
        RunConfig
    """
    if path is None:
        return RunConfig()
    config_path = Path(path)
    try:
        content = config_path.read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigurationError(f"無法讀取設定檔 {config_path}: {e}")
    try:
        config = RunConfig.model_validate_json(content)
    except ValidationError as e:
        raise ConfigurationError(f"設定檔 {config_path} 格式錯誤: {e}")
    logger.info(f"已載入設定檔 {config_path}")
    return config
