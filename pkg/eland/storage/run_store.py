"""
實驗輸出：metrics.csv、manifest.json、分數檔、擴增預測 dump 與曲線 CSV。
浮點數一律以 repr 寫出，相同輸入重跑會得到位元組相同的 CSV。
"""

import csv
import io
import json
import logging
from pathlib import Path
from typing import Any, Dict, List, Sequence, Union

import aiofiles
import numpy as np

from eland.errors import DataValidationError
from eland.models.result_models import AugmentationPlan, RunManifest, SweepRow
from eland.storage.dataset_store import format_float
from eland.utils.helpers import dumps_stable, handle_numpy_data

logger = logging.getLogger(__name__)

METRICS_COLUMNS = ("fraction", "method", "seed", "auc", "ap")
SUMMARY_COLUMNS = ("fraction", "method", "n", "auc_mean", "auc_std", "ap_mean", "ap_std")
CURVE_COLUMNS = ("fraction", "auc_mean", "auc_std", "ap_mean", "ap_std")


async def write_text(path: Union[str, Path], content: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    try:
        async with aiofiles.open(path, mode="w", encoding="utf-8", newline="\n") as f:
            await f.write(content)
    except OSError as e:
        logger.error(f"寫入 {path} 失敗: {str(e)}", exc_info=True)
        raise
    logger.info(f"wrote {path}")
    return path


def _cell(value: Any) -> str:
    if isinstance(value, (float, np.floating)):
        return format_float(value)
    return str(value)


def _table(columns: Sequence[str], records: Sequence[Dict[str, Any]]) -> str:
    lines = [",".join(columns)]
    lines.extend(",".join(_cell(record[column]) for column in columns) for record in records)
    return "\n".join(lines) + "\n"


def metrics_csv(rows: Sequence[SweepRow]) -> str:
    ordered = sorted(rows, key=lambda row: row.sort_key())
    return _table(METRICS_COLUMNS, [row.model_dump() for row in ordered])


async def write_metrics_csv(path: Union[str, Path], rows: Sequence[SweepRow]) -> Path:
    return await write_text(path, metrics_csv(rows))


async def write_manifest(path: Union[str, Path], manifest: RunManifest) -> Path:
    return await write_text(path, dumps_stable(handle_numpy_data(manifest.model_dump())) + "\n")


async def write_scores(path: Union[str, Path], scores: np.ndarray) -> Path:
    records = [{"user_id": u, "score": float(s)} for u, s in enumerate(np.asarray(scores, dtype=float))]
    return await write_text(path, _table(("user_id", "score"), records))


async def read_scores(path: Union[str, Path]) -> np.ndarray:
    """讀取 user_id,score 檔；缺少的使用者或重複 id 都視為格式錯誤"""
    try:
        async with aiofiles.open(path, mode="r", encoding="utf-8") as f:
            content = await f.read()
    except OSError as e:
        raise DataValidationError(f"cannot read score file {path}: {e}")
    rows = [row for row in csv.reader(io.StringIO(content)) if row]
    if rows and rows[0][0].strip() == "user_id":
        rows = rows[1:]
    scores = np.full(len(rows), np.nan)
    for line_number, row in enumerate(rows, start=2):
        try:
            user_id, score = int(row[0]), float(row[1])
        except (ValueError, IndexError):
            raise DataValidationError(f"{path} line {line_number}: expected user_id,score")
        if not 0 <= user_id < len(rows) or not np.isnan(scores[user_id]):
            raise DataValidationError(f"{path} line {line_number}: user id {user_id} duplicated or out of range")
        scores[user_id] = score
    return scores


def augmentation_lines(plan: AugmentationPlan) -> str:
    predicted = plan.predicted_items()
    lines = []
    for user_id in sorted(plan.budgets):
        record = {"user": int(user_id), "predicted_items": [int(i) for i in predicted.get(user_id, [])],
                  "budget": int(plan.budgets[user_id])}
        lines.append(json.dumps(record))
    return "".join(line + "\n" for line in lines)


async def write_augmentation_dump(path: Union[str, Path], plan: AugmentationPlan) -> Path:
    return await write_text(path, augmentation_lines(plan))


async def write_summary(path: Union[str, Path], summary: Sequence[Dict[str, Any]]) -> Path:
    return await write_text(path, _table(SUMMARY_COLUMNS, summary))


def curve_filename(method: str) -> str:
    safe = "".join(ch if ch.isalnum() or ch in "-_." else "_" for ch in method)
    return f"curve_{safe}.csv"


async def write_curves(directory: Union[str, Path], curves: Dict[str, List[Dict[str, Any]]]) -> List[Path]:
    """每個方法一個 CSV (fraction 對 AUC/AP 的 mean ± std)"""
    directory = Path(directory)
    return [
        await write_text(directory / curve_filename(method), _table(CURVE_COLUMNS, points))
        for method, points in curves.items()
    ]
