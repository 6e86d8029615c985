"""
資料集目錄的讀寫：

    actions.jsonl        {"user": int, "item": int, "ts": int}，一行一筆
    user_features.csv    id,f0..f{k-1}
    item_features.csv    id,f0..f{k-1}
    labels.csv           user_id,label
    split.json           {"train": [...], "val": [...], "test": [...]}
    manifest.json        產生設定、數量、使用者類型
"""

import csv
import io
import json
import logging
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import aiofiles
import numpy as np
from pydantic import ValidationError

from eland.errors import DataValidationError
from eland.models.graph_models import ActionRecord, Dataset, Split
from eland.utils.helpers import dumps_stable

logger = logging.getLogger(__name__)

ACTIONS_FILE = "actions.jsonl"
USER_FEATURES_FILE = "user_features.csv"
ITEM_FEATURES_FILE = "item_features.csv"
LABELS_FILE = "labels.csv"
SPLIT_FILE = "split.json"
MANIFEST_FILE = "manifest.json"


def format_float(value: float) -> str:
    """最短可還原的十進位表示，相同數值必定輸出相同字串"""
    return repr(float(value))


def encode_actions(actions: List[ActionRecord]) -> str:
    return "".join(
        json.dumps({"user": a.user_id, "item": a.item_id, "ts": a.timestamp}) + "\n" for a in actions
    )


def encode_features(features: np.ndarray) -> str:
    k = features.shape[1]
    lines = ["id," + ",".join(f"f{j}" for j in range(k))]
    for node_id, row in enumerate(features):
        lines.append(f"{node_id}," + ",".join(format_float(v) for v in row))
    return "\n".join(lines) + "\n"


def encode_labels(labels: np.ndarray) -> str:
    lines = ["user_id,label"] + [f"{u},{int(y)}" for u, y in enumerate(labels)]
    return "\n".join(lines) + "\n"


def encode_split(split: Split) -> str:
    return dumps_stable({name: getattr(split, name).tolist() for name in ("train", "val", "test")})


async def _write_text(path: Path, content: str) -> None:
    async with aiofiles.open(path, mode="w", encoding="utf-8", newline="\n") as f:
        await f.write(content)


async def _read_text(path: Path) -> str:
    try:
        async with aiofiles.open(path, mode="r", encoding="utf-8") as f:
            return await f.read()
    except FileNotFoundError:
        raise DataValidationError(f"missing dataset file: {path}")
    except OSError as e:
        raise DataValidationError(f"cannot read {path}: {e}")


async def write_dataset(
    dataset: Dataset, directory: Union[str, Path], manifest: Optional[Dict[str, Any]] = None
) -> Path:
    """
    將資料集寫成自足的目錄。

    Args:
        dataset: Dataset
        directory: 輸出目錄 (不存在時建立)
        manifest: 額外寫入 manifest.json 的內容 (例如產生器設定)

    Returns:
        輸出目錄
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    await _write_text(directory / ACTIONS_FILE, encode_actions(dataset.actions))
    await _write_text(directory / USER_FEATURES_FILE, encode_features(dataset.user_features))
    await _write_text(directory / ITEM_FEATURES_FILE, encode_features(dataset.item_features))
    await _write_text(directory / LABELS_FILE, encode_labels(dataset.labels))
    await _write_text(directory / SPLIT_FILE, encode_split(dataset.split))

    content = dict(manifest or {})
    content.update(
        {
            "m": dataset.m,
            "n": dataset.n,
            "actions": len(dataset.actions),
            "anomalies": int(dataset.labels.sum()),
            "files": [ACTIONS_FILE, USER_FEATURES_FILE, ITEM_FEATURES_FILE, LABELS_FILE, SPLIT_FILE],
        }
    )
    if dataset.archetypes is not None:
        content["archetypes"] = dataset.archetypes
    await _write_text(directory / MANIFEST_FILE, dumps_stable(content))
    logger.info(f"dataset written to {directory} ({len(dataset.actions)} actions)")
    return directory


def parse_actions(content: str, source: str = ACTIONS_FILE) -> List[ActionRecord]:
    actions = []
    for line_number, line in enumerate(content.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            actions.append(ActionRecord.model_validate_json(line))
        except ValidationError as e:
            raise DataValidationError(f"{source} line {line_number}: invalid action record ({e.error_count()} errors)")
    return actions


def _csv_rows(content: str, source: str) -> List[List[str]]:
    rows = [row for row in csv.reader(io.StringIO(content)) if row]
    if rows and not rows[0][0].strip().lstrip("-").isdigit():
        rows = rows[1:]  # header
    return rows


def parse_features(content: str, source: str) -> np.ndarray:
    """第一欄為節點 id，其餘為 k 個浮點數；id 必須恰好涵蓋 0..count−1"""
    rows = _csv_rows(content, source)
    if not rows:
        raise DataValidationError(f"{source}: no feature rows")
    k = len(rows[0]) - 1
    features = np.zeros((len(rows), k))
    seen = np.zeros(len(rows), dtype=bool)
    for line_number, row in enumerate(rows, start=1):
        try:
            node_id = int(row[0])
            values = [float(v) for v in row[1:]]
        except ValueError:
            raise DataValidationError(f"{source} row {line_number}: non-numeric value")
        if len(values) != k:
            raise DataValidationError(f"{source} row {line_number}: expected {k} feature columns, got {len(values)}")
        if not 0 <= node_id < len(rows) or seen[node_id]:
            raise DataValidationError(f"{source} row {line_number}: node id {node_id} missing, duplicated or out of range")
        features[node_id] = values
        seen[node_id] = True
    return features


def parse_labels(content: str, m: int, source: str = LABELS_FILE) -> np.ndarray:
    labels = np.zeros(m, dtype=np.int64)
    for line_number, row in enumerate(_csv_rows(content, source), start=1):
        try:
            user_id, label = int(row[0]), int(row[1])
        except (ValueError, IndexError):
            raise DataValidationError(f"{source} row {line_number}: expected user_id,label")
        if not 0 <= user_id < m or label not in (0, 1):
            raise DataValidationError(f"{source} row {line_number}: invalid entry ({user_id}, {label})")
        labels[user_id] = label
    return labels


async def read_dataset(directory: Union[str, Path]) -> Dataset:
    """讀回 write_dataset 的目錄；格式錯誤時 DataValidationError 會指出檔名與行號"""
    directory = Path(directory)
    actions = parse_actions(await _read_text(directory / ACTIONS_FILE), str(directory / ACTIONS_FILE))
    user_features = parse_features(await _read_text(directory / USER_FEATURES_FILE), USER_FEATURES_FILE)
    item_features = parse_features(await _read_text(directory / ITEM_FEATURES_FILE), ITEM_FEATURES_FILE)
    labels = parse_labels(await _read_text(directory / LABELS_FILE), user_features.shape[0])
    try:
        split_data = json.loads(await _read_text(directory / SPLIT_FILE))
        split = Split(**{name: np.asarray(split_data[name], dtype=np.int64) for name in ("train", "val", "test")})
    except (json.JSONDecodeError, KeyError, TypeError) as e:
        raise DataValidationError(f"{SPLIT_FILE}: malformed split ({e})")

    archetypes = None
    manifest_path = directory / MANIFEST_FILE
    if manifest_path.exists():
        try:
            archetypes = json.loads(await _read_text(manifest_path)).get("archetypes")
        except json.JSONDecodeError as e:
            raise DataValidationError(f"{MANIFEST_FILE}: malformed JSON ({e})")

    m, n = user_features.shape[0], item_features.shape[0]
    for index, action in enumerate(actions):
        if action.user_id >= m or action.item_id >= n:
            raise DataValidationError(f"{ACTIONS_FILE} record {index}: id out of range for m={m}, n={n}")
    logger.info(f"dataset read from {directory}: m={m}, n={n}, {len(actions)} actions")
    return Dataset(
        actions=actions,
        user_features=user_features,
        item_features=item_features,
        labels=labels,
        split=split,
        archetypes=archetypes,
    )
