"""
訓練後參數的二進位格式：

    b"ELANDPRM" | uint32 參數數量
    每個參數：uint16 名稱長度 | utf-8 名稱 | uint8 維度數 | uint32 × ndim 形狀 | float64 little-endian 值
"""

import logging
import struct
from pathlib import Path
from typing import Union

import aiofiles
import numpy as np

from eland.core.numerics import ParamStore
from eland.errors import DataValidationError

logger = logging.getLogger(__name__)

MAGIC = b"ELANDPRM"


def encode_params(params: ParamStore) -> bytes:
    chunks = [MAGIC, struct.pack("<I", len(params))]
    for name in params.names():
        values = params[name].values
        encoded_name = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(encoded_name)))
        chunks.append(encoded_name)
        chunks.append(struct.pack("<B", values.ndim))
        chunks.append(struct.pack(f"<{values.ndim}I", *values.shape))
        chunks.append(values.astype("<f8").tobytes(order="C"))
    return b"".join(chunks)


def decode_params(data: bytes, seed: int = 0, namespace: str = "loaded") -> ParamStore:
    if not data.startswith(MAGIC):
        raise DataValidationError("not an ELAND parameter file (bad magic)")
    params = ParamStore(seed, namespace=namespace)
    offset = len(MAGIC)
    try:
        (count,) = struct.unpack_from("<I", data, offset)
        offset += 4
        for _ in range(count):
            (name_length,) = struct.unpack_from("<H", data, offset)
            offset += 2
            name = data[offset:offset + name_length].decode("utf-8")
            offset += name_length
            (ndim,) = struct.unpack_from("<B", data, offset)
            offset += 1
            shape = struct.unpack_from(f"<{ndim}I", data, offset)
            offset += 4 * ndim
            size = int(np.prod(shape, dtype=np.int64))
            if offset + 8 * size > len(data):
                raise DataValidationError(f"parameter {name}: truncated values")
            values = np.frombuffer(data, dtype="<f8", count=size, offset=offset).reshape(shape)
            offset += 8 * size
            params.add_tensor(name, values.astype(np.float64))
    except (struct.error, UnicodeDecodeError) as e:
        raise DataValidationError(f"corrupt parameter file: {e}")
    if offset != len(data):
        raise DataValidationError(f"parameter file has {len(data) - offset} trailing bytes")
    return params


async def save_params(params: ParamStore, path: Union[str, Path]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    async with aiofiles.open(path, mode="wb") as f:
        await f.write(encode_params(params))
    logger.info(f"saved {len(params)} parameters to {path}")


async def load_params(path: Union[str, Path]) -> ParamStore:
    try:
        async with aiofiles.open(path, mode="rb") as f:
            data = await f.read()
    except OSError as e:
        raise DataValidationError(f"cannot read parameter file {path}: {e}")
    return decode_params(data)
