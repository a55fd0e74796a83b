"""HCVF feature-store writer.

Layout: magic "HCVF", version u32, count u32, dim u32 (16-byte header),
then per sample a u16 length-prefixed UTF-8 id, then count x dim values as
little-endian float32, row-major. Written in one atomic-ish pass (temp
file + rename) so a crashed run never leaves a half store behind.
"""

from __future__ import annotations

import os
import struct
from pathlib import Path
from typing import Sequence, Union

import numpy as np

MAGIC = b"HCVF"
VERSION = 1


def write_store(
    path: Union[str, Path],
    sample_ids: Sequence[str],
    values: np.ndarray,
) -> None:
    path = Path(path)
    values = np.asarray(values, dtype=np.float32)
    if values.ndim != 2:
        raise ValueError(f"values must be 2-d (count x dim), got shape {values.shape}")
    count, dim = values.shape
    if len(sample_ids) != count:
        raise ValueError(f"{len(sample_ids)} ids for {count} rows")
    if len(set(sample_ids)) != count:
        raise ValueError("duplicate sample ids")
    if not np.all(np.isfinite(values)):
        raise ValueError("non-finite feature values")

    buf = bytearray()
    buf += MAGIC
    buf += struct.pack("<III", VERSION, count, dim)
    for sid in sample_ids:
        raw = sid.encode("utf-8")
        if len(raw) > 0xFFFF:
            raise ValueError(f"sample id too long ({len(raw)} bytes): {sid[:40]}...")
        buf += struct.pack("<H", len(raw))
        buf += raw
    buf += values.astype("<f4").tobytes(order="C")

    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(bytes(buf))
    os.replace(tmp, path)


def empty_store(path: Union[str, Path], dim: int) -> None:
    write_store(path, [], np.zeros((0, dim), dtype=np.float32))
