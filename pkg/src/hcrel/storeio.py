"""Binary codecs: the HCVF feature store and the HCVM model checkpoint.

HCVF layout: magic "HCVF", version u32, count u32, dim u32 (16-byte header),
then count sample ids (u16 length-prefixed UTF-8), then count x dim
little-endian float32 values row-major.

HCVM layout: magic "HCVM", version u32, input/hidden/embed dims as u32,
then the six parameter blocks (w1, b1, w2, b2, wv, bv) as little-endian
float64 in declaration order.

Readers reject malformed files with the byte offset of the problem.
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import Sequence, Union

import numpy as np

from .metric import MetricModel
from .types import FeatureVector

HCVF_MAGIC = b"HCVF"
HCVM_MAGIC = b"HCVM"
FORMAT_VERSION = 1


class FeatureStoreError(ValueError):
    def __init__(self, path, offset: int, message: str):
        super().__init__(f"{path}: offset {offset}: {message}")
        self.path = str(path)
        self.offset = offset


class CheckpointError(ValueError):
    def __init__(self, path, offset: int, message: str):
        super().__init__(f"{path}: offset {offset}: {message}")
        self.path = str(path)
        self.offset = offset


def write_features(features: Sequence[FeatureVector], path: Union[str, Path]) -> None:
    """Serialize feature vectors; all dimensions must agree."""
    dims = {fv.dim for fv in features}
    if len(dims) > 1:
        raise ValueError(f"mixed feature dimensions: {sorted(dims)}")
    dim = dims.pop() if dims else 0
    buf = bytearray()
    buf += HCVF_MAGIC
    buf += struct.pack("<III", FORMAT_VERSION, len(features), dim)
    for fv in features:
        encoded = fv.sample_id.encode("utf-8")
        if len(encoded) > 0xFFFF:
            raise ValueError(f"sample id too long ({len(encoded)} bytes)")
        buf += struct.pack("<H", len(encoded))
        buf += encoded
    if features:
        block = np.stack([fv.values for fv in features]).astype("<f4")
        buf += block.tobytes(order="C")
    Path(path).write_bytes(bytes(buf))


def read_features(path: Union[str, Path]) -> list[FeatureVector]:
    """Parse an HCVF file back into feature vectors, preserving row order."""
    data = Path(path).read_bytes()
    if len(data) < 4 or data[:4] != HCVF_MAGIC:
        raise FeatureStoreError(path, 0, "bad magic, expected HCVF")
    if len(data) < 16:
        raise FeatureStoreError(path, len(data), "truncated header")
    version, count, dim = struct.unpack_from("<III", data, 4)
    if version != FORMAT_VERSION:
        raise FeatureStoreError(path, 4, f"unsupported version {version}")
    offset = 16
    ids = []
    for _ in range(count):
        if offset + 2 > len(data):
            raise FeatureStoreError(path, len(data), "truncated sample id length")
        (id_len,) = struct.unpack_from("<H", data, offset)
        offset += 2
        if offset + id_len > len(data):
            raise FeatureStoreError(path, len(data), "truncated sample id")
        try:
            ids.append(data[offset : offset + id_len].decode("utf-8"))
        except UnicodeDecodeError:
            raise FeatureStoreError(path, offset, "sample id is not valid UTF-8") from None
        offset += id_len
    block_size = count * dim * 4
    if len(data) - offset < block_size:
        raise FeatureStoreError(path, len(data), "truncated feature block")
    if len(data) - offset > block_size:
        raise FeatureStoreError(path, offset + block_size, "trailing bytes after feature block")
    values = np.frombuffer(data, dtype="<f4", count=count * dim, offset=offset)
    rows = values.reshape(count, dim) if count else values.reshape(0, dim)
    return [FeatureVector(sample_id=ids[i], values=rows[i]) for i in range(count)]


def features_by_id(features: Sequence[FeatureVector]) -> dict[str, FeatureVector]:
    out: dict[str, FeatureVector] = {}
    for fv in features:
        if fv.sample_id in out:
            raise ValueError(f"duplicate sample id: {fv.sample_id!r}")
        out[fv.sample_id] = fv
    return out


def write_checkpoint(model: MetricModel, path: Union[str, Path]) -> None:
    hidden_dim, input_dim = model.w1.shape
    embed_dim = model.w2.shape[0]
    buf = bytearray()
    buf += HCVM_MAGIC
    buf += struct.pack("<IIII", FORMAT_VERSION, input_dim, hidden_dim, embed_dim)
    for param in model.parameters():
        buf += np.ascontiguousarray(param, dtype="<f8").tobytes(order="C")
    Path(path).write_bytes(bytes(buf))


def read_checkpoint(path: Union[str, Path]) -> MetricModel:
    data = Path(path).read_bytes()
    if len(data) < 4 or data[:4] != HCVM_MAGIC:
        raise CheckpointError(path, 0, "bad magic, expected HCVM")
    if len(data) < 20:
        raise CheckpointError(path, len(data), "truncated header")
    version, input_dim, hidden_dim, embed_dim = struct.unpack_from("<IIII", data, 4)
    if version != FORMAT_VERSION:
        raise CheckpointError(path, 4, f"unsupported version {version}")
    shapes = [
        (hidden_dim, input_dim),
        (hidden_dim,),
        (embed_dim, hidden_dim),
        (embed_dim,),
        (embed_dim, input_dim),
        (embed_dim,),
    ]
    offset = 20
    blocks = []
    for shape in shapes:
        n = int(np.prod(shape))
        size = n * 8
        if offset + size > len(data):
            raise CheckpointError(path, len(data), "truncated parameter block")
        blocks.append(
            np.frombuffer(data, dtype="<f8", count=n, offset=offset).reshape(shape).copy()
        )
        offset += size
    if offset != len(data):
        raise CheckpointError(path, offset, "trailing bytes after parameters")
    w1, b1, w2, b2, wv, bv = blocks
    return MetricModel(w1=w1, b1=b1, w2=w2, b2=b2, wv=wv, bv=bv)
