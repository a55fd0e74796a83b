"""Batch extraction: manifest rows -> preprocessed crops -> HCVF store.

Rows are processed in manifest order and written in manifest order; the
batch size only controls how many images share a forward pass. Unreadable
images are skipped with a log line, anything else wrong with a row is an
error.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Union

import numpy as np
import torch
from PIL import Image

from featx.backbone import Backbone, load_backbone
from featx.hcvf import write_store
from featx.manifest import ExtractionManifest, ManifestRow

log = logging.getLogger("featx")

# standard ImageNet channel statistics, the convention VGG-class weights
# are trained under
CHANNEL_MEAN = np.array([0.485, 0.456, 0.406], dtype=np.float32)
CHANNEL_STD = np.array([0.229, 0.224, 0.225], dtype=np.float32)


class ExtractionError(ValueError):
    pass


@dataclass
class ExtractionResult:
    output: Path
    written: int
    skipped: list[str] = field(default_factory=list)


def _load_rgb(row: ManifestRow) -> Optional[Image.Image]:
    try:
        with Image.open(row.image) as img:
            return img.convert("RGB")
    except (OSError, ValueError) as exc:
        log.warning("skipping %s: cannot read %s (%s)", row.sample_id, row.image, exc)
        return None


def _crop(img: Image.Image, row: ManifestRow) -> Image.Image:
    if row.crop is None:
        return img
    x, y, w, h = row.crop
    if x + w > img.width or y + h > img.height:
        raise ExtractionError(
            f"{row.sample_id}: crop {row.crop} exceeds image bounds "
            f"{img.width}x{img.height}"
        )
    left, upper = int(math.floor(x)), int(math.floor(y))
    right, lower = int(math.ceil(x + w)), int(math.ceil(y + h))
    if right <= left or lower <= upper:
        raise ExtractionError(f"{row.sample_id}: zero-area crop {row.crop}")
    return img.crop((left, upper, right, lower))


def preprocess(img: Image.Image, input_size: int) -> np.ndarray:
    """Resize and normalize to a (3, s, s) float32 plane stack."""
    resized = img.resize((input_size, input_size), Image.BILINEAR)
    arr = np.asarray(resized, dtype=np.float32) / 255.0
    arr = (arr - CHANNEL_MEAN) / CHANNEL_STD
    return arr.transpose(2, 0, 1)


def extract(
    manifest: ExtractionManifest,
    weights: Optional[Union[str, Path]] = None,
    seed: int = 0,
    batch_size: int = 8,
    threads: int = 1,
    backbone: Optional[Backbone] = None,
) -> ExtractionResult:
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    torch.set_num_threads(max(1, threads))
    if backbone is None:
        backbone = load_backbone(manifest.backbone, manifest.layer, weights, seed)

    planes: list[np.ndarray] = []
    kept_ids: list[str] = []
    skipped: list[str] = []
    for row in manifest.rows:
        img = _load_rgb(row)
        if img is None:
            skipped.append(row.sample_id)
            continue
        planes.append(preprocess(_crop(img, row), backbone.input_size))
        kept_ids.append(row.sample_id)

    rows_out = np.zeros((len(planes), backbone.dim), dtype=np.float32)
    for start in range(0, len(planes), batch_size):
        chunk = np.stack(planes[start : start + batch_size])
        rows_out[start : start + len(chunk)] = backbone.forward(chunk)

    manifest.output.parent.mkdir(parents=True, exist_ok=True)
    write_store(manifest.output, kept_ids, rows_out)
    return ExtractionResult(output=manifest.output, written=len(kept_ids), skipped=skipped)
