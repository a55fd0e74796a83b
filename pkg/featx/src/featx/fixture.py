"""Synthetic image fixture: seeded PNGs plus a manifest listing them."""

from __future__ import annotations

from pathlib import Path
from typing import Union

import numpy as np
from PIL import Image

from featx.manifest import ExtractionManifest, ManifestRow, write_manifest


def make_fixture(
    out_dir: Union[str, Path],
    n_images: int = 10,
    seed: int = 0,
    backbone: str = "vgg16",
    layer: str = "fc7",
    size: int = 96,
) -> Path:
    """Write n seeded images and a manifest; returns the manifest path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)

    rows = []
    for i in range(n_images):
        # smooth background with a few solid rectangles so crops actually
        # see different content than the full frame
        yy, xx = np.mgrid[0:size, 0:size].astype(np.float32) / size
        base = np.stack(
            [
                0.5 + 0.5 * np.sin(2 * np.pi * (xx + i / n_images)),
                yy,
                0.5 + 0.5 * np.cos(2 * np.pi * (yy + i / n_images)),
            ],
            axis=-1,
        )
        pixels = (base * 255).astype(np.uint8)
        for _ in range(3):
            x0, y0 = rng.integers(0, size - 16, size=2)
            w, h = rng.integers(8, 16, size=2)
            pixels[y0 : y0 + h, x0 : x0 + w] = rng.integers(0, 256, size=3)

        name = f"img{i:02d}.png"
        Image.fromarray(pixels, "RGB").save(out_dir / name)
        crop = None
        if i % 2 == 1:
            crop = (
                float(rng.integers(0, size // 4)),
                float(rng.integers(0, size // 4)),
                float(rng.integers(size // 3, size // 2)),
                float(rng.integers(size // 3, size // 2)),
            )
        rows.append(ManifestRow(sample_id=f"img{i:02d}", image=out_dir / name, crop=crop))

    manifest = ExtractionManifest(
        backbone=backbone,
        layer=layer,
        output=out_dir / "features.hcvf",
        rows=rows,
    )
    manifest_path = out_dir / "manifest.jsonl"
    write_manifest(manifest, manifest_path)
    return manifest_path
