"""Extraction manifests.

A manifest is a JSON-lines file whose first line names the backbone, the
layer to read activations from, and the output store path; every following
line is one sample:

    {"backbone": "vgg16", "layer": "fc7", "output": "features.hcvf"}
    {"sample_id": "img0/r0:r1", "image": "img0.png", "crop": [4, 4, 60, 40]}
    {"sample_id": "web_0001", "image": "crawl/0001.jpg"}

Relative image and output paths resolve against the manifest's directory.
Crop boxes are [x, y, w, h] in pixels; bounds are checked against the
actual image at extraction time.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Union


class ManifestError(ValueError):
    pass


@dataclass(frozen=True)
class ManifestRow:
    sample_id: str
    image: Path
    crop: Optional[tuple[float, float, float, float]] = None


@dataclass
class ExtractionManifest:
    backbone: str
    layer: str
    output: Path
    rows: list[ManifestRow] = field(default_factory=list)


def _parse_crop(raw, where: str) -> tuple[float, float, float, float]:
    if not isinstance(raw, (list, tuple)) or len(raw) != 4:
        raise ManifestError(f"{where}: crop must be [x, y, w, h]")
    try:
        x, y, w, h = (float(v) for v in raw)
    except (TypeError, ValueError):
        raise ManifestError(f"{where}: crop values must be numbers") from None
    if w <= 0 or h <= 0:
        raise ManifestError(f"{where}: zero-area crop {raw}")
    if x < 0 or y < 0:
        raise ManifestError(f"{where}: crop origin must be nonnegative")
    return (x, y, w, h)


def load_manifest(path: Union[str, Path]) -> ExtractionManifest:
    path = Path(path)
    lines = path.read_text(encoding="utf-8").splitlines()
    if not lines or not lines[0].strip():
        raise ManifestError(f"{path}: missing header line")

    def parse_line(i: int):
        try:
            obj = json.loads(lines[i])
        except json.JSONDecodeError as exc:
            raise ManifestError(f"{path}:{i + 1}: invalid JSON: {exc.msg}") from None
        if not isinstance(obj, dict):
            raise ManifestError(f"{path}:{i + 1}: expected an object")
        return obj

    header = parse_line(0)
    for key in ("backbone", "layer", "output"):
        if key not in header:
            raise ManifestError(f"{path}:1: header missing {key!r}")
    base = path.parent

    manifest = ExtractionManifest(
        backbone=str(header["backbone"]),
        layer=str(header["layer"]),
        output=base / str(header["output"]),
    )
    seen: set[str] = set()
    for i in range(1, len(lines)):
        if not lines[i].strip():
            continue
        obj = parse_line(i)
        where = f"{path}:{i + 1}"
        for key in ("sample_id", "image"):
            if key not in obj:
                raise ManifestError(f"{where}: missing {key!r}")
        sid = str(obj["sample_id"])
        if sid in seen:
            raise ManifestError(f"{where}: duplicate sample_id {sid!r}")
        seen.add(sid)
        crop = _parse_crop(obj["crop"], where) if obj.get("crop") is not None else None
        manifest.rows.append(
            ManifestRow(sample_id=sid, image=base / str(obj["image"]), crop=crop)
        )
    return manifest


def write_manifest(manifest: ExtractionManifest, path: Union[str, Path]) -> None:
    """Inverse of load_manifest, with paths written relative when possible."""
    path = Path(path)
    base = path.parent

    def rel(p: Path) -> str:
        try:
            return str(p.relative_to(base))
        except ValueError:
            return str(p)

    out = [
        json.dumps(
            {
                "backbone": manifest.backbone,
                "layer": manifest.layer,
                "output": rel(manifest.output),
            }
        )
    ]
    for row in manifest.rows:
        obj: dict = {"sample_id": row.sample_id, "image": rel(row.image)}
        if row.crop is not None:
            obj["crop"] = list(row.crop)
        out.append(json.dumps(obj))
    path.write_text("\n".join(out) + "\n", encoding="utf-8")
