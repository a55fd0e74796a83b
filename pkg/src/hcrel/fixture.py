"""Seeded synthetic fixture: a small annotated image set with matching pair
features and a web corpus, shaped like the real pipeline inputs (long-tail
type frequencies, junk features for pairs without a relationship, a slice of
label noise in the web corpus).
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Union

import numpy as np

from .ingest import write_annotations
from .storeio import write_features
from .types import (
    BoundingBox,
    FeatureVector,
    ImageRecord,
    Region,
    RelationshipAnnotation,
    RelationshipType,
)

FIXTURE_PREDICATES = ["ride", "hold", "push", "wear", "kick", "feed", "chase", "carry"]
FIXTURE_OBJECTS = [
    "bicycle",
    "horse",
    "cup",
    "hat",
    "ball",
    "dog",
    "cart",
    "apple",
    "kite",
    "drum",
]
FIXTURE_SUBTYPES = ["man", "woman", "boy", "girl"]
IMAGE_W, IMAGE_H = 640, 480


def pair_sample_id(image_id: str, subject_region: str, object_region: str) -> str:
    """Canonical id linking a pair feature row to its regions."""
    return f"{image_id}/{subject_region}:{object_region}"


def _random_box(rng: np.random.Generator) -> BoundingBox:
    w = float(rng.uniform(30, 140))
    h = float(rng.uniform(30, 140))
    x = float(rng.uniform(0, IMAGE_W - w))
    y = float(rng.uniform(0, IMAGE_H - h))
    return BoundingBox(round(x, 1), round(y, 1), round(w, 1), round(h, 1))


def _type_catalog(rng: np.random.Generator, n_types: int) -> list[RelationshipType]:
    combos = [
        (s, p, o)
        for s in FIXTURE_SUBTYPES
        for p in FIXTURE_PREDICATES
        for o in FIXTURE_OBJECTS
    ]
    order = rng.permutation(len(combos))
    return [combos[int(i)] for i in order[:n_types]]


def make_fixture(
    out_dir: Union[str, Path],
    n_images: int = 100,
    seed: int = 0,
    feature_dim: int = 32,
    web_per_class: int = 24,
    n_types: int = 40,
    noise_fraction: float = 0.1,
) -> dict[str, Path]:
    """Generate the fixture under ``out_dir`` and return the artifact paths."""
    if n_images < 1:
        raise ValueError("n_images must be >= 1")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)

    catalog = _type_catalog(rng, n_types)
    # harmonic-ish head/tail: a few frequent types, many singletons
    counts = [max(1, int(50 / (i + 1))) for i in range(len(catalog))]
    instances: list[RelationshipType] = []
    for rel_type, count in zip(catalog, counts):
        instances.extend([rel_type] * count)
    rng.shuffle(instances)

    means = {
        rel_type: 4.0 * _unit(rng.normal(size=feature_dim)) for rel_type in catalog
    }
    sigma = 0.4

    assignment: dict[int, list[RelationshipType]] = {i: [] for i in range(n_images)}
    for rel_type in instances:
        assignment[int(rng.integers(n_images))].append(rel_type)

    records = []
    pair_rows: list[FeatureVector] = []
    for i in range(n_images):
        image_id = f"img{i:04d}"
        regions: list[Region] = []
        rels: list[RelationshipAnnotation] = []
        counter = 0

        def add_region(category: str) -> str:
            nonlocal counter
            rid = f"r{counter}"
            counter += 1
            regions.append(Region(region_id=rid, category=category, box=_random_box(rng)))
            return rid

        rel_of_pair: dict[tuple[str, str], RelationshipType] = {}
        for rel_type in assignment[i]:
            subj, pred, obj = rel_type
            sid = add_region(subj)
            oid = add_region(obj)
            rels.append(RelationshipAnnotation(sid, pred, oid))
            rel_of_pair[(sid, oid)] = rel_type
        if not assignment[i] or rng.uniform() < 0.3:
            add_region(FIXTURE_SUBTYPES[int(rng.integers(len(FIXTURE_SUBTYPES)))])
            add_region(FIXTURE_OBJECTS[int(rng.integers(len(FIXTURE_OBJECTS)))])

        records.append(
            ImageRecord(
                image_id=image_id,
                width=IMAGE_W,
                height=IMAGE_H,
                regions=tuple(regions),
                relationships=tuple(rels),
            )
        )

        humans = [r for r in regions if r.category in FIXTURE_SUBTYPES]
        objects = [r for r in regions if r.category not in FIXTURE_SUBTYPES]
        for hr in humans:
            for obj in objects:
                key = (hr.region_id, obj.region_id)
                if key in rel_of_pair:
                    values = means[rel_of_pair[key]] + sigma * rng.normal(size=feature_dim)
                else:
                    values = rng.normal(size=feature_dim)
                pair_rows.append(
                    FeatureVector(
                        sample_id=pair_sample_id(image_id, hr.region_id, obj.region_id),
                        values=values,
                    )
                )

    web_rows: list[FeatureVector] = []
    web_labels: list[dict] = []
    for t_idx, rel_type in enumerate(catalog):
        n_noise = int(noise_fraction * web_per_class)
        for j in range(web_per_class):
            sample_id = f"web{t_idx:03d}_{j:03d}"
            if j < web_per_class - n_noise:
                values = means[rel_type] + sigma * rng.normal(size=feature_dim)
            else:
                values = rng.normal(size=feature_dim)
            web_rows.append(FeatureVector(sample_id=sample_id, values=values))
            web_labels.append({"sample_id": sample_id, "class": list(rel_type)})

    paths = {
        "annotations": out / "annotations.jsonl",
        "dataset_features": out / "dataset_features.hcvf",
        "web_features": out / "web_features.hcvf",
        "web_labels": out / "web_labels.jsonl",
        "manifest": out / "fixture.json",
    }
    write_annotations(records, paths["annotations"])
    write_features(pair_rows, paths["dataset_features"])
    write_features(web_rows, paths["web_features"])
    with open(paths["web_labels"], "w", encoding="utf-8") as fh:
        for row in web_labels:
            fh.write(json.dumps(row, sort_keys=True) + "\n")
    manifest = {
        "n_images": n_images,
        "seed": seed,
        "feature_dim": feature_dim,
        "web_per_class": web_per_class,
        "n_types": len(catalog),
        "n_instances": len(instances),
        "types": sorted(list(t) for t in catalog),
    }
    paths["manifest"].write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    return paths


def _unit(v: np.ndarray) -> np.ndarray:
    return v / np.linalg.norm(v)
