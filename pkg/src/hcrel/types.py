"""Core domain types: boxes, human subtypes, relationship triplets, vocabularies.

Everything here is immutable after construction and safe to share across
parallel workers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence, Union

import numpy as np

RelationshipType = tuple[str, str, str]  # (subject subtype, predicate, object)


class VocabularyError(ValueError):
    pass


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned box, [x, y, w, h] with top-left origin, continuous coords."""

    x: float
    y: float
    w: float
    h: float

    def __post_init__(self):
        for name in ("x", "y", "w", "h"):
            v = getattr(self, name)
            if not math.isfinite(v):
                raise ValueError(f"non-finite box coordinate {name}={v}")
        if self.w <= 0 or self.h <= 0:
            raise ValueError(f"degenerate box: w={self.w}, h={self.h}")
        if self.x < 0 or self.y < 0:
            raise ValueError(f"negative box origin: x={self.x}, y={self.y}")

    @property
    def x2(self) -> float:
        return self.x + self.w

    @property
    def y2(self) -> float:
        return self.y + self.h

    @property
    def area(self) -> float:
        return self.w * self.h

    def as_list(self) -> list[float]:
        return [self.x, self.y, self.w, self.h]

    @classmethod
    def from_list(cls, xywh: Sequence[float]) -> "BoundingBox":
        if len(xywh) != 4:
            raise ValueError(f"box needs 4 values, got {len(xywh)}")
        return cls(float(xywh[0]), float(xywh[1]), float(xywh[2]), float(xywh[3]))


def union_box(a: BoundingBox, b: BoundingBox) -> BoundingBox:
    """Minimal box enclosing both inputs."""
    x = min(a.x, b.x)
    y = min(a.y, b.y)
    return BoundingBox(x, y, max(a.x2, b.x2) - x, max(a.y2, b.y2) - y)


class HumanSubtype(Enum):
    MAN = "man"
    WOMAN = "woman"
    BOY = "boy"
    GIRL = "girl"

    def __str__(self) -> str:
        return self.value


SUBTYPE_NAMES = frozenset(s.value for s in HumanSubtype)


@dataclass(frozen=True)
class RelationshipTriplet:
    """A grounded <human, predicate, object> assertion.

    ``union_box`` is the predicate region: the minimal box enclosing the
    subject and object boxes.
    """

    subject: HumanSubtype
    predicate: int
    object: int
    subject_box: BoundingBox
    object_box: BoundingBox
    union_box: BoundingBox


def make_triplet(
    subject: HumanSubtype,
    predicate: int,
    object_id: int,
    subject_box: BoundingBox,
    object_box: BoundingBox,
) -> RelationshipTriplet:
    """Build a triplet; the predicate region is derived from the two boxes."""
    return RelationshipTriplet(
        subject=subject,
        predicate=predicate,
        object=object_id,
        subject_box=subject_box,
        object_box=object_box,
        union_box=union_box(subject_box, object_box),
    )


class VocabIndex:
    """Bijection between lowercased names and dense integer ids.

    Ids follow sorted name order when built via :func:`resolve_vocabulary`,
    or file order when loaded from disk, and round-trip exactly through
    serialization.
    """

    def __init__(self, names: Sequence[str]):
        self._names = list(names)
        self._ids = {name: i for i, name in enumerate(self._names)}
        if len(self._ids) != len(self._names):
            raise VocabularyError("duplicate names in vocabulary")

    def __len__(self) -> int:
        return len(self._names)

    def __contains__(self, name: str) -> bool:
        return name in self._ids

    def __iter__(self):
        return iter(self._names)

    def __eq__(self, other) -> bool:
        return isinstance(other, VocabIndex) and self._names == other._names

    @property
    def names(self) -> list[str]:
        return list(self._names)

    def id_of(self, name: str) -> int:
        try:
            return self._ids[name]
        except KeyError:
            raise VocabularyError(f"unknown vocabulary name: {name!r}") from None

    def name_of(self, idx: int) -> str:
        return self._names[idx]

    def get(self, name: str) -> Optional[int]:
        return self._ids.get(name)

    def save(self, path: Union[str, Path]) -> None:
        Path(path).write_text("".join(n + "\n" for n in self._names), encoding="utf-8")

    @classmethod
    def load(cls, path: Union[str, Path]) -> "VocabIndex":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        return cls([ln for ln in lines if ln])


def resolve_vocabulary(names: Iterable[str]) -> VocabIndex:
    """Normalize raw names and assign stable ids in sorted order."""
    cleaned = sorted({n.strip().lower() for n in names} - {""})
    if not cleaned:
        raise VocabularyError("empty vocabulary")
    return VocabIndex(cleaned)


@dataclass(frozen=True)
class Vocabulary:
    """Predicate and object indices plus the relationship-type catalog.

    ``relationship_types`` maps each (subject, predicate, object) triple to
    its global instance count.  The seen / zero-shot partition of types is
    relative to a train split and lives in :class:`hcrel.ingest.SplitSpec`.
    """

    predicates: VocabIndex
    objects: VocabIndex
    relationship_types: Mapping[RelationshipType, int] = field(default_factory=dict)

    def save_triples(self, path: Union[str, Path]) -> None:
        rows = sorted(self.relationship_types.items())
        with open(path, "w", encoding="utf-8") as fh:
            for (s, p, o), count in rows:
                fh.write(f"{s}\t{p}\t{o}\t{count}\n")

    @staticmethod
    def load_triples(path: Union[str, Path]) -> dict[RelationshipType, int]:
        out: dict[RelationshipType, int] = {}
        for line_no, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 4:
                raise VocabularyError(f"{path}:{line_no}: expected 4 tab-separated fields")
            out[(parts[0], parts[1], parts[2])] = int(parts[3])
        return out


@dataclass(frozen=True)
class Region:
    """One annotated or detected region inside an image."""

    region_id: str
    category: str
    box: BoundingBox
    score: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"region {self.region_id}: score {self.score} outside [0,1]")


@dataclass(frozen=True)
class RelationshipAnnotation:
    subject_region: str
    predicate: str
    object_region: str


@dataclass(frozen=True)
class ImageRecord:
    image_id: str
    width: int
    height: int
    regions: tuple[Region, ...]
    relationships: tuple[RelationshipAnnotation, ...]

    def region_by_id(self, region_id: str) -> Region:
        for r in self.regions:
            if r.region_id == region_id:
                return r
        raise KeyError(f"image {self.image_id}: no region {region_id!r}")

    def relationship_types(self) -> list[RelationshipType]:
        regions = {r.region_id: r for r in self.regions}
        return [
            (regions[rel.subject_region].category, rel.predicate, regions[rel.object_region].category)
            for rel in self.relationships
        ]


@dataclass(frozen=True)
class FeatureVector:
    """A fixed-dimension real feature for one sample."""

    sample_id: str
    values: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.values, dtype=np.float64)
        if arr.ndim != 1:
            raise ValueError(f"sample {self.sample_id}: feature must be 1-d")
        if not np.all(np.isfinite(arr)):
            raise ValueError(f"sample {self.sample_id}: non-finite feature values")
        object.__setattr__(self, "values", arr)

    @property
    def dim(self) -> int:
        return int(self.values.shape[-1])
