"""Box arithmetic, greedy NMS, and human-object pair candidate generation."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

from .types import SUBTYPE_NAMES, BoundingBox, union_box

DEFAULT_IOU_THRESHOLD = 0.3
DEFAULT_SCORE_THRESHOLD = 0.2


@dataclass(frozen=True)
class Detection:
    """A scored region proposal after external detection."""

    box: BoundingBox
    category: str
    score: float
    region_id: Optional[str] = None

    def __post_init__(self):
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"detection score {self.score} outside [0,1]")

    @property
    def is_human(self) -> bool:
        return self.category in SUBTYPE_NAMES


def iou(a: BoundingBox, b: BoundingBox) -> float:
    """Intersection over union of two boxes; 0 when disjoint."""
    ix = min(a.x2, b.x2) - max(a.x, b.x)
    iy = min(a.y2, b.y2) - max(a.y, b.y)
    if ix <= 0 or iy <= 0:
        return 0.0
    inter = ix * iy
    return inter / (a.area + b.area - inter)


def nms(
    dets: list[Detection],
    iou_threshold: float = DEFAULT_IOU_THRESHOLD,
    score_threshold: float = DEFAULT_SCORE_THRESHOLD,
) -> list[Detection]:
    """Greedy per-category suppression.

    Detections with score <= ``score_threshold`` are dropped up front.  The
    highest-scoring survivor is kept and same-category detections whose IoU
    with it exceeds ``iou_threshold`` are removed, repeatedly.  Score ties are
    broken by earlier input index.  Output is sorted by descending score.
    Human subtypes are distinct categories and never suppress each other.
    """
    candidates = [(d.score, i, d) for i, d in enumerate(dets) if d.score > score_threshold]
    # descending score, ascending input index on ties
    candidates.sort(key=lambda t: (-t[0], t[1]))
    kept: list[Detection] = []
    suppressed = [False] * len(candidates)
    for i, (_, _, det) in enumerate(candidates):
        if suppressed[i]:
            continue
        kept.append(det)
        for j in range(i + 1, len(candidates)):
            if suppressed[j]:
                continue
            other = candidates[j][2]
            if other.category == det.category and iou(det.box, other.box) > iou_threshold:
                suppressed[j] = True
    return kept


def pair_candidates(
    dets: list[Detection],
) -> list[tuple[Detection, Detection, BoundingBox]]:
    """All <human, object> pairs among NMS-filtered detections.

    Returns the Cartesian product of human-subtype detections with non-human
    detections, each pair carrying its union (predicate) box.  Order follows
    input order: humans in order, objects in order within each human.
    """
    humans = [d for d in dets if d.is_human]
    objects = [d for d in dets if not d.is_human]
    return [(h, o, union_box(h.box, o.box)) for h in humans for o in objects]
