"""The three relationship-detection evaluation tasks with Recall@{50,100} at
top-{1,3} per pair, plus the full / long-tail / zero-shot suites.

Predictions are matched per image: sorted by descending score, truncated to
the recall budget, then greedily assigned to at most one unmatched ground
truth each.  Suites with no ground truth report null recall rather than 0.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence, Union

from .geometry import iou
from .ingest import SplitSpec, zero_shot_types
from .infer import ScoredTriplet
from .types import (
    BoundingBox,
    ImageRecord,
    RelationshipTriplet,
    RelationshipType,
    SUBTYPE_NAMES,
    Vocabulary,
    union_box,
)

log = logging.getLogger(__name__)

BOX_IOU_THRESHOLD = 0.5
RECALL_BUDGETS = (50, 100)
TOP_KS = (1, 3)
# per-type recall is reported at the least constrained budget
REFERENCE_CELL = ("relationship_det", 100, 3)


class EvalTask(Enum):
    PREDICATE_DET = "predicate_det"
    PHRASE_DET = "phrase_det"
    RELATIONSHIP_DET = "relationship_det"


class PredictionFormatError(ValueError):
    def __init__(self, path, line_no: int, message: str):
        super().__init__(f"{path}:{line_no}: {message}")
        self.path = str(path)
        self.line_no = line_no


@dataclass(frozen=True)
class GroundTruth:
    """One ground-truth relationship instance, labels kept as plain names."""

    labels: RelationshipType
    subject_box: BoundingBox
    object_box: BoundingBox

    @property
    def union_box(self) -> BoundingBox:
        return union_box(self.subject_box, self.object_box)


@dataclass(frozen=True)
class Prediction:
    """One predicted relationship instance as read from a prediction file."""

    labels: RelationshipType
    subject_box: BoundingBox
    object_box: BoundingBox
    score: float

    @property
    def union_box(self) -> BoundingBox:
        return union_box(self.subject_box, self.object_box)

    def pair_key(self) -> tuple:
        return (self.labels[0], self.labels[2], self.subject_box, self.object_box)


def _boxes_match(
    task: EvalTask,
    pred_subject: BoundingBox,
    pred_object: BoundingBox,
    gt_subject: BoundingBox,
    gt_object: BoundingBox,
) -> bool:
    if task is EvalTask.PREDICATE_DET:
        return True
    if task is EvalTask.PHRASE_DET:
        return (
            iou(union_box(pred_subject, pred_object), union_box(gt_subject, gt_object))
            >= BOX_IOU_THRESHOLD
        )
    return (
        iou(pred_subject, gt_subject) >= BOX_IOU_THRESHOLD
        and iou(pred_object, gt_object) >= BOX_IOU_THRESHOLD
    )


def match_instance(pred: ScoredTriplet, gt: RelationshipTriplet, task: EvalTask) -> bool:
    """Label equality for every task; box overlap per the task definition."""
    pt = pred.triplet
    if (pt.subject, pt.predicate, pt.object) != (gt.subject, gt.predicate, gt.object):
        return False
    return _boxes_match(task, pt.subject_box, pt.object_box, gt.subject_box, gt.object_box)


def _match_parsed(pred: Prediction, gt: GroundTruth, task: EvalTask) -> bool:
    if pred.labels != gt.labels:
        return False
    return _boxes_match(task, pred.subject_box, pred.object_box, gt.subject_box, gt.object_box)


def prediction_from_scored(st: ScoredTriplet, vocab: Vocabulary) -> Prediction:
    t = st.triplet
    return Prediction(
        labels=(t.subject.value, vocab.predicates.name_of(t.predicate), vocab.objects.name_of(t.object)),
        subject_box=t.subject_box,
        object_box=t.object_box,
        score=st.score,
    )


def ground_truth_from_record(record: ImageRecord) -> list[GroundTruth]:
    out = []
    for rel in record.relationships:
        subj = record.region_by_id(rel.subject_region)
        obj = record.region_by_id(rel.object_region)
        out.append(
            GroundTruth(
                labels=(subj.category, rel.predicate, obj.category),
                subject_box=subj.box,
                object_box=obj.box,
            )
        )
    return out


def truncate_per_pair(preds: Sequence[Prediction], top_k: int) -> list[Prediction]:
    """Keep each human-object pair's top_k predictions by score.

    Pairs are identified by subject and object labels plus both boxes; ties
    within a pair preserve input order.  Output keeps the original relative
    order of survivors.
    """
    if top_k < 1:
        raise ValueError(f"top_k must be >= 1, got {top_k}")
    by_pair: dict[tuple, list[tuple[int, Prediction]]] = {}
    for pos, p in enumerate(preds):
        by_pair.setdefault(p.pair_key(), []).append((pos, p))
    keep: set[int] = set()
    for members in by_pair.values():
        ranked = sorted(members, key=lambda ip: (-ip[1].score, ip[0]))
        keep.update(pos for pos, _ in ranked[:top_k])
    return [p for pos, p in enumerate(preds) if pos in keep]


@dataclass
class MatchTally:
    matched: int = 0
    total: int = 0
    by_type: dict[RelationshipType, list[int]] = field(default_factory=dict)
    images_without_gt: int = 0

    def recall(self) -> Optional[float]:
        if self.total == 0:
            return None
        return self.matched / self.total


def _match_images(
    preds_by_image: Mapping[str, Sequence[Prediction]],
    gts_by_image: Mapping[str, Sequence[GroundTruth]],
    r: int,
    top_k: int,
    task: EvalTask,
) -> MatchTally:
    tally = MatchTally()
    for image_id, gts in gts_by_image.items():
        for gt in gts:
            tally.by_type.setdefault(gt.labels, [0, 0])[1] += 1
        tally.total += len(gts)
    for image_id in preds_by_image:
        if image_id not in gts_by_image:
            tally.images_without_gt += 1
            log.warning("predictions for image %s have no ground truth; ignored", image_id)
    for image_id, gts in gts_by_image.items():
        preds = truncate_per_pair(list(preds_by_image.get(image_id, ())), top_k)
        order = sorted(range(len(preds)), key=lambda i: (-preds[i].score, i))
        ranked = [preds[i] for i in order[:r]]
        open_gts = list(gts)
        for p in ranked:
            for slot, gt in enumerate(open_gts):
                if gt is not None and _match_parsed(p, gt, task):
                    open_gts[slot] = None
                    tally.matched += 1
                    tally.by_type[gt.labels][0] += 1
                    break
    return tally


def recall_at(
    preds_by_image: Mapping[str, Sequence[Prediction]],
    gts_by_image: Mapping[str, Sequence[GroundTruth]],
    r: int,
    top_k: int,
    task: EvalTask,
) -> Optional[float]:
    """Fraction of ground-truth instances recovered within the top ``r``
    predictions per image, with at most ``top_k`` predictions per pair.

    Returns None when there is no ground truth at all.
    """
    if r < 1:
        raise ValueError(f"recall budget must be >= 1, got {r}")
    return _match_images(preds_by_image, gts_by_image, r, top_k, task).recall()


def read_predictions(path: Union[str, Path]) -> dict[str, list[Prediction]]:
    """Parse a prediction file into per-image lists, preserving file order."""
    out: dict[str, list[Prediction]] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise PredictionFormatError(path, line_no, f"bad JSON: {exc.msg}") from None
            if not isinstance(obj, dict):
                raise PredictionFormatError(path, line_no, "expected a JSON object")
            try:
                image_id = obj["image_id"]
                labels = (str(obj["subject"]), str(obj["predicate"]), str(obj["object"]))
                pred = Prediction(
                    labels=labels,
                    subject_box=BoundingBox.from_list(obj["subject_box"]),
                    object_box=BoundingBox.from_list(obj["object_box"]),
                    score=float(obj["score"]),
                )
            except (KeyError, TypeError, ValueError) as exc:
                raise PredictionFormatError(path, line_no, str(exc)) from None
            out.setdefault(str(image_id), []).append(pred)
    return out


@dataclass
class EvalReport:
    suite: str
    cells: dict[str, dict[str, dict[str, Optional[float]]]]
    gt_instances: int
    per_type: list[tuple[RelationshipType, int, Optional[float]]]
    diagnostics: dict[str, int]

    def cell(self, task: EvalTask, r: int, top_k: int) -> Optional[float]:
        return self.cells[task.value][f"R@{r}"][f"top{top_k}"]

    def to_json_dict(self) -> dict:
        return {
            "suite": self.suite,
            "cells": self.cells,
            "gt_instances": self.gt_instances,
            "per_type": [
                {"type": list(t), "gt": n, "recall": rec} for t, n, rec in self.per_type
            ],
            "diagnostics": dict(sorted(self.diagnostics.items())),
        }

    def save(self, path: Union[str, Path]) -> None:
        Path(path).write_text(
            json.dumps(self.to_json_dict(), indent=2, sort_keys=True) + "\n",
            encoding="utf-8",
        )

    @classmethod
    def from_json_dict(cls, obj: Mapping) -> "EvalReport":
        return cls(
            suite=obj["suite"],
            cells=obj["cells"],
            gt_instances=obj["gt_instances"],
            per_type=[
                (tuple(row["type"]), row["gt"], row["recall"]) for row in obj["per_type"]
            ],
            diagnostics=dict(obj["diagnostics"]),
        )

    @classmethod
    def load(cls, path: Union[str, Path]) -> "EvalReport":
        return cls.from_json_dict(json.loads(Path(path).read_text(encoding="utf-8")))

    def write_cells_csv(self, path: Union[str, Path]) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["suite", "task", "recall_budget", "top_k", "recall"])
            for task in EvalTask:
                for r in RECALL_BUDGETS:
                    for k in TOP_KS:
                        value = self.cells[task.value][f"R@{r}"][f"top{k}"]
                        writer.writerow(
                            [self.suite, task.value, r, k, "" if value is None else f"{value:.6f}"]
                        )


def write_rank_frequency_csv(
    per_type: Sequence[tuple[RelationshipType, int, Optional[float]]],
    path: Union[str, Path],
) -> None:
    """Rank-frequency table of ground-truth types, most frequent first."""
    rows = sorted(per_type, key=lambda item: (-item[1], item[0]))
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["rank", "subject", "predicate", "object", "gt_instances", "recall"])
        for rank, (t, n, rec) in enumerate(rows, 1):
            writer.writerow([rank, t[0], t[1], t[2], n, "" if rec is None else f"{rec:.6f}"])


def _known_labels(p: Prediction, vocab: Vocabulary) -> bool:
    subj, pred, obj = p.labels
    return subj in SUBTYPE_NAMES and pred in vocab.predicates and obj in vocab.objects


def run_suite(
    predictions_path: Union[str, Path],
    records: Sequence[ImageRecord],
    split: SplitSpec,
    vocab: Vocabulary,
    suite: str = "full",
) -> EvalReport:
    """Score a prediction file on one suite, computing all 12 grid cells.

    full: every ground-truth instance on test_seen images; longtail: those
    whose type is long-tail under the split; zeroshot: instances of
    train-absent types on test_zeroshot images.  Unknown prediction labels
    never match and are tallied.
    """
    if suite not in ("full", "longtail", "zeroshot"):
        raise ValueError(f"unknown suite: {suite!r}")

    by_id = {rec.image_id: rec for rec in records}
    if suite == "zeroshot":
        image_ids = sorted(i for i in split.test_zeroshot if i in by_id)
        allowed_types: Optional[set[RelationshipType]] = zero_shot_types(records, split)
    elif suite == "longtail":
        image_ids = sorted(i for i in split.test_seen if i in by_id)
        allowed_types = set(split.longtail_types)
    else:
        image_ids = sorted(i for i in split.test_seen if i in by_id)
        allowed_types = None

    gts_by_image: dict[str, list[GroundTruth]] = {}
    for iid in image_ids:
        gts = ground_truth_from_record(by_id[iid])
        if allowed_types is not None:
            gts = [g for g in gts if g.labels in allowed_types]
        gts_by_image[iid] = gts

    preds_by_image = read_predictions(predictions_path)
    n_unknown = sum(
        1
        for preds in preds_by_image.values()
        for p in preds
        if not _known_labels(p, vocab)
    )
    # keep only predictions for images in this suite
    scoped = {iid: preds_by_image.get(iid, []) for iid in image_ids}
    dropped_images = len(set(preds_by_image) - set(image_ids))

    cells: dict[str, dict[str, dict[str, Optional[float]]]] = {}
    tallies: dict[tuple[str, int, int], MatchTally] = {}
    for task in EvalTask:
        cells[task.value] = {}
        for r in RECALL_BUDGETS:
            cells[task.value][f"R@{r}"] = {}
            for k in TOP_KS:
                tally = _match_images(scoped, gts_by_image, r, k, task)
                tallies[(task.value, r, k)] = tally
                cells[task.value][f"R@{r}"][f"top{k}"] = tally.recall()

    ref = tallies[REFERENCE_CELL]
    per_type = [
        (t, counts[1], (counts[0] / counts[1]) if counts[1] else None)
        for t, counts in sorted(ref.by_type.items())
    ]
    total_gt = ref.total
    return EvalReport(
        suite=suite,
        cells=cells,
        gt_instances=total_gt,
        per_type=per_type,
        diagnostics={
            "unknown_label_predictions": n_unknown,
            "prediction_images_outside_suite": dropped_images,
            "suite_images": len(image_ids),
        },
    )
