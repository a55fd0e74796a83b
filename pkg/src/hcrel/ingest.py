"""Dataset construction: annotation parsing, predicate normalization, object
merging over word vectors, human subtyping, split construction, statistics.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Mapping, Optional, Sequence, Union

import numpy as np

from .types import (
    SUBTYPE_NAMES,
    BoundingBox,
    HumanSubtype,
    ImageRecord,
    Region,
    RelationshipAnnotation,
    RelationshipType,
    VocabIndex,
    Vocabulary,
    resolve_vocabulary,
)

logger = logging.getLogger(__name__)

DEFAULT_BLOCKLIST = frozenset({"has", "is", "are"})
DEFAULT_MERGE_THRESHOLD = 0.9
LONGTAIL_MAX_COUNT = 9  # types with train count in [1, 9] form the long tail

_NOISE_CHARS = re.compile(r"[,.;:!?\"'`()\[\]{}]")
_WS = re.compile(r"\s+")


class AnnotationError(ValueError):
    """Raised for malformed annotation input; carries the offending line."""

    def __init__(self, path, line_no: int, message: str):
        super().__init__(f"{path}:{line_no}: {message}")
        self.path = path
        self.line_no = line_no


# ---------------------------------------------------------------------------
# parsing

def _parse_record(obj: dict, path, line_no: int) -> ImageRecord:
    try:
        image_id = str(obj["image_id"])
        width = int(obj["width"])
        height = int(obj["height"])
        raw_regions = obj["regions"]
        raw_rels = obj.get("relationships", [])
    except (KeyError, TypeError, ValueError) as exc:
        raise AnnotationError(path, line_no, f"bad record structure: {exc}") from exc

    regions = []
    for r in raw_regions:
        try:
            regions.append(
                Region(
                    region_id=str(r["id"]),
                    category=str(r["category"]),
                    box=BoundingBox.from_list(r["bbox"]),
                    score=float(r.get("score", 1.0)),
                )
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise AnnotationError(path, line_no, f"bad region: {exc}") from exc

    known = {r.region_id for r in regions}
    if len(known) != len(regions):
        raise AnnotationError(path, line_no, f"duplicate region ids in image {image_id}")

    rels = []
    for rel in raw_rels:
        try:
            ann = RelationshipAnnotation(
                subject_region=str(rel["subject"]),
                predicate=str(rel["predicate"]),
                object_region=str(rel["object"]),
            )
        except (KeyError, TypeError) as exc:
            raise AnnotationError(path, line_no, f"bad relationship: {exc}") from exc
        for rid in (ann.subject_region, ann.object_region):
            if rid not in known:
                raise AnnotationError(
                    path, line_no, f"relationship references missing region {rid!r}"
                )
        rels.append(ann)

    return ImageRecord(
        image_id=image_id,
        width=width,
        height=height,
        regions=tuple(regions),
        relationships=tuple(rels),
    )


def parse_annotations(path: Union[str, Path]) -> Iterator[ImageRecord]:
    """Stream validated image records from a JSON-lines annotation file."""
    path = Path(path)
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise AnnotationError(path, line_no, f"invalid JSON: {exc.msg}") from exc
            yield _parse_record(obj, path, line_no)


def write_annotations(records: Iterable[ImageRecord], path: Union[str, Path]) -> int:
    n = 0
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            obj = {
                "image_id": rec.image_id,
                "width": rec.width,
                "height": rec.height,
                "regions": [
                    {
                        "id": r.region_id,
                        "category": r.category,
                        "bbox": r.box.as_list(),
                        "score": r.score,
                    }
                    for r in rec.regions
                ],
                "relationships": [
                    {"subject": a.subject_region, "predicate": a.predicate, "object": a.object_region}
                    for a in rec.relationships
                ],
            }
            fh.write(json.dumps(obj, sort_keys=True) + "\n")
            n += 1
    return n


# ---------------------------------------------------------------------------
# normalization

def load_lemma_table(path: Union[str, Path]) -> dict[str, str]:
    """Load an inflection table and resolve chains so values are fixpoints."""
    raw = json.loads(Path(path).read_text(encoding="utf-8"))
    return resolve_lemma_chains({str(k): str(v) for k, v in raw.items()})


def resolve_lemma_chains(table: Mapping[str, str]) -> dict[str, str]:
    resolved = {}
    for key in table:
        seen = {key}
        value = table[key]
        while value in table and table[value] != value:
            value = table[value]
            if value in seen:
                raise ValueError(f"lemma table cycle involving {key!r}")
            seen.add(value)
        resolved[key] = value
    return resolved


def normalize_predicate(
    raw: str,
    lemma_table: Optional[Mapping[str, str]] = None,
    blocklist: frozenset[str] = DEFAULT_BLOCKLIST,
) -> Optional[str]:
    """Canonicalize a raw predicate string; ``None`` means discarded.

    Lowercases, trims, strips punctuation noise, and maps each token through
    the lemma table (values must be fixpoints, see
    :func:`resolve_lemma_chains`).  Attribute predicates in the blocklist and
    empty results are discarded.
    """
    text = _NOISE_CHARS.sub(" ", raw.lower())
    text = _WS.sub(" ", text).strip()
    if lemma_table:
        text = " ".join(lemma_table.get(tok, tok) for tok in text.split(" ") if tok)
    if not text or text in blocklist:
        return None
    return text


def classify_human(
    subject_label: str,
    subtype_table: Optional[Mapping[str, str]] = None,
) -> Optional[HumanSubtype]:
    """Map a raw subject label to one of the four subtypes, or None if non-human.

    The four canonical names always resolve to themselves; the table extends
    the mapping with dataset-specific labels ("guy", "lady", ...).  A table
    value outside the four subtype names marks the label as non-human.
    """
    label = subject_label.strip().lower()
    if subtype_table and label in subtype_table:
        mapped = subtype_table[label].strip().lower()
        return HumanSubtype(mapped) if mapped in SUBTYPE_NAMES else None
    if label in SUBTYPE_NAMES:
        return HumanSubtype(label)
    return None


# ---------------------------------------------------------------------------
# object merging over word vectors

class WordVectorTable:
    """Token to vector map with uniform dimension."""

    def __init__(self, vectors: Mapping[str, np.ndarray]):
        dims = {np.asarray(v).shape[-1] for v in vectors.values()}
        if len(dims) > 1:
            raise ValueError(f"inconsistent word-vector dimensions: {sorted(dims)}")
        self._vectors = {k: np.asarray(v, dtype=np.float64) for k, v in vectors.items()}
        self.dim = dims.pop() if dims else 0

    def __contains__(self, token: str) -> bool:
        return token in self._vectors

    def __len__(self) -> int:
        return len(self._vectors)

    def get(self, token: str) -> Optional[np.ndarray]:
        return self._vectors.get(token)

    def embed_name(self, name: str) -> Optional[np.ndarray]:
        """Mean of token vectors; unknown tokens skipped; None if none known."""
        vecs = [self._vectors[t] for t in name.split() if t in self._vectors]
        if not vecs:
            return None
        return np.mean(vecs, axis=0)

    @classmethod
    def load(cls, path: Union[str, Path]) -> "WordVectorTable":
        vectors = {}
        with open(path, encoding="utf-8") as fh:
            for line_no, line in enumerate(fh, 1):
                parts = line.rstrip("\n").split(" ")
                if len(parts) < 2:
                    continue
                try:
                    vectors[parts[0]] = np.array([float(x) for x in parts[1:]], dtype=np.float64)
                except ValueError as exc:
                    raise ValueError(f"{path}:{line_no}: bad vector entry") from exc
        return cls(vectors)


def _cosine(a: np.ndarray, b: np.ndarray) -> float:
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        return -1.0
    return float(np.dot(a, b) / (na * nb))


def merge_objects(
    counts: Mapping[str, int],
    vectors: WordVectorTable,
    threshold: float = DEFAULT_MERGE_THRESHOLD,
) -> dict[str, str]:
    """Single-link clustering of object names with cosine similarity >= threshold.

    Returns an idempotent map name -> canonical name, where the canonical
    member of each cluster is the most frequent one (ties by name).  Names
    with no known tokens are left unmerged with a warning.
    """
    names = sorted(counts)
    embedded: dict[str, np.ndarray] = {}
    for name in names:
        vec = vectors.embed_name(name)
        if vec is None:
            logger.warning("no word vectors for object %r; left unmerged", name)
        else:
            embedded[name] = vec

    parent = {name: name for name in names}

    def find(n: str) -> str:
        while parent[n] != n:
            parent[n] = parent[parent[n]]
            n = parent[n]
        return n

    embeddable = [n for n in names if n in embedded]
    for i, a in enumerate(embeddable):
        for b in embeddable[i + 1 :]:
            if _cosine(embedded[a], embedded[b]) >= threshold:
                ra, rb = find(a), find(b)
                if ra != rb:
                    parent[rb] = ra

    clusters: dict[str, list[str]] = {}
    for name in names:
        clusters.setdefault(find(name), []).append(name)

    merge_map = {}
    for members in clusters.values():
        canonical = min(members, key=lambda n: (-counts[n], n))
        for m in members:
            merge_map[m] = canonical
    return merge_map


# ---------------------------------------------------------------------------
# full canonicalization pass

@dataclass
class IngestSummary:
    n_images: int = 0
    n_relationships_kept: int = 0
    n_dropped_predicates: int = 0
    n_dropped_nonhuman_subjects: int = 0
    n_unmerged_objects: int = 0


def canonicalize_records(
    records: Iterable[ImageRecord],
    lemma_table: Optional[Mapping[str, str]] = None,
    blocklist: frozenset[str] = DEFAULT_BLOCKLIST,
    subtype_table: Optional[Mapping[str, str]] = None,
    merge_map: Optional[Mapping[str, str]] = None,
) -> tuple[list[ImageRecord], IngestSummary]:
    """Apply predicate normalization, human subtyping, and object merging.

    Relationships whose predicate is discarded or whose subject is not a
    human subtype are dropped; region categories are rewritten to canonical
    names (subject regions to subtype names).
    """
    merge_map = merge_map or {}
    summary = IngestSummary()
    out = []
    for rec in records:
        summary.n_images += 1
        categories: dict[str, str] = {}
        for region in rec.regions:
            label = region.category.strip().lower()
            subtype = classify_human(label, subtype_table)
            if subtype is not None:
                categories[region.region_id] = subtype.value
            else:
                categories[region.region_id] = merge_map.get(label, label)

        rels = []
        for rel in rec.relationships:
            if categories[rel.subject_region] not in SUBTYPE_NAMES:
                summary.n_dropped_nonhuman_subjects += 1
                continue
            predicate = normalize_predicate(rel.predicate, lemma_table, blocklist)
            if predicate is None:
                summary.n_dropped_predicates += 1
                continue
            rels.append(
                RelationshipAnnotation(rel.subject_region, predicate, rel.object_region)
            )
        summary.n_relationships_kept += len(rels)

        out.append(
            ImageRecord(
                image_id=rec.image_id,
                width=rec.width,
                height=rec.height,
                regions=tuple(
                    Region(r.region_id, categories[r.region_id], r.box, r.score)
                    for r in rec.regions
                ),
                relationships=tuple(rels),
            )
        )
    return out, summary


def build_vocabulary(records: Sequence[ImageRecord]) -> Vocabulary:
    """Collect predicate/object indices and triple counts from canonical records."""
    predicates = set()
    objects = set()
    type_counts: dict[RelationshipType, int] = {}
    for rec in records:
        categories = {r.region_id: r.category for r in rec.regions}
        for rel in rec.relationships:
            subj = categories[rel.subject_region]
            obj = categories[rel.object_region]
            predicates.add(rel.predicate)
            objects.add(obj)
            key = (subj, rel.predicate, obj)
            type_counts[key] = type_counts.get(key, 0) + 1
    return Vocabulary(
        predicates=resolve_vocabulary(predicates) if predicates else VocabIndex([]),
        objects=resolve_vocabulary(objects) if objects else VocabIndex([]),
        relationship_types=type_counts,
    )


# ---------------------------------------------------------------------------
# splits

class SplitError(ValueError):
    pass


@dataclass(frozen=True)
class SplitSpec:
    train: frozenset[str]
    test_seen: frozenset[str]
    test_zeroshot: frozenset[str]
    longtail_types: frozenset[RelationshipType]

    def save(self, path: Union[str, Path]) -> None:
        obj = {
            "train": sorted(self.train),
            "test_seen": sorted(self.test_seen),
            "test_zeroshot": sorted(self.test_zeroshot),
            "longtail_types": sorted(list(t) for t in self.longtail_types),
        }
        Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: Union[str, Path]) -> "SplitSpec":
        obj = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(
            train=frozenset(obj["train"]),
            test_seen=frozenset(obj["test_seen"]),
            test_zeroshot=frozenset(obj["test_zeroshot"]),
            longtail_types=frozenset(tuple(t) for t in obj["longtail_types"]),
        )


def _count_types(
    records: Mapping[str, ImageRecord], image_ids: Iterable[str]
) -> dict[RelationshipType, int]:
    counts: dict[RelationshipType, int] = {}
    for iid in image_ids:
        for t in records[iid].relationship_types():
            counts[t] = counts.get(t, 0) + 1
    return counts


def build_splits(
    records: Sequence[ImageRecord],
    train_size: int,
    test_seen_size: int,
    seed: int,
) -> tuple[SplitSpec, list[tuple[str, str]]]:
    """Seeded random split with a repair pass.

    Every relationship type occurring in a test_seen image must occur in
    train; offending test_seen images are moved to the zero-shot side and
    replaced from the unassigned pool when a compatible image exists.  All
    unassigned images carrying at least one train-absent type end up in
    test_zeroshot.  Returns the split plus the list of repair moves as
    (image_id, destination) pairs.
    """
    if not records:
        raise SplitError("empty dataset")
    if train_size + test_seen_size > len(records):
        raise SplitError(
            f"train_size + test_seen_size = {train_size + test_seen_size} "
            f"exceeds {len(records)} images"
        )

    by_id = {rec.image_id: rec for rec in records}
    if len(by_id) != len(records):
        raise SplitError("duplicate image ids")

    rng = np.random.default_rng(seed)
    order = sorted(by_id)
    rng.shuffle(order)

    train = set(order[:train_size])
    test_seen = set(order[train_size : train_size + test_seen_size])
    pool = list(order[train_size + test_seen_size :])

    train_counts = _count_types(by_id, train)
    moves: list[tuple[str, str]] = []

    def all_seen(image_id: str) -> bool:
        return all(train_counts.get(t, 0) > 0 for t in set(by_id[image_id].relationship_types()))

    # Repair: evict test_seen images with train-absent types, backfill from pool.
    changed = True
    while changed:
        changed = False
        for iid in sorted(test_seen):
            if all_seen(iid):
                continue
            test_seen.discard(iid)
            pool.append(iid)
            moves.append((iid, "test_zeroshot"))
            changed = True
            for candidate in list(pool):
                if candidate not in test_seen and all_seen(candidate):
                    pool.remove(candidate)
                    test_seen.add(candidate)
                    moves.append((candidate, "test_seen"))
                    break

    test_zeroshot = {iid for iid in pool if iid not in test_seen and not all_seen(iid)}

    longtail = frozenset(t for t, c in train_counts.items() if 1 <= c <= LONGTAIL_MAX_COUNT)
    split = SplitSpec(
        train=frozenset(train),
        test_seen=frozenset(test_seen),
        test_zeroshot=frozenset(test_zeroshot),
        longtail_types=longtail,
    )
    return split, moves


def zero_shot_types(
    records: Sequence[ImageRecord], split: SplitSpec
) -> set[RelationshipType]:
    """Types present in zero-shot images but absent from train."""
    by_id = {rec.image_id: rec for rec in records}
    train_counts = _count_types(by_id, (i for i in split.train if i in by_id))
    out = set()
    for iid in split.test_zeroshot:
        if iid not in by_id:
            continue
        for t in by_id[iid].relationship_types():
            if train_counts.get(t, 0) == 0:
                out.add(t)
    return out


# ---------------------------------------------------------------------------
# statistics

@dataclass
class DatasetStats:
    n_images: int
    n_instances: int
    n_relationship_types: int
    n_zeroshot_types: int
    n_longtail_types: int
    n_predicates: int
    n_objects: int
    instances_per_image_mean: float
    relationships_per_person_mean: float
    predicates_per_object_mean: float
    type_frequency_histogram: list[tuple[RelationshipType, int]]
    human_subtype_distribution: dict[str, int]

    def to_json_dict(self) -> dict:
        d = {
            "n_images": self.n_images,
            "n_instances": self.n_instances,
            "n_relationship_types": self.n_relationship_types,
            "n_zeroshot_types": self.n_zeroshot_types,
            "n_longtail_types": self.n_longtail_types,
            "n_predicates": self.n_predicates,
            "n_objects": self.n_objects,
            "instances_per_image_mean": self.instances_per_image_mean,
            "relationships_per_person_mean": self.relationships_per_person_mean,
            "predicates_per_object_mean": self.predicates_per_object_mean,
            "type_frequency_histogram": [
                [list(t), c] for t, c in self.type_frequency_histogram
            ],
            "human_subtype_distribution": dict(sorted(self.human_subtype_distribution.items())),
        }
        return d


def compute_stats(
    records: Sequence[ImageRecord],
    split: Optional[SplitSpec] = None,
    longtail_global: bool = False,
) -> DatasetStats:
    """Direct-count statistics over canonical records.

    Seen / zero-shot type counts are relative to the split's train set; with
    no split every type counts as seen.  ``longtail_global`` counts the long
    tail on global rather than train frequencies.
    """
    by_id = {rec.image_id: rec for rec in records}
    global_counts: dict[RelationshipType, int] = {}
    person_rel_counts: dict[tuple[str, str], int] = {}
    subtype_dist: dict[str, int] = {}
    pred_by_object: dict[str, set[str]] = {}
    predicates = set()
    n_instances = 0

    for rec in records:
        categories = {r.region_id: r.category for r in rec.regions}
        for region in rec.regions:
            if region.category in SUBTYPE_NAMES:
                subtype_dist[region.category] = subtype_dist.get(region.category, 0) + 1
                person_rel_counts.setdefault((rec.image_id, region.region_id), 0)
        for rel in rec.relationships:
            t = (categories[rel.subject_region], rel.predicate, categories[rel.object_region])
            global_counts[t] = global_counts.get(t, 0) + 1
            n_instances += 1
            predicates.add(rel.predicate)
            pred_by_object.setdefault(t[2], set()).add(rel.predicate)
            key = (rec.image_id, rel.subject_region)
            person_rel_counts[key] = person_rel_counts.get(key, 0) + 1

    if split is not None:
        train_counts = _count_types(by_id, (i for i in split.train if i in by_id))
    else:
        train_counts = dict(global_counts)

    n_seen = sum(1 for t in global_counts if train_counts.get(t, 0) > 0)
    n_zeroshot = len(global_counts) - n_seen
    longtail_counts = global_counts if longtail_global else train_counts
    n_longtail = sum(1 for c in longtail_counts.values() if 1 <= c <= LONGTAIL_MAX_COUNT)

    histogram = sorted(global_counts.items(), key=lambda kv: (-kv[1], kv[0]))
    objects = set(pred_by_object)

    n_images = len(records)
    n_persons = len(person_rel_counts)
    return DatasetStats(
        n_images=n_images,
        n_instances=n_instances,
        n_relationship_types=n_seen,
        n_zeroshot_types=n_zeroshot,
        n_longtail_types=n_longtail,
        n_predicates=len(predicates),
        n_objects=len(objects),
        instances_per_image_mean=n_instances / n_images if n_images else 0.0,
        relationships_per_person_mean=(
            sum(person_rel_counts.values()) / n_persons if n_persons else 0.0
        ),
        predicates_per_object_mean=(
            sum(len(s) for s in pred_by_object.values()) / len(objects) if objects else 0.0
        ),
        type_frequency_histogram=histogram,
        human_subtype_distribution=subtype_dist,
    )
