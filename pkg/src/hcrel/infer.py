"""Relationship prediction: exact nearest-neighbor retrieval against the web
embedding index, category-constrained candidate ranking, zero-shot search
spaces, and a class-mean cosine baseline.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence, Union

import numpy as np

from .geometry import Detection, pair_candidates
from .metric import MetricModel, embed_dataset, embed_web
from .types import (
    FeatureVector,
    HumanSubtype,
    RelationshipTriplet,
    RelationshipType,
    Vocabulary,
    make_triplet,
)
from .webfilter import WebCorpus

DEFAULT_K = 20


@dataclass
class WebIndex:
    """Read-only search structure over embedded web samples.

    ``class_means`` holds per relationship-type means of the raw
    (unembedded) features for the cosine baseline.
    """

    embeddings: np.ndarray  # (n, embed_dim)
    labels: list[RelationshipType]
    sample_ids: list[str]
    class_means: dict[RelationshipType, np.ndarray]

    def __post_init__(self):
        if len(self.labels) != self.embeddings.shape[0]:
            raise ValueError("one label per embedding row required")
        if len(self.sample_ids) != self.embeddings.shape[0]:
            raise ValueError("one sample id per embedding row required")
        if self.embeddings.size and not np.all(np.isfinite(self.embeddings)):
            raise ValueError("non-finite embeddings in index")

    def __len__(self) -> int:
        return self.embeddings.shape[0]

    @classmethod
    def build(cls, model: MetricModel, corpus: WebCorpus) -> "WebIndex":
        rows = []
        labels: list[RelationshipType] = []
        ids: list[str] = []
        means: dict[RelationshipType, np.ndarray] = {}
        for rel_type in corpus.class_list():
            samples = corpus.classes[rel_type]
            if not samples:
                continue
            raw = np.stack([s.feature.values for s in samples])
            means[rel_type] = raw.mean(axis=0)
            for s in samples:
                rows.append(embed_web(model, s.feature))
                labels.append(rel_type)
                ids.append(s.sample_id)
        embeddings = np.stack(rows) if rows else np.zeros((0, model.wv.shape[0]))
        return cls(embeddings=embeddings, labels=labels, sample_ids=ids, class_means=means)

    def restricted(self, allowed: frozenset[RelationshipType] | set[RelationshipType]) -> "WebIndex":
        """Subset of the index whose labels fall in ``allowed``."""
        keep = [i for i, lab in enumerate(self.labels) if lab in allowed]
        return WebIndex(
            embeddings=self.embeddings[keep],
            labels=[self.labels[i] for i in keep],
            sample_ids=[self.sample_ids[i] for i in keep],
            class_means={t: m for t, m in self.class_means.items() if t in allowed},
        )


@dataclass(frozen=True)
class Neighbor:
    sample_id: str
    label: RelationshipType
    distance: float


@dataclass(frozen=True)
class ScoredTriplet:
    """A predicted triplet with a larger-is-better score."""

    triplet: RelationshipTriplet
    score: float

    def __post_init__(self):
        if not np.isfinite(self.score):
            raise ValueError(f"non-finite triplet score: {self.score}")


def knn_retrieve(query_embedding: np.ndarray, index: WebIndex, k: int = DEFAULT_K) -> list[Neighbor]:
    """Exact k nearest neighbors under Euclidean distance, ties by sample id."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if len(index) == 0:
        raise ValueError("cannot query an empty index")
    q = np.asarray(query_embedding, dtype=np.float64)
    if q.shape != (index.embeddings.shape[1],):
        raise ValueError(
            f"query dimension {q.shape} does not match index dimension "
            f"({index.embeddings.shape[1]},)"
        )
    dists = np.linalg.norm(index.embeddings - q, axis=1)
    order = np.lexsort((np.asarray(index.sample_ids, dtype=object), dists))
    return [
        Neighbor(index.sample_ids[int(i)], index.labels[int(i)], float(dists[int(i)]))
        for i in order[:k]
    ]


def constrain_candidates(
    neighbors: Sequence[Neighbor],
    human_cat: HumanSubtype,
    object_cat: str,
    vocab: Optional[Vocabulary] = None,
    aggregate: str = "distance",
) -> list[tuple[str, float]]:
    """Filter neighbors to the detected pair's categories and rank predicates.

    Each surviving predicate keeps its best (smallest) neighbor distance.
    ``aggregate="distance"`` ranks ascending by that distance;
    ``aggregate="vote"`` ranks by descending neighbor count, ties by best
    distance.  When a vocabulary is supplied, predicates it cannot resolve
    are dropped.
    """
    if aggregate not in ("distance", "vote"):
        raise ValueError(f"unknown aggregation mode: {aggregate!r}")
    best: dict[str, float] = {}
    votes: dict[str, int] = {}
    for nb in neighbors:
        subj, pred, obj = nb.label
        if subj != human_cat.value or obj != object_cat:
            continue
        if vocab is not None and pred not in vocab.predicates:
            continue
        if pred not in best or nb.distance < best[pred]:
            best[pred] = nb.distance
        votes[pred] = votes.get(pred, 0) + 1
    if aggregate == "vote":
        ranked = sorted(best, key=lambda p: (-votes[p], best[p], p))
    else:
        ranked = sorted(best, key=lambda p: (best[p], p))
    return [(p, best[p]) for p in ranked]


def zero_shot_space(
    human_cat: HumanSubtype,
    object_cat: str,
    relationship_universe: Iterable[RelationshipType],
) -> set[RelationshipType]:
    """All universe triples whose subject and object match the detected pair."""
    return {
        t
        for t in relationship_universe
        if t[0] == human_cat.value and t[2] == object_cat
    }


@dataclass
class PredictDiagnostics:
    pairs_total: int = 0
    pairs_missing_feature: int = 0
    pairs_without_candidates: int = 0


def predict_triplets(
    dets: Sequence[Detection],
    pair_features: Mapping[tuple[str, str], FeatureVector],
    model: MetricModel,
    index: WebIndex,
    vocab: Vocabulary,
    top_k: int = 3,
    k: int = DEFAULT_K,
    aggregate: str = "distance",
    universe: Optional[Iterable[RelationshipType]] = None,
) -> tuple[list[ScoredTriplet], PredictDiagnostics]:
    """Predict up to ``top_k`` triplets per human-object pair of one image.

    ``pair_features`` maps (human region id, object region id) to the union
    region's feature vector; pairs without one are skipped and tallied.  With
    ``universe`` set, retrieval for each pair is restricted to the matching
    relationship types (the zero-shot regime); pairs whose restriction is
    empty yield no candidates.  Scores are negated best distances, so within
    a pair they are non-increasing.  Under vote aggregation the score is
    ``votes - d/(1+d)``, which decreases along the vote ranking.
    """
    if top_k < 1:
        raise ValueError(f"top_k must be >= 1, got {top_k}")
    universe_list = list(universe) if universe is not None else None
    diags = PredictDiagnostics()
    out: list[ScoredTriplet] = []
    for human, obj, union in pair_candidates(dets):
        diags.pairs_total += 1
        if human.region_id is None or obj.region_id is None:
            diags.pairs_missing_feature += 1
            continue
        feature = pair_features.get((human.region_id, obj.region_id))
        if feature is None:
            diags.pairs_missing_feature += 1
            continue
        subtype = HumanSubtype(human.category)
        search = index
        if universe_list is not None:
            allowed = zero_shot_space(subtype, obj.category, universe_list)
            search = index.restricted(allowed)
        if len(search) == 0:
            diags.pairs_without_candidates += 1
            continue
        query = embed_dataset(model, feature)
        neighbors = knn_retrieve(query, search, k=k)
        candidates = constrain_candidates(
            neighbors, subtype, obj.category, vocab, aggregate=aggregate
        )
        if not candidates:
            diags.pairs_without_candidates += 1
            continue
        for rank, (pred, dist) in enumerate(candidates[:top_k]):
            if aggregate == "vote":
                n_votes = sum(
                    1
                    for nb in neighbors
                    if nb.label == (subtype.value, pred, obj.category)
                )
                score = n_votes - dist / (1.0 + dist)
            else:
                score = -dist
            out.append(
                ScoredTriplet(
                    triplet=make_triplet(
                        subtype,
                        vocab.predicates.id_of(pred),
                        vocab.objects.id_of(obj.category),
                        human.box,
                        obj.box,
                    ),
                    score=score,
                )
            )
    return out, diags


def classmean_baseline(
    query_raw_feature: FeatureVector,
    index: WebIndex,
    human_cat: HumanSubtype,
    object_cat: str,
    top_k: int = 3,
) -> list[tuple[str, float]]:
    """Rank matching classes by cosine similarity of raw features to their means.

    A zero-norm query or class mean scores that comparison -1.
    """
    if top_k < 1:
        raise ValueError(f"top_k must be >= 1, got {top_k}")
    q = query_raw_feature.values
    q_norm = float(np.linalg.norm(q))
    scored: list[tuple[str, float]] = []
    for rel_type, mean in index.class_means.items():
        subj, pred, obj = rel_type
        if subj != human_cat.value or obj != object_cat:
            continue
        m_norm = float(np.linalg.norm(mean))
        if q_norm == 0.0 or m_norm == 0.0:
            sim = -1.0
        else:
            sim = float(q @ mean / (q_norm * m_norm))
        scored.append((pred, sim))
    scored.sort(key=lambda item: (-item[1], item[0]))
    return scored[:top_k]


def write_predictions(
    path: Union[str, Path],
    items: Iterable[tuple[str, ScoredTriplet]],
    vocab: Vocabulary,
) -> None:
    """Write (image id, scored triplet) pairs as prediction JSON lines."""
    with open(path, "w", encoding="utf-8") as fh:
        for image_id, st in items:
            t = st.triplet
            fh.write(
                json.dumps(
                    {
                        "image_id": image_id,
                        "subject": t.subject.value,
                        "predicate": vocab.predicates.name_of(t.predicate),
                        "object": vocab.objects.name_of(t.object),
                        "subject_box": t.subject_box.as_list(),
                        "object_box": t.object_box.as_list(),
                        "score": st.score,
                    },
                    sort_keys=True,
                )
                + "\n"
            )
