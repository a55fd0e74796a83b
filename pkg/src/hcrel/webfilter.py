"""Weakly-supervised noise filtering of the web corpus: random grouping,
attention pooling over group members, confidence ranking, top-fraction
retention.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence, Union

import numpy as np

from .types import FeatureVector, RelationshipType

DEFAULT_GROUP_SIZE = 4
DEFAULT_KEEP_RATIO = 0.8


@dataclass
class WebSample:
    feature: FeatureVector
    confidence: Optional[float] = None

    @property
    def sample_id(self) -> str:
        return self.feature.sample_id


@dataclass
class WebCorpus:
    """Per relationship-class bags of web feature vectors."""

    classes: dict[RelationshipType, list[WebSample]] = field(default_factory=dict)

    def add(self, cls: RelationshipType, feature: FeatureVector) -> None:
        self.classes.setdefault(cls, []).append(WebSample(feature))

    def n_samples(self) -> int:
        return sum(len(v) for v in self.classes.values())

    def class_list(self) -> list[RelationshipType]:
        return sorted(self.classes)

    def labeled_samples(self) -> list[tuple[FeatureVector, int]]:
        """Samples with dense class ids following the sorted class order."""
        out = []
        for idx, cls in enumerate(self.class_list()):
            out.extend((s.feature, idx) for s in self.classes[cls])
        return out


@dataclass
class FilterModel:
    """Attention vector plus an affine classifier over pooled features."""

    attention: np.ndarray  # (d,)
    weights: np.ndarray  # (n_classes, d)
    bias: np.ndarray  # (n_classes,)

    @classmethod
    def initialize(cls, dim: int, n_classes: int) -> "FilterModel":
        return cls(
            attention=np.zeros(dim),
            weights=np.zeros((n_classes, dim)),
            bias=np.zeros(n_classes),
        )


def random_group(
    class_samples: Sequence[WebSample], group_size: int, seed: int
) -> list[list[WebSample]]:
    """Seeded shuffle then chunk; the remainder forms a short final group."""
    if group_size < 2:
        raise ValueError(f"group size must be >= 2, got {group_size}")
    if not class_samples:
        return []
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(class_samples))
    shuffled = [class_samples[int(i)] for i in order]
    return [shuffled[i : i + group_size] for i in range(0, len(shuffled), group_size)]


def attention_pool(
    group_features: np.ndarray, model: FilterModel
) -> tuple[np.ndarray, np.ndarray]:
    """Softmax-weighted mean of group members.

    Weights are the softmax of the attention projection of each member; they
    are positive and sum to one.
    """
    feats = np.asarray(group_features, dtype=np.float64)
    if feats.ndim != 2 or feats.shape[0] == 0:
        raise ValueError("group must be a non-empty 2-d array")
    logits = feats @ model.attention
    logits -= logits.max()
    exps = np.exp(logits)
    weights = exps / exps.sum()
    return weights @ feats, weights


def _softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max()
    e = np.exp(z)
    return e / e.sum()


def _group_step(
    feats: np.ndarray, label: int, model: FilterModel, lr: float
) -> float:
    """One cross-entropy SGD step on a single group; returns the loss."""
    pooled, att = attention_pool(feats, model)
    probs = _softmax(model.weights @ pooled + model.bias)
    loss = -math.log(max(probs[label], 1e-300))

    dz = probs.copy()
    dz[label] -= 1.0
    grad_w = np.outer(dz, pooled)
    grad_b = dz
    grad_pooled = model.weights.T @ dz
    # through the softmax attention: weights depend on attention logits
    member_align = feats @ grad_pooled  # d pooled / d weight_m direction
    grad_logits = att * (member_align - float(att @ member_align))
    grad_attention = feats.T @ grad_logits

    model.weights -= lr * grad_w
    model.bias -= lr * grad_b
    model.attention -= lr * grad_attention
    return loss


def train_filter(
    corpus: WebCorpus,
    group_size: int = DEFAULT_GROUP_SIZE,
    epochs: int = 30,
    lr: float = 0.05,
    seed: int = 0,
) -> tuple[FilterModel, dict[str, float]]:
    """Train the grouped classifier and score per-sample confidences.

    Groups are redrawn each epoch with a fresh seeded permutation.  Each
    sample's confidence is its attention weight in its group from the final
    epoch, recomputed with the trained model and rescaled by the group's
    actual size, so a member of a uniformly-attended group scores 1.0.  With
    zero epochs a single grouping is drawn and the untrained model scores it.
    """
    class_list = corpus.class_list()
    if len(class_list) < 2:
        raise ValueError("need at least 2 classes to train the noise filter")
    dims = {s.feature.dim for samples in corpus.classes.values() for s in samples}
    if len(dims) != 1:
        raise ValueError(f"inconsistent feature dimensions: {sorted(dims)}")
    dim = dims.pop()

    model = FilterModel.initialize(dim, len(class_list))
    rng = np.random.default_rng(seed)

    def draw_groups() -> list[tuple[list[WebSample], int]]:
        drawn = []
        for label, cls in enumerate(class_list):
            for group in random_group(
                corpus.classes[cls], group_size, int(rng.integers(2**63))
            ):
                drawn.append((group, label))
        return drawn

    grouped: list[tuple[list[WebSample], int]] = []
    for _ in range(epochs):
        grouped = draw_groups()
        order = rng.permutation(len(grouped))
        for k in order:
            group, label = grouped[int(k)]
            feats = np.stack([s.feature.values for s in group])
            _group_step(feats, label, model, lr)
    if not grouped:
        grouped = draw_groups()

    confidences: dict[str, float] = {}
    for group, _ in grouped:
        feats = np.stack([s.feature.values for s in group])
        _, att = attention_pool(feats, model)
        for sample, weight in zip(group, att):
            confidences[sample.sample_id] = float(weight * len(group))

    for samples in corpus.classes.values():
        for s in samples:
            s.confidence = confidences[s.sample_id]
    return model, confidences


def filter_top(corpus: WebCorpus, keep_ratio: float = DEFAULT_KEEP_RATIO) -> WebCorpus:
    """Keep the ceil(keep_ratio * n) most confident samples of each class.

    Ties are broken by sample id.  Confidences must be set.
    """
    if not 0.0 < keep_ratio <= 1.0:
        raise ValueError(f"keep_ratio must be in (0, 1], got {keep_ratio}")
    kept = WebCorpus()
    for cls, samples in corpus.classes.items():
        for s in samples:
            if s.confidence is None:
                raise ValueError(f"sample {s.sample_id} has no confidence")
        n_keep = math.ceil(keep_ratio * len(samples))
        ranked = sorted(samples, key=lambda s: (-s.confidence, s.sample_id))
        kept.classes[cls] = [WebSample(s.feature, s.confidence) for s in ranked[:n_keep]]
    return kept


def write_manifest(
    corpus: WebCorpus, kept: WebCorpus, path: Union[str, Path]
) -> None:
    """Filtered-corpus manifest: one JSON line per sample with its verdict."""
    kept_ids = {
        s.sample_id for samples in kept.classes.values() for s in samples
    }
    with open(path, "w", encoding="utf-8") as fh:
        for cls in corpus.class_list():
            for s in corpus.classes[cls]:
                fh.write(
                    json.dumps(
                        {
                            "class": list(cls),
                            "sample_id": s.sample_id,
                            "confidence": s.confidence,
                            "kept": s.sample_id in kept_ids,
                        },
                        sort_keys=True,
                    )
                    + "\n"
                )


def load_corpus(
    features: Iterable[FeatureVector],
    labels: Mapping[str, RelationshipType],
) -> WebCorpus:
    """Assemble a corpus from a feature stream and a sample-id -> class map."""
    corpus = WebCorpus()
    for fv in features:
        if fv.sample_id not in labels:
            raise KeyError(f"web sample {fv.sample_id} has no class label")
        corpus.add(labels[fv.sample_id], fv)
    return corpus
