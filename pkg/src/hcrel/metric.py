"""Two-branch embedding model and the lifted structured loss over
dataset-web sample pairs, with exact analytic gradients and the mini-batch
training loop.

The dataset branch is two affine layers with a ramp nonlinearity between
them (d -> hidden -> 256); the web branch is a single affine layer
(d -> 256).  Distances are Euclidean between branch outputs.  Positive pairs
always cross dataset -> web.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .types import FeatureVector

EMBED_DIM = 256
DEFAULT_HIDDEN_DIM = 512
DISTANCE_FLOOR = 1e-12


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch: int, batch: int, loss: float):
        super().__init__(f"non-finite loss {loss} at epoch {epoch}, batch {batch}")
        self.epoch = epoch
        self.batch = batch


@dataclass
class MetricModel:
    """Parameters of both embedding branches, float64 throughout."""

    w1: np.ndarray  # (hidden, input)
    b1: np.ndarray  # (hidden,)
    w2: np.ndarray  # (embed, hidden)
    b2: np.ndarray  # (embed,)
    wv: np.ndarray  # (embed, input)  web branch
    bv: np.ndarray  # (embed,)

    @property
    def input_dim(self) -> int:
        return self.w1.shape[1]

    @property
    def hidden_dim(self) -> int:
        return self.w1.shape[0]

    @property
    def embed_dim(self) -> int:
        return self.w2.shape[0]

    @classmethod
    def initialize(
        cls,
        input_dim: int,
        hidden_dim: int = DEFAULT_HIDDEN_DIM,
        embed_dim: int = EMBED_DIM,
        seed: int = 0,
    ) -> "MetricModel":
        """Seeded uniform +-1/sqrt(fan_in) weights, zero biases."""
        rng = np.random.default_rng(seed)

        def uniform(rows: int, cols: int) -> np.ndarray:
            bound = 1.0 / np.sqrt(cols)
            return rng.uniform(-bound, bound, size=(rows, cols))

        return cls(
            w1=uniform(hidden_dim, input_dim),
            b1=np.zeros(hidden_dim),
            w2=uniform(embed_dim, hidden_dim),
            b2=np.zeros(embed_dim),
            wv=uniform(embed_dim, input_dim),
            bv=np.zeros(embed_dim),
        )

    def copy(self) -> "MetricModel":
        return MetricModel(*(p.copy() for p in self.parameters()))

    def parameters(self) -> tuple[np.ndarray, ...]:
        return (self.w1, self.b1, self.w2, self.b2, self.wv, self.bv)


@dataclass
class ModelGradients:
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    wv: np.ndarray
    bv: np.ndarray

    @classmethod
    def zeros_like(cls, model: MetricModel) -> "ModelGradients":
        return cls(*(np.zeros_like(p) for p in model.parameters()))

    def parameters(self) -> tuple[np.ndarray, ...]:
        return (self.w1, self.b1, self.w2, self.b2, self.wv, self.bv)


def _check_dim(model: MetricModel, values: np.ndarray) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    if arr.shape[-1] != model.input_dim:
        raise ValueError(
            f"feature dimension {arr.shape[-1]} does not match model input {model.input_dim}"
        )
    return arr


def embed_dataset(model: MetricModel, features: np.ndarray | FeatureVector) -> np.ndarray:
    """Dataset-branch forward pass; accepts a single vector or a batch."""
    if isinstance(features, FeatureVector):
        features = features.values
    x = _check_dim(model, features)
    hidden = np.maximum(0.0, x @ model.w1.T + model.b1)
    return hidden @ model.w2.T + model.b2


def embed_web(model: MetricModel, features: np.ndarray | FeatureVector) -> np.ndarray:
    """Web-branch forward pass; accepts a single vector or a batch."""
    if isinstance(features, FeatureVector):
        features = features.values
    x = _check_dim(model, features)
    return x @ model.wv.T + model.bv


def pair_distance(e1: np.ndarray, e2: np.ndarray) -> float:
    """Euclidean distance between two embeddings."""
    e1 = np.asarray(e1, dtype=np.float64)
    e2 = np.asarray(e2, dtype=np.float64)
    if e1.shape != e2.shape:
        raise ValueError(f"embedding shape mismatch: {e1.shape} vs {e2.shape}")
    return float(np.linalg.norm(e1 - e2))


@dataclass
class PairBatch:
    """Cross-domain samples plus positive/negative index pairs.

    Pairs always run dataset -> web: ``(i, j)`` pairs dataset sample i with
    web sample j.  Duplicate pairs are collapsed on construction so that a
    batch behaves as a set of pairs.
    """

    dataset_samples: list[tuple[FeatureVector, int]]
    web_samples: list[tuple[FeatureVector, int]]
    positives: list[tuple[int, int]]
    negatives: list[tuple[int, int]]
    margin: float = 1.0

    def __post_init__(self):
        if self.margin <= 0:
            raise ValueError(f"margin must be positive, got {self.margin}")
        self.positives = list(dict.fromkeys(self.positives))
        self.negatives = list(dict.fromkeys(self.negatives))
        for i, j in self.positives:
            if self.dataset_samples[i][1] != self.web_samples[j][1]:
                raise ValueError(f"positive pair ({i},{j}) crosses classes")
        for i, j in self.negatives:
            if self.dataset_samples[i][1] == self.web_samples[j][1]:
                raise ValueError(f"negative pair ({i},{j}) shares a class")


def construct_pairs(
    dataset_samples: Sequence[tuple[FeatureVector, int]],
    web_samples: Sequence[tuple[FeatureVector, int]],
    per_anchor_negatives: int,
    seed: int,
    margin: float = 1.0,
) -> PairBatch:
    """Enumerate all same-class cross pairs as positives and sample negatives.

    Negatives are drawn per dataset anchor from different-class web samples,
    and symmetrically per web sample appearing in a positive pair, without
    replacement within each anchor.
    """
    if not dataset_samples or not web_samples:
        raise ValueError("both dataset and web samples are required")
    rng = np.random.default_rng(seed)

    positives = [
        (i, j)
        for i, (_, ci) in enumerate(dataset_samples)
        for j, (_, cj) in enumerate(web_samples)
        if ci == cj
    ]

    negatives: list[tuple[int, int]] = []
    for i, (_, ci) in enumerate(dataset_samples):
        candidates = [j for j, (_, cj) in enumerate(web_samples) if cj != ci]
        take = min(per_anchor_negatives, len(candidates))
        if take:
            picks = rng.choice(len(candidates), size=take, replace=False)
            negatives.extend((i, candidates[int(p)]) for p in sorted(picks))
    web_positives = sorted({j for _, j in positives})
    for j in web_positives:
        cj = web_samples[j][1]
        candidates = [i for i, (_, ci) in enumerate(dataset_samples) if ci != cj]
        take = min(per_anchor_negatives, len(candidates))
        if take:
            picks = rng.choice(len(candidates), size=take, replace=False)
            negatives.extend((candidates[int(p)], j) for p in sorted(picks))

    return PairBatch(
        dataset_samples=list(dataset_samples),
        web_samples=list(web_samples),
        positives=positives,
        negatives=negatives,
        margin=margin,
    )


def _batch_state(model: MetricModel, batch: PairBatch):
    """Embeddings and per-pair distances shared by loss and gradient."""
    xd = np.stack([fv.values for fv, _ in batch.dataset_samples]).astype(np.float64)
    xw = np.stack([fv.values for fv, _ in batch.web_samples]).astype(np.float64)
    pre_hidden = _check_dim(model, xd) @ model.w1.T + model.b1
    hidden = np.maximum(0.0, pre_hidden)
    e = hidden @ model.w2.T + model.b2
    g = _check_dim(model, xw) @ model.wv.T + model.bv

    def dist(i: int, j: int) -> float:
        return float(np.linalg.norm(e[i] - g[j]))

    d_pos = {p: dist(*p) for p in batch.positives}
    d_neg = {n: dist(*n) for n in batch.negatives}

    neg_by_dataset: dict[int, list[tuple[int, int]]] = {}
    neg_by_web: dict[int, list[tuple[int, int]]] = {}
    for pair in batch.negatives:
        neg_by_dataset.setdefault(pair[0], []).append(pair)
        neg_by_web.setdefault(pair[1], []).append(pair)

    return xd, xw, pre_hidden, hidden, e, g, d_pos, d_neg, neg_by_dataset, neg_by_web


def _pair_terms(batch, d_pos, d_neg, neg_by_dataset, neg_by_web):
    """Per positive pair: hinge argument L_ij and softmax weights over its
    incident negatives, computed with a max shift for stability."""
    out = []
    for (i, j), dij in d_pos.items():
        incident = neg_by_dataset.get(i, []) + neg_by_web.get(j, [])
        if not incident:
            out.append(((i, j), dij, dij, {}))
            continue
        logits = np.array([batch.margin - d_neg[n] for n in incident])
        m = logits.max()
        exps = np.exp(logits - m)
        total = exps.sum()
        lij = (m + np.log(total)) + dij
        weights = {n: float(w) for n, w in zip(incident, exps / total)}
        out.append(((i, j), lij, dij, weights))
    return out


def lifted_loss(model: MetricModel, batch: PairBatch) -> float:
    """Mean squared hinge over positive pairs, halved.

    Each positive pair (i, j) contributes max(0, L_ij)^2 where L_ij adds the
    positive distance to the log-sum-exp of margin minus distance over the
    negatives incident to either endpoint.  A positive pair with no incident
    negatives contributes max(0, D_ij)^2.
    """
    if not batch.positives:
        raise ValueError("no positive pairs")
    _, _, _, _, _, _, d_pos, d_neg, nbd, nbw = _batch_state(model, batch)
    terms = _pair_terms(batch, d_pos, d_neg, nbd, nbw)
    total = sum(max(0.0, lij) ** 2 for _, lij, _, _ in terms)
    return total / (2.0 * len(batch.positives))


def lifted_loss_gradient(
    model: MetricModel, batch: PairBatch
) -> tuple[float, ModelGradients]:
    """Loss value and exact parameter gradients via the chain rule.

    Hinge-inactive pairs contribute nothing.  Distances are floored at
    ``DISTANCE_FLOOR`` before dividing in the unit-difference vectors.
    """
    if not batch.positives:
        raise ValueError("no positive pairs")
    xd, xw, pre_hidden, hidden, e, g, d_pos, d_neg, nbd, nbw = _batch_state(model, batch)
    terms = _pair_terms(batch, d_pos, d_neg, nbd, nbw)

    n_pos = len(batch.positives)
    grad_e = np.zeros_like(e)
    grad_g = np.zeros_like(g)
    loss = 0.0

    def unit(i: int, j: int, dist: float) -> np.ndarray:
        return (e[i] - g[j]) / max(dist, DISTANCE_FLOOR)

    for (i, j), lij, dij, neg_weights in terms:
        hinge = max(0.0, lij)
        loss += hinge * hinge
        if hinge == 0.0:
            continue
        coeff = hinge / n_pos  # d loss / d L_ij
        u = unit(i, j, dij)
        grad_e[i] += coeff * u
        grad_g[j] -= coeff * u
        for (a, b), w in neg_weights.items():
            # d L_ij / d D_ab = -softmax weight of that negative
            un = unit(a, b, d_neg[(a, b)])
            grad_e[a] -= coeff * w * un
            grad_g[b] += coeff * w * un
    loss /= 2.0 * n_pos

    grads = ModelGradients.zeros_like(model)
    # dataset branch: e = relu(x W1^T + b1) W2^T + b2
    grads.w2 += grad_e.T @ hidden
    grads.b2 += grad_e.sum(axis=0)
    grad_hidden = (grad_e @ model.w2) * (pre_hidden > 0.0)
    grads.w1 += grad_hidden.T @ xd
    grads.b1 += grad_hidden.sum(axis=0)
    # web branch: g = x Wv^T + bv
    grads.wv += grad_g.T @ xw
    grads.bv += grad_g.sum(axis=0)
    return loss, grads


@dataclass
class TrainConfig:
    learning_rate: float = 1e-4
    decay_factor: float = 10.0
    decay_every: int = 5
    epochs: int = 30
    batch_size: int = 32
    seed: int = 0
    margin: float = 1.0
    per_anchor_negatives: int = 2

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.decay_every < 1:
            raise ValueError("decay_every must be >= 1")

    def lr_at(self, epoch: int) -> float:
        return self.learning_rate / self.decay_factor ** (epoch // self.decay_every)


def train(
    model_init: MetricModel,
    train_samples: Sequence[tuple[FeatureVector, int]],
    web_samples: Sequence[tuple[FeatureVector, int]],
    config: TrainConfig,
) -> tuple[MetricModel, list[tuple[int, float]]]:
    """Seeded mini-batch gradient descent with a stepped lr schedule.

    Each mini-batch pairs a chunk of dataset samples with one same-class web
    sample per anchor plus sampled different-class web negatives; batches
    with no positive pair are skipped.  Single-threaded and bitwise
    reproducible for a fixed seed.  Returns the trained model and the
    per-epoch mean loss curve.
    """
    model = model_init.copy()
    if config.epochs == 0:
        return model, []

    rng = np.random.default_rng(config.seed)
    web_by_class: dict[int, list[int]] = {}
    for j, (_, c) in enumerate(web_samples):
        web_by_class.setdefault(c, []).append(j)

    curve: list[tuple[int, float]] = []
    n = len(train_samples)
    for epoch in range(config.epochs):
        lr = config.lr_at(epoch)
        order = rng.permutation(n)
        losses = []
        for batch_no, start in enumerate(range(0, n, config.batch_size)):
            chunk = [train_samples[int(k)] for k in order[start : start + config.batch_size]]
            web_ids: list[int] = []
            for _, c in chunk:
                same = web_by_class.get(c, [])
                if same:
                    web_ids.append(int(same[rng.integers(len(same))]))
                others = [j for cls, js in web_by_class.items() if cls != c for j in js]
                if others:
                    take = min(config.per_anchor_negatives, len(others))
                    picks = rng.choice(len(others), size=take, replace=False)
                    web_ids.extend(others[int(p)] for p in picks)
            web_ids = sorted(set(web_ids))
            if not web_ids:
                continue
            chunk_classes = {c for _, c in chunk}
            if not any(web_samples[j][1] in chunk_classes for j in web_ids):
                continue
            batch = construct_pairs(
                chunk,
                [web_samples[j] for j in web_ids],
                per_anchor_negatives=config.per_anchor_negatives,
                seed=int(rng.integers(2**63)),
                margin=config.margin,
            )
            if not batch.positives:
                continue
            loss, grads = lifted_loss_gradient(model, batch)
            if not np.isfinite(loss):
                raise TrainingDiverged(epoch, batch_no, loss)
            for param, grad in zip(model.parameters(), grads.parameters()):
                param -= lr * grad
            losses.append(loss)
        curve.append((epoch, float(np.mean(losses)) if losses else 0.0))
    return model, curve


def save_loss_curve(curve: Sequence[tuple[int, float]], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("epoch,mean_loss\n")
        for epoch, loss in curve:
            fh.write(f"{epoch},{loss!r}\n")
