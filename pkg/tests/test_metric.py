"""Embedding branches, pairwise hinge loss, analytic gradients, training loop.

The loss is validated two independent ways: a case small enough to solve by
hand, and a literal unoptimized transcription of the objective (oracles.py).
Gradients are validated against central finite differences of the production
loss, so a loss bug cannot hide a matching gradient bug or vice versa.
"""

import math

import numpy as np
import pytest

from oracles import (
    fd_gradients,
    make_random_batch,
    max_relative_error,
    oracle_embed_dataset,
    oracle_embed_web,
    oracle_lifted_loss,
)

from hcrel.metric import (
    MetricModel,
    PairBatch,
    TrainConfig,
    TrainingDiverged,
    construct_pairs,
    embed_dataset,
    embed_web,
    lifted_loss,
    lifted_loss_gradient,
    pair_distance,
    save_loss_curve,
    train,
)
from hcrel.types import FeatureVector


def identity_model(dim):
    """Both branches pass nonnegative input straight through."""
    eye = np.eye(dim)
    zero = np.zeros(dim)
    return MetricModel(
        w1=eye.copy(), b1=zero.copy(),
        w2=eye.copy(), b2=zero.copy(),
        wv=eye.copy(), bv=zero.copy(),
    )


def fv(name, *values):
    return FeatureVector(name, np.array(values, dtype=np.float64))


# ---------------------------------------------------------------------------
# forward pass
# ---------------------------------------------------------------------------


class TestEmbedding:
    def test_zero_model_zero_output(self):
        model = MetricModel(
            w1=np.zeros((4, 3)), b1=np.zeros(4),
            w2=np.zeros((2, 4)), b2=np.zeros(2),
            wv=np.zeros((2, 3)), bv=np.zeros(2),
        )
        x = np.array([1.0, 2.0, 3.0])
        assert np.all(embed_dataset(model, x) == 0.0)
        assert np.all(embed_web(model, x) == 0.0)

    def test_identity_passthrough_nonnegative(self):
        model = identity_model(4)
        x = np.array([0.5, 0.0, 2.0, 1.5])
        np.testing.assert_array_equal(embed_dataset(model, x), x)
        np.testing.assert_array_equal(embed_web(model, x), x)

    def test_ramp_clips_negative_hidden(self):
        model = identity_model(2)
        x = np.array([-1.0, 3.0])
        np.testing.assert_array_equal(embed_dataset(model, x), [0.0, 3.0])
        # the web branch has no nonlinearity
        np.testing.assert_array_equal(embed_web(model, x), x)

    def test_matches_independent_forward(self):
        rng = np.random.default_rng(21)
        model = MetricModel.initialize(input_dim=8, hidden_dim=6, embed_dim=4, seed=3)
        for _ in range(25):
            x = rng.normal(size=8)
            np.testing.assert_allclose(
                embed_dataset(model, x), oracle_embed_dataset(model, x), atol=1e-12
            )
            np.testing.assert_allclose(
                embed_web(model, x), oracle_embed_web(model, x), atol=1e-12
            )

    def test_dimension_mismatch(self):
        model = MetricModel.initialize(input_dim=8, hidden_dim=6, embed_dim=4)
        with pytest.raises(ValueError, match="dimension"):
            embed_dataset(model, np.zeros(5))
        with pytest.raises(ValueError, match="dimension"):
            embed_web(model, np.zeros(5))

    def test_accepts_feature_vector(self):
        model = identity_model(3)
        f = fv("s", 1.0, 2.0, 3.0)
        np.testing.assert_array_equal(embed_dataset(model, f), f.values)

    def test_initialize_is_seeded(self):
        a = MetricModel.initialize(8, 6, 4, seed=5)
        b = MetricModel.initialize(8, 6, 4, seed=5)
        c = MetricModel.initialize(8, 6, 4, seed=6)
        for pa, pb in zip(a.parameters(), b.parameters()):
            np.testing.assert_array_equal(pa, pb)
        assert any(np.any(pa != pc) for pa, pc in zip(a.parameters(), c.parameters()))

    def test_initialize_bounds_and_zero_bias(self):
        m = MetricModel.initialize(16, 10, 4, seed=0)
        assert np.all(np.abs(m.w1) <= 1.0 / math.sqrt(16))
        assert np.all(np.abs(m.w2) <= 1.0 / math.sqrt(10))
        assert np.all(m.b1 == 0.0) and np.all(m.b2 == 0.0) and np.all(m.bv == 0.0)


class TestPairDistance:
    def test_zero_for_equal(self):
        e = np.array([1.0, 2.0])
        assert pair_distance(e, e) == 0.0

    def test_three_four_five(self):
        assert pair_distance(np.array([0.0, 0.0]), np.array([3.0, 4.0])) == 5.0

    def test_matches_componentwise_sum(self):
        rng = np.random.default_rng(2)
        e1, e2 = rng.normal(size=256), rng.normal(size=256)
        expected = math.sqrt(sum((a - b) ** 2 for a, b in zip(e1, e2)))
        assert pair_distance(e1, e2) == pytest.approx(expected, rel=1e-12)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            pair_distance(np.zeros(3), np.zeros(4))


# ---------------------------------------------------------------------------
# loss
# ---------------------------------------------------------------------------


def batch_from_points(dataset_pts, web_pts, positives, negatives, margin=1.0):
    """Batch whose embeddings equal the given points under identity_model."""
    ds = [(fv(f"d{i}", *p), c) for i, (p, c) in enumerate(dataset_pts)]
    ws = [(fv(f"w{j}", *p), c) for j, (p, c) in enumerate(web_pts)]
    return PairBatch(ds, ws, positives, negatives, margin=margin)


class TestLiftedLoss:
    def test_hand_case(self):
        # one positive at distance 0.5 with a single incident negative at 0.8:
        # inner term log(e^{1-0.8}) = 0.2, hinge argument 0.7, loss 0.49/2
        model = identity_model(2)
        batch = batch_from_points(
            dataset_pts=[((0.0, 0.0), 0)],
            web_pts=[((0.5, 0.0), 0), ((0.8, 0.0), 1)],
            positives=[(0, 0)],
            negatives=[(0, 1)],
        )
        assert lifted_loss(model, batch) == pytest.approx(0.245, abs=1e-12)

    def test_far_negatives_zero_loss(self):
        # positive pair at distance 0, all negatives far beyond the margin
        model = identity_model(2)
        batch = batch_from_points(
            dataset_pts=[((1.0, 1.0), 0)],
            web_pts=[((1.0, 1.0), 0), ((500.0, 0.0), 1)],
            positives=[(0, 0)],
            negatives=[(0, 1)],
        )
        assert lifted_loss(model, batch) == 0.0

    def test_no_incident_negatives_falls_back_to_distance(self):
        model = identity_model(2)
        batch = batch_from_points(
            dataset_pts=[((0.0, 0.0), 0)],
            web_pts=[((0.7, 0.0), 0)],
            positives=[(0, 0)],
            negatives=[],
        )
        assert lifted_loss(model, batch) == pytest.approx(0.7**2 / 2.0, abs=1e-12)

    def test_empty_positives_rejected(self):
        model = identity_model(2)
        batch = batch_from_points(
            dataset_pts=[((0.0, 0.0), 0)],
            web_pts=[((1.0, 1.0), 1)],
            positives=[],
            negatives=[(0, 0)],
        )
        with pytest.raises(ValueError, match="no positive pairs"):
            lifted_loss(model, batch)

    def test_matches_transcription_oracle(self):
        rng = np.random.default_rng(99)
        model = MetricModel.initialize(input_dim=8, hidden_dim=6, embed_dim=4, seed=1)
        for _ in range(50):
            batch = make_random_batch(rng, dim=8, n_dataset=3, n_web=3)
            got = lifted_loss(model, batch)
            want = oracle_lifted_loss(model, batch)
            assert got == pytest.approx(want, abs=1e-9)

    def test_nonnegative_and_reorder_invariant(self):
        rng = np.random.default_rng(4)
        model = MetricModel.initialize(8, 6, 4, seed=2)
        for _ in range(20):
            batch = make_random_batch(rng, dim=8, n_dataset=4, n_web=4, n_classes=3)
            base = lifted_loss(model, batch)
            assert base >= 0.0
            perm = PairBatch(
                batch.dataset_samples,
                batch.web_samples,
                list(reversed(batch.positives)),
                list(reversed(batch.negatives)),
                margin=batch.margin,
            )
            assert lifted_loss(model, perm) == pytest.approx(base, rel=1e-12)

    def test_margin_monotonicity(self):
        rng = np.random.default_rng(11)
        model = MetricModel.initialize(8, 6, 4, seed=2)
        for _ in range(10):
            batch = make_random_batch(rng, dim=8, n_dataset=3, n_web=4, n_classes=2)
            wider = PairBatch(
                batch.dataset_samples,
                batch.web_samples,
                batch.positives,
                batch.negatives,
                margin=batch.margin + 0.5,
            )
            assert lifted_loss(model, wider) >= lifted_loss(model, batch) - 1e-12

    def test_large_distances_do_not_overflow(self):
        # max-shifted log-sum-exp keeps huge activations finite
        model = identity_model(2)
        batch = batch_from_points(
            dataset_pts=[((0.0, 0.0), 0)],
            web_pts=[((1000.0, 0.0), 0), ((0.5, 0.0), 1)],
            positives=[(0, 0)],
            negatives=[(0, 1)],
        )
        val = lifted_loss(model, batch)
        assert math.isfinite(val) and val > 0.0


# ---------------------------------------------------------------------------
# gradients
# ---------------------------------------------------------------------------


class TestGradients:
    def test_inactive_hinges_zero_gradient(self):
        model = identity_model(2)
        batch = batch_from_points(
            dataset_pts=[((1.0, 1.0), 0)],
            web_pts=[((1.0, 1.0), 0), ((500.0, 0.0), 1)],
            positives=[(0, 0)],
            negatives=[(0, 1)],
        )
        loss, grads = lifted_loss_gradient(model, batch)
        assert loss == 0.0
        for g in grads.parameters():
            assert np.all(g == 0.0)

    def test_gradient_loss_matches_loss(self):
        rng = np.random.default_rng(8)
        model = MetricModel.initialize(8, 6, 4, seed=7)
        batch = make_random_batch(rng, dim=8, n_dataset=3, n_web=3)
        loss, _ = lifted_loss_gradient(model, batch)
        assert loss == pytest.approx(lifted_loss(model, batch), rel=1e-12)

    def test_finite_differences(self):
        rng = np.random.default_rng(31)
        model = MetricModel.initialize(input_dim=6, hidden_dim=5, embed_dim=4, seed=9)
        for _ in range(5):
            batch = make_random_batch(rng, dim=6, n_dataset=3, n_web=3)
            _, grads = lifted_loss_gradient(model, batch)
            numeric = fd_gradients(model, batch, eps=1e-5)
            assert max_relative_error(grads.parameters(), numeric) < 1e-4

    def test_duplicated_pairs_leave_gradient_unchanged(self):
        # duplicates collapse on construction, so the mean over P is stable
        rng = np.random.default_rng(14)
        model = MetricModel.initialize(8, 6, 4, seed=3)
        batch = make_random_batch(rng, dim=8, n_dataset=3, n_web=3)
        doubled = PairBatch(
            batch.dataset_samples,
            batch.web_samples,
            batch.positives * 2,
            batch.negatives,
            margin=batch.margin,
        )
        _, g1 = lifted_loss_gradient(model, batch)
        _, g2 = lifted_loss_gradient(model, doubled)
        for a, b in zip(g1.parameters(), g2.parameters()):
            np.testing.assert_allclose(a, b, atol=1e-12)


# ---------------------------------------------------------------------------
# pair construction
# ---------------------------------------------------------------------------


class TestConstructPairs:
    def test_single_positive(self):
        ds = [(fv("d0", 1.0, 0.0), 0)]
        ws = [(fv("w0", 0.0, 1.0), 0)]
        batch = construct_pairs(ds, ws, per_anchor_negatives=2, seed=0)
        assert batch.positives == [(0, 0)]
        assert batch.negatives == []

    def test_one_negative(self):
        ds = [(fv("d0", 1.0, 0.0), 0)]
        ws = [(fv("w0", 0.0, 1.0), 0), (fv("w1", 1.0, 1.0), 1)]
        batch = construct_pairs(ds, ws, per_anchor_negatives=1, seed=0)
        assert batch.positives == [(0, 0)]
        assert batch.negatives == [(0, 1)]

    def test_positives_match_enumeration(self):
        rng = np.random.default_rng(6)
        ds = [(fv(f"d{i}", *rng.normal(size=3)), int(rng.integers(3))) for i in range(10)]
        ws = [(fv(f"w{j}", *rng.normal(size=3)), int(rng.integers(3))) for j in range(10)]
        batch = construct_pairs(ds, ws, per_anchor_negatives=2, seed=5)
        expected = {
            (i, j)
            for i in range(10)
            for j in range(10)
            if ds[i][1] == ws[j][1]
        }
        assert set(batch.positives) == expected
        for i, j in batch.negatives:
            assert ds[i][1] != ws[j][1]

    def test_seeded_determinism(self):
        rng = np.random.default_rng(6)
        ds = [(fv(f"d{i}", *rng.normal(size=3)), int(rng.integers(2))) for i in range(8)]
        ws = [(fv(f"w{j}", *rng.normal(size=3)), int(rng.integers(2))) for j in range(8)]
        b1 = construct_pairs(ds, ws, per_anchor_negatives=2, seed=7)
        b2 = construct_pairs(ds, ws, per_anchor_negatives=2, seed=7)
        assert b1.positives == b2.positives
        assert b1.negatives == b2.negatives

    def test_one_sided_class_excluded_from_positives(self):
        ds = [(fv("d0", 1.0, 0.0), 0), (fv("d1", 0.0, 1.0), 5)]
        ws = [(fv("w0", 1.0, 1.0), 0)]
        batch = construct_pairs(ds, ws, per_anchor_negatives=1, seed=0)
        assert batch.positives == [(0, 0)]
        # the orphan class sample may still appear on the negative side
        assert all(ds[i][1] != ws[j][1] for i, j in batch.negatives)


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------


def cluster_means(rng, n_classes, dim, scale=40.0):
    means = rng.normal(size=(n_classes, dim))
    return scale * means / np.linalg.norm(means, axis=1, keepdims=True)


def cluster_samples(rng, means, per_side, spread=4.0, prefix=""):
    ds, ws = [], []
    for c, mean in enumerate(means):
        dim = mean.shape[0]
        for s in range(per_side):
            ds.append((FeatureVector(f"{prefix}d{c}_{s}", mean + spread * rng.normal(size=dim)), c))
            ws.append((FeatureVector(f"{prefix}w{c}_{s}", mean + spread * rng.normal(size=dim)), c))
    return ds, ws


def gaussian_clusters(rng, n_classes, per_side, dim, spread=4.0, scale=40.0):
    return cluster_samples(rng, cluster_means(rng, n_classes, dim, scale), per_side, spread)


class TestTrain:
    def test_zero_epochs_returns_init(self):
        rng = np.random.default_rng(0)
        ds, ws = gaussian_clusters(rng, 2, 4, 8)
        init = MetricModel.initialize(8, 6, 4, seed=1)
        trained, curve = train(init, ds, ws, TrainConfig(epochs=0, batch_size=4))
        assert curve == []
        for a, b in zip(trained.parameters(), init.parameters()):
            np.testing.assert_array_equal(a, b)

    def test_learning_rate_schedule(self):
        cfg = TrainConfig(learning_rate=1e-4, decay_factor=10.0, decay_every=5)
        assert cfg.lr_at(0) == pytest.approx(1e-4)
        assert cfg.lr_at(4) == pytest.approx(1e-4)
        assert cfg.lr_at(5) == pytest.approx(1e-5)
        assert cfg.lr_at(9) == pytest.approx(1e-5)
        assert cfg.lr_at(10) == pytest.approx(1e-6)

    def test_loss_improves_on_separable_clusters(self):
        rng = np.random.default_rng(12)
        ds, ws = gaussian_clusters(rng, 3, 60, 32)
        init = MetricModel.initialize(32, 64, 16, seed=0)
        cfg = TrainConfig(epochs=30, batch_size=32, seed=0, per_anchor_negatives=2)
        trained, curve = train(init, ds, ws, cfg)
        assert len(curve) == 30
        assert curve[-1][1] < curve[0][1]

    def test_intra_class_tighter_than_inter_class_on_held_out(self):
        rng = np.random.default_rng(13)
        means = cluster_means(rng, 3, 16)
        ds, ws = cluster_samples(rng, means, 40)
        held_ds, held_ws = cluster_samples(rng, means, 10, prefix="h_")
        init = MetricModel.initialize(16, 32, 8, seed=0)
        trained, _ = train(init, ds, ws, TrainConfig(epochs=20, batch_size=16, seed=0))
        intra, inter = [], []
        for f1, c1 in held_ds:
            e1 = embed_dataset(trained, f1)
            for f2, c2 in held_ws:
                e2 = embed_web(trained, f2)
                (intra if c1 == c2 else inter).append(pair_distance(e1, e2))
        assert np.mean(intra) < np.mean(inter)

    def test_bitwise_reproducible(self):
        rng = np.random.default_rng(3)
        ds, ws = gaussian_clusters(rng, 2, 10, 8)
        cfg = TrainConfig(epochs=3, batch_size=8, seed=42)
        m1, c1 = train(MetricModel.initialize(8, 6, 4, seed=1), ds, ws, cfg)
        m2, c2 = train(MetricModel.initialize(8, 6, 4, seed=1), ds, ws, cfg)
        assert c1 == c2
        for a, b in zip(m1.parameters(), m2.parameters()):
            np.testing.assert_array_equal(a, b)

    def test_divergence_reported_with_location(self):
        rng = np.random.default_rng(3)
        ds, ws = gaussian_clusters(rng, 2, 10, 8, scale=40.0)
        cfg = TrainConfig(learning_rate=1e6, epochs=3, batch_size=8, seed=0)
        with pytest.raises(TrainingDiverged) as err, np.errstate(all="ignore"):
            train(MetricModel.initialize(8, 6, 4, seed=1), ds, ws, cfg)
        assert err.value.epoch >= 0
        assert err.value.batch >= 0

    def test_loss_curve_csv(self, tmp_path):
        p = tmp_path / "curve.csv"
        save_loss_curve([(0, 1.5), (1, 0.75)], p)
        assert p.read_text() == "epoch,mean_loss\n0,1.5\n1,0.75\n"
