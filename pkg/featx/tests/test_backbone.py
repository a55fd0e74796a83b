"""Backbone loading and forward behaviour."""

import numpy as np
import pytest

from featx.backbone import BackboneError, load_backbone


class TestSmallconv:
    def test_shape_and_dim(self, smallconv):
        assert smallconv.dim == 64
        assert smallconv.input_size == 32
        out = smallconv.forward(np.zeros((3, 3, 32, 32), dtype=np.float32))
        assert out.shape == (3, 64)
        assert out.dtype == np.float32

    def test_seeded_construction_is_deterministic(self):
        a = load_backbone("smallconv", "pool", seed=0)
        b = load_backbone("smallconv", "pool", seed=0)
        x = np.random.default_rng(1).normal(size=(2, 3, 32, 32)).astype(np.float32)
        np.testing.assert_array_equal(a.forward(x), b.forward(x))

    def test_different_seeds_differ(self):
        a = load_backbone("smallconv", "pool", seed=0)
        b = load_backbone("smallconv", "pool", seed=1)
        x = np.ones((1, 3, 32, 32), dtype=np.float32)
        assert not np.array_equal(a.forward(x), b.forward(x))

    def test_wrong_input_size_rejected(self, smallconv):
        with pytest.raises(BackboneError, match="expected"):
            smallconv.forward(np.zeros((1, 3, 64, 64), dtype=np.float32))

    def test_unknown_layer(self):
        with pytest.raises(BackboneError, match="pool"):
            load_backbone("smallconv", "fc7")


class TestRegistry:
    def test_unknown_backbone(self):
        with pytest.raises(BackboneError, match="resnet"):
            load_backbone("resnet50", "fc7")

    def test_missing_weights_file(self, tmp_path):
        with pytest.raises(FileNotFoundError, match="absent.pt"):
            load_backbone("smallconv", "pool", weights=tmp_path / "absent.pt")

    def test_vgg16_unknown_layer(self):
        with pytest.raises(BackboneError, match="fc6"):
            load_backbone("vgg16", "conv9")


class TestVgg16:
    def test_declared_dim(self):
        net = load_backbone("vgg16", "fc7", seed=0)
        assert net.dim == 4096
        assert net.input_size == 224
        out = net.forward(np.zeros((1, 3, 224, 224), dtype=np.float32))
        assert out.shape == (1, 4096)

    def test_fc6_and_fc7_differ(self):
        x = np.random.default_rng(2).normal(size=(1, 3, 224, 224)).astype(np.float32)
        fc6 = load_backbone("vgg16", "fc6", seed=0).forward(x)
        fc7 = load_backbone("vgg16", "fc7", seed=0).forward(x)
        assert fc6.shape == fc7.shape == (1, 4096)
        assert not np.array_equal(fc6, fc7)
