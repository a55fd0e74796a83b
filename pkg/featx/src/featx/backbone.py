"""Convolutional backbones behind one small forward interface.

The default is a VGG-16-class network read at its penultimate fully
connected activations (4096-d). With no weights file the parameters come
from a fixed seed, which keeps extraction fully deterministic and is enough
for format-level and plumbing work; pass a weights path (a torch state
dict) to extract with properly pretrained parameters.

`smallconv` is a deliberately tiny seeded stack (64-d, 32 px input) for
exercising large manifests quickly.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Union

import numpy as np
import torch
from torch import nn


class BackboneError(ValueError):
    pass


# classifier prefix lengths for the torchvision VGG-16 layout: fc6 is the
# first linear + relu, fc7 the second
_VGG_LAYERS = {"fc6": 2, "fc7": 5}


@dataclass
class Backbone:
    name: str
    layer: str
    dim: int
    input_size: int
    module: nn.Module

    def forward(self, batch: np.ndarray) -> np.ndarray:
        """Map a (n, 3, input_size, input_size) float32 batch to (n, dim)."""
        x = torch.from_numpy(np.ascontiguousarray(batch, dtype=np.float32))
        if x.ndim != 4 or x.shape[1] != 3 or x.shape[2] != self.input_size:
            raise BackboneError(
                f"expected (n, 3, {self.input_size}, {self.input_size}) input, "
                f"got {tuple(x.shape)}"
            )
        with torch.no_grad():
            out = self.module(x)
        return out.numpy().astype(np.float32)


def _vgg16(layer: str, weights: Optional[Path], seed: int) -> Backbone:
    if layer not in _VGG_LAYERS:
        raise BackboneError(
            f"unknown vgg16 layer {layer!r} (choose from {sorted(_VGG_LAYERS)})"
        )
    from torchvision.models import vgg16

    torch.manual_seed(seed)
    net = vgg16(weights=None)
    if weights is not None:
        try:
            state = torch.load(weights, map_location="cpu", weights_only=True)
        except (OSError, RuntimeError, ValueError) as exc:
            raise BackboneError(f"cannot load weights from {weights}: {exc}") from None
        net.load_state_dict(state)
    net.eval()
    module = nn.Sequential(
        net.features,
        net.avgpool,
        nn.Flatten(1),
        net.classifier[: _VGG_LAYERS[layer]],
    )
    return Backbone(name="vgg16", layer=layer, dim=4096, input_size=224, module=module)


def _smallconv(layer: str, weights: Optional[Path], seed: int) -> Backbone:
    if layer != "pool":
        raise BackboneError(f"unknown smallconv layer {layer!r} (only 'pool')")
    torch.manual_seed(seed)
    module = nn.Sequential(
        nn.Conv2d(3, 8, 3, stride=2, padding=1),
        nn.ReLU(),
        nn.Conv2d(8, 16, 3, stride=2, padding=1),
        nn.ReLU(),
        nn.AdaptiveAvgPool2d(2),
        nn.Flatten(1),
    )
    if weights is not None:
        try:
            state = torch.load(weights, map_location="cpu", weights_only=True)
            module.load_state_dict(state)
        except (OSError, RuntimeError, ValueError) as exc:
            raise BackboneError(f"cannot load weights from {weights}: {exc}") from None
    module.eval()
    return Backbone(name="smallconv", layer=layer, dim=64, input_size=32, module=module)


_BUILDERS = {"vgg16": _vgg16, "smallconv": _smallconv}


def load_backbone(
    name: str = "vgg16",
    layer: str = "fc7",
    weights: Optional[Union[str, Path]] = None,
    seed: int = 0,
) -> Backbone:
    if name not in _BUILDERS:
        raise BackboneError(
            f"unknown backbone {name!r} (choose from {sorted(_BUILDERS)})"
        )
    if weights is not None:
        weights = Path(weights)
        if not weights.exists():
            raise FileNotFoundError(f"missing input: {weights}")
    return _BUILDERS[name](layer, weights, seed)
