"""Run configuration: a flat TOML file whose keys match the CLI flag names.

Flags override file values; unset paths stay None and are checked by the
stage that needs them, so a config can describe only part of the pipeline.
"""

from __future__ import annotations

import dataclasses
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping, Optional, Union

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


class ConfigError(ValueError):
    pass


_PATH_FIELDS = (
    "annotations",
    "lemmas",
    "subtypes",
    "word_vectors",
    "dataset_features",
    "web_features",
    "web_labels",
    "output_dir",
)


@dataclass
class RunConfig:
    # inputs and artifact directory
    annotations: Optional[Path] = None
    lemmas: Optional[Path] = None
    subtypes: Optional[Path] = None
    word_vectors: Optional[Path] = None
    dataset_features: Optional[Path] = None
    web_features: Optional[Path] = None
    web_labels: Optional[Path] = None
    output_dir: Path = Path("out")

    # vocabulary merging
    merge_threshold: float = 0.9

    # detection geometry
    nms_iou: float = 0.3
    nms_score: float = 0.2

    # split sizes
    train_size: int = 0
    test_seen_size: int = 0

    # web noise filter
    group_size: int = 4
    keep_ratio: float = 0.8
    filter_epochs: int = 30
    filter_lr: float = 0.05

    # metric training
    learning_rate: float = 1e-4
    decay_factor: float = 10.0
    decay_every: int = 5
    epochs: int = 30
    batch_size: int = 32
    margin: float = 1.0
    per_anchor_negatives: int = 2
    hidden_dim: int = 512
    embed_dim: int = 256

    # retrieval
    k: int = 20
    top_k: int = 3
    aggregate: str = "distance"

    seed: int = 0
    threads: int = 1

    def __post_init__(self):
        for name in _PATH_FIELDS:
            value = getattr(self, name)
            if isinstance(value, str):
                setattr(self, name, Path(value))
        self.validate()

    def validate(self) -> None:
        checks = [
            (0.0 < self.merge_threshold < 1.0, "merge_threshold must be in (0, 1)"),
            (0.0 <= self.nms_iou <= 1.0, "nms_iou must be in [0, 1]"),
            (0.0 <= self.nms_score <= 1.0, "nms_score must be in [0, 1]"),
            (self.group_size >= 2, "group_size must be >= 2"),
            (0.0 < self.keep_ratio <= 1.0, "keep_ratio must be in (0, 1]"),
            (self.filter_epochs >= 0, "filter_epochs must be >= 0"),
            (self.filter_lr > 0.0, "filter_lr must be positive"),
            (self.learning_rate > 0.0, "learning_rate must be positive"),
            (self.decay_factor >= 1.0, "decay_factor must be >= 1"),
            (self.decay_every >= 1, "decay_every must be >= 1"),
            (self.epochs >= 0, "epochs must be >= 0"),
            (self.batch_size >= 1, "batch_size must be >= 1"),
            (self.margin > 0.0, "margin must be positive"),
            (self.per_anchor_negatives >= 0, "per_anchor_negatives must be >= 0"),
            (self.hidden_dim >= 1, "hidden_dim must be >= 1"),
            (self.embed_dim >= 1, "embed_dim must be >= 1"),
            (self.k >= 1, "k must be >= 1"),
            (self.top_k >= 1, "top_k must be >= 1"),
            (self.aggregate in ("distance", "vote"), "aggregate must be distance or vote"),
            (self.train_size >= 0, "train_size must be >= 0"),
            (self.test_seen_size >= 0, "test_seen_size must be >= 0"),
            (self.threads >= 1, "threads must be >= 1"),
        ]
        for ok, message in checks:
            if not ok:
                raise ConfigError(message)

    @classmethod
    def field_names(cls) -> list[str]:
        return [f.name for f in dataclasses.fields(cls)]

    @classmethod
    def load(
        cls,
        path: Optional[Union[str, Path]] = None,
        overrides: Optional[Mapping[str, Any]] = None,
    ) -> "RunConfig":
        """Build a config from an optional TOML file plus override values.

        Overrides with value None are ignored, so unset CLI flags do not
        clobber file settings.
        """
        values: dict[str, Any] = {}
        if path is not None:
            try:
                with open(path, "rb") as fh:
                    parsed = tomllib.load(fh)
            except FileNotFoundError:
                raise ConfigError(f"config file not found: {path}") from None
            except tomllib.TOMLDecodeError as exc:
                raise ConfigError(f"{path}: {exc}") from None
            known = set(cls.field_names())
            for key, value in parsed.items():
                if key not in known:
                    raise ConfigError(f"{path}: unknown config key {key!r}")
                values[key] = value
        if overrides:
            known = set(cls.field_names())
            for key, value in overrides.items():
                if value is None:
                    continue
                if key not in known:
                    raise ConfigError(f"unknown config key {key!r}")
                values[key] = value
        return cls(**values)

    def require(self, *names: str) -> None:
        """Check that the named inputs are set and exist on disk."""
        for name in names:
            value = getattr(self, name)
            if value is None:
                raise FileNotFoundError(f"required input not configured: --{name.replace('_', '-')}")
            if not Path(value).exists():
                raise FileNotFoundError(f"missing input: {value}")
