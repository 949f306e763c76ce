"""Run configuration: dataclass defaults <- config file <- CLI overrides."""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields

import yaml

FORMS = ("label", "text", "mixed")
HEADS = ("softmax", "sigmoid")
AGGREGATIONS = ("sum", "max")


@dataclass
class TrainConfig:
    form: str = "label"
    T: int = 3
    d: int = 64
    lr: float = 0.001
    epochs: int = 20
    seed: int = 0
    head: str = "softmax"
    aggregation: str = "sum"
    tau: float = 0.7
    omega: int | None = 400
    use_truncation: bool = True
    use_mask: bool = True
    use_aux_hop_loss: bool = True
    batch_size: int | None = None  # None: 64 for label form, 16 for text/mixed
    limit_train: float = 1.0
    # data paths (resolved by the CLI; kept here so artifacts embed them)
    data_dir: str | None = None
    graph_path: str | None = None
    out_dir: str | None = None

    def validate(self):
        if self.form not in FORMS:
            raise ValueError(f"form must be one of {FORMS}, got {self.form!r}")
        if self.head not in HEADS:
            raise ValueError(f"head must be one of {HEADS}, got {self.head!r}")
        if self.aggregation not in AGGREGATIONS:
            raise ValueError(f"aggregation must be one of {AGGREGATIONS}")
        if not 0.0 <= self.tau <= 1.0:
            raise ValueError(f"tau must be in [0, 1], got {self.tau}")
        if self.omega is not None and self.omega < 1:
            raise ValueError(f"omega must be >= 1 or null, got {self.omega}")
        if self.T < 1 or self.d < 2 or self.epochs < 1 or self.lr <= 0:
            raise ValueError("require T >= 1, d >= 2, epochs >= 1, lr > 0")
        if not 0.0 < self.limit_train <= 1.0:
            raise ValueError(f"limit_train must be in (0, 1], got {self.limit_train}")
        return self

    @property
    def effective_batch_size(self) -> int:
        if self.batch_size is not None:
            return self.batch_size
        return 64 if self.form == "label" else 16

    @property
    def mask_active(self) -> bool:
        """The mask only exists over text relations; label form never masks."""
        return self.use_mask and self.form != "label"

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_sources(cls, config_file=None, overrides: dict | None = None) -> "TrainConfig":
        """defaults <- YAML file <- overrides, rejecting unknown keys."""
        known = {f.name for f in fields(cls)}
        merged: dict = {}
        if config_file is not None:
            with open(config_file, encoding="utf-8") as f:
                loaded = yaml.safe_load(f) or {}
            if not isinstance(loaded, dict):
                raise ValueError(f"{config_file}: config must be a mapping")
            unknown = set(loaded) - known
            if unknown:
                raise ValueError(f"{config_file}: unknown config keys {sorted(unknown)}")
            merged.update(loaded)
        for k, v in (overrides or {}).items():
            if k not in known:
                raise ValueError(f"unknown config key {k!r}")
            if v is not None:
                merged[k] = v
        return cls(**merged).validate()
