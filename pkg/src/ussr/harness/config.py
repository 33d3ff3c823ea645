"""Flat ``key = value`` run configuration."""

from __future__ import annotations

import dataclasses
import json
import logging
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Mapping

log = logging.getLogger(__name__)


class ConfigError(ValueError):
    pass


@dataclass
class Config:
    seed: int = 0

    # universal representation
    n_clusters: int = 3
    latent_dim: int = 8
    hidden: int = 32
    beta: float = 1.0
    beta_c: float = 1.0
    n_samples: int = 1
    encoder: str = "concat"
    gate_input: str = "encoded"
    attn_heads: int = 2
    attn_layers: int = 1

    # bipartite interaction
    repr_dim: int = 8
    segment_dim: int = 4
    tau: float = 1.0
    gumbel: bool = False
    joint_finetune: bool = False

    # optimisation
    learning_rate: float = 0.05
    clip: float = 5.0
    batch_size: int = 256
    epochs_universal: int = 10
    epochs_segments: int = 10
    patience: int = 5

    # features
    cap: int = 100
    embed_dim: int = 4
    joint_index: bool = False

    # expansion
    t_logit: float = 1.0
    t_num: int = 200
    few_shot_epochs: int = 50
    perturb_scale: float = 1e-3
    segment_epochs: int = 10

    # synthetic data
    synth_modes: int = 3
    synth_segments: int = 6
    synth_tail: float = 1.5
    synth_holdout_mode: int = 0
    synth_train_rows: int = 50000
    synth_val_rows: int = 10000
    synth_test_rows: int = 10000
    synth_phase2_rows: int = 4000
    synth_new_segment_rows: int = 2000

    # paths
    train_path: str = ""
    val_path: str = ""
    test_path: str = ""
    segments_path: str = ""
    metrics_path: str = ""
    audit_path: str = ""

    def __post_init__(self):
        if self.encoder not in ("concat", "attention"):
            raise ConfigError(f"encoder must be 'concat' or 'attention', got {self.encoder!r}")
        if self.gate_input not in ("encoded", "raw"):
            raise ConfigError(f"gate_input must be 'encoded' or 'raw', got {self.gate_input!r}")
        for name in ("n_clusters", "latent_dim", "hidden", "repr_dim", "batch_size", "cap",
                     "embed_dim", "n_samples"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.tau <= 0:
            raise ConfigError("tau must be positive")

    @classmethod
    def from_mapping(cls, values: Mapping[str, object]) -> "Config":
        known = {f.name: f for f in fields(cls)}
        unknown = sorted(set(values) - set(known))
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        kwargs = {k: _coerce(known[k], v) for k, v in values.items()}
        return cls(**kwargs)

    @classmethod
    def load(cls, path: str | Path | None = None, **overrides) -> "Config":
        values: dict[str, object] = {}
        if path:
            for n, line in enumerate(Path(path).read_text().splitlines(), start=1):
                line = line.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise ConfigError(f"{path}:{n}: expected key = value")
                key, value = (s.strip() for s in line.split("=", 1))
                values[key] = value
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls.from_mapping(values)

    def replace(self, **changes) -> "Config":
        return dataclasses.replace(self, **changes)

    def to_text(self) -> str:
        return "".join(f"{f.name} = {_format(getattr(self, f.name))}\n" for f in fields(self))

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_json(cls, text: str) -> "Config":
        return cls.from_mapping(json.loads(text))

    def log_resolved(self) -> None:
        log.info("resolved config:\n%s", self.to_text().rstrip())


def _coerce(f: dataclasses.Field, value):
    kind = f.type if isinstance(f.type, str) else f.type.__name__
    if not isinstance(value, str):
        return value
    try:
        if kind == "bool":
            low = value.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(value)
            return low in ("true", "1", "yes")
        if kind == "int":
            return int(value)
        if kind == "float":
            return float(value)
    except ValueError:
        raise ConfigError(f"config key {f.name!r}: cannot parse {value!r} as {kind}") from None
    return value


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    return str(value)
