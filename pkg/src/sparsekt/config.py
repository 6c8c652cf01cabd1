"""Model, sparsity and training configuration plus the flat key/value file form."""

from __future__ import annotations

import configparser
import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

from .data import ConfigError

MODES = ("soft", "topk", "dense")
RENORMS = ("resoftmax", "sumnorm")


@dataclass(frozen=True)
class SparseConfig:
    """How attention rows are sparsified.

    ``soft`` keeps the shortest descending prefix whose cumulative score
    exceeds ``k`` (0 < k <= 1); ``topk`` keeps scores >= the k-th largest
    (integer k >= 1); ``dense`` keeps everything.  ``renorm`` picks how the
    kept scores are turned back into weights.
    """

    mode: str = "topk"
    k: float = 7
    renorm: str = "resoftmax"

    def __post_init__(self):
        mode = str(self.mode).lower()
        object.__setattr__(self, "mode", mode)
        if mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.renorm not in RENORMS:
            raise ConfigError(f"renorm must be one of {RENORMS}, got {self.renorm!r}")
        k = float(self.k)
        if mode == "soft" and not 0 < k <= 1:
            raise ConfigError(f"soft threshold k must lie in (0, 1], got {k}")
        if mode == "topk":
            if k < 1 or k != math.floor(k):
                raise ConfigError(f"top-k needs an integer k >= 1, got {self.k}")
            k = int(k)
        object.__setattr__(self, "k", k)


@dataclass
class TrainConfig:
    d: int = 64
    batch_size: int = 64
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    max_epochs: int = 100
    patience: int = 10
    max_steps: int = 0  # 0 means unlimited
    seed: int = 0
    dropout: float = 0.0
    clip_norm: float = 5.0
    init_std: float = 0.1
    embed_std: float = 0.1  # embedding tables only; init_std covers the rest
    heads: int = 1
    positional: bool = False
    projections: bool = False
    max_len: int = 200
    split: str = "0.8,0.1,0.1"
    sparse: SparseConfig = field(default_factory=SparseConfig)

    def __post_init__(self):
        if isinstance(self.sparse, dict):
            self.sparse = SparseConfig(**self.sparse)
        for name in ("d", "batch_size", "max_epochs", "patience", "heads", "max_len"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.lr <= 0 or self.clip_norm <= 0 or min(self.init_std, self.embed_std) <= 0:
            raise ConfigError("lr, clip_norm, init_std and embed_std must be positive")
        if self.patience > self.max_epochs:
            raise ConfigError("patience cannot exceed max_epochs")
        if not 0 <= self.dropout < 1:
            raise ConfigError("dropout must lie in [0, 1)")
        if self.max_steps < 0:
            raise ConfigError("max_steps must be >= 0")
        if self.d % self.heads:
            raise ConfigError("d must be divisible by heads")

    @property
    def split_fractions(self) -> tuple[float, ...]:
        return tuple(float(x) for x in str(self.split).split(","))

    def to_flat(self) -> dict:
        flat = {f.name: getattr(self, f.name) for f in dataclasses.fields(self) if f.name != "sparse"}
        flat.update(mode=self.sparse.mode, k=self.sparse.k, renorm=self.sparse.renorm)
        return flat

    @classmethod
    def from_flat(cls, flat: dict) -> "TrainConfig":
        flat = dict(flat)
        sparse_keys = {k: flat.pop(k) for k in ("mode", "k", "renorm") if k in flat}
        unknown = set(flat) - {f.name for f in dataclasses.fields(cls)}
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        types = {f.name: f.type for f in dataclasses.fields(cls)}
        kwargs = {name: _coerce(value, types[name]) for name, value in flat.items()}
        base = cls().sparse
        sparse = SparseConfig(
            mode=sparse_keys.get("mode", base.mode),
            k=float(sparse_keys.get("k", base.k)),
            renorm=sparse_keys.get("renorm", base.renorm),
        )
        return cls(sparse=sparse, **kwargs)

    def canonical(self) -> str:
        """Deterministic text form, used inside checkpoints."""
        return json.dumps(self.to_flat(), sort_keys=True, separators=(",", ":"))

    def replace(self, **changes) -> "TrainConfig":
        flat = self.to_flat()
        flat.update(changes)
        return TrainConfig.from_flat(flat)


def _coerce(value, typ: str):
    if typ == "bool":
        if isinstance(value, bool):
            return value
        text = str(value).strip().lower()
        if text in ("1", "true", "yes", "on"):
            return True
        if text in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"not a boolean: {value!r}")
    try:
        if typ == "int":
            return int(value)
        if typ == "float":
            return float(value)
    except (TypeError, ValueError):
        raise ConfigError(f"cannot read {value!r} as {typ}") from None
    return str(value)


def read_config_file(path: str | Path) -> dict:
    """Parse a flat ``key = value`` file (``#`` comments allowed)."""
    parser = configparser.ConfigParser(inline_comment_prefixes=("#",))
    parser.optionxform = str
    try:
        parser.read_string("[config]\n" + Path(path).read_text(encoding="utf-8"))
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return dict(parser["config"])
