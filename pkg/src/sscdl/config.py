"""Training configuration, presets and the flat ``key = value`` file format."""
from __future__ import annotations

import dataclasses
import hashlib
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Optional

ABLATIONS = ("full", "no_cdl", "no_mst")
META_MODES = ("exact", "first_order")
DTYPES = ("float32", "float64")


class ConfigError(ValueError):
    pass


@dataclass
class TrainConfig:
    sigma: float = 0.6
    n: int = 100
    beta: float = 1.0
    gamma: float = 0.1
    phi: float = 0.1
    w_p: float = 0.7
    alpha: float = 0.001
    k_neg: int = 50
    batch_size: int = 4096
    dim: int = 128
    hidden: Optional[int] = None
    threshold: float = 0.03
    t_max: int = 500
    t_pcdg: int = 50
    t_cdlrl: int = 100
    eval_every: int = 10
    seed: int = 0
    ablation: str = "full"
    meta_mode: str = "exact"
    meta_fd_eps: float = 0.01
    dtype: str = "float32"
    normalize_loss: bool = False
    freeze_unlabeled: bool = False
    filtered: bool = True
    eval_ranking: bool = True

    @property
    def hidden_width(self) -> int:
        return self.dim if self.hidden is None else self.hidden

    def validate(self) -> "TrainConfig":
        def need(cond, msg):
            if not cond:
                raise ConfigError(msg)

        need(self.sigma > 0, "sigma must be > 0")
        need(self.n >= 1, "n must be >= 1")
        need(0.0 <= self.beta <= 1.0, "beta must lie in [0, 1]")
        need(self.gamma > 0, "gamma must be > 0")
        need(0.0 <= self.phi <= 1.0, "phi must lie in [0, 1]")
        need(self.w_p >= 0, "w_p must be >= 0")
        need(self.alpha >= 0, "alpha must be >= 0")
        need(self.k_neg >= 1, "k_neg must be >= 1")
        need(self.batch_size >= 1, "batch_size must be >= 1")
        need(self.dim >= 1 and self.hidden_width >= 1, "dim and hidden must be >= 1")
        need(0.0 <= self.threshold < 1.0, "threshold must lie in [0, 1)")
        need(self.t_max >= 1, "t_max must be >= 1")
        # boundaries past t_max are allowed: that phase is then never entered
        need(1 <= self.t_pcdg <= self.t_cdlrl, "need 1 <= t_pcdg <= t_cdlrl")
        need(self.eval_every >= 1, "eval_every must be >= 1")
        need(self.ablation in ABLATIONS, f"ablation must be one of {ABLATIONS}")
        need(self.meta_mode in META_MODES, f"meta_mode must be one of {META_MODES}")
        need(self.meta_fd_eps > 0, "meta_fd_eps must be > 0")
        need(self.dtype in DTYPES, f"dtype must be one of {DTYPES}")
        return self

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes).validate()

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            lines.append(f"{f.name} = {'none' if v is None else _fmt(v)}")
        return "\n".join(lines) + "\n"

    def digest(self) -> str:
        return hashlib.sha256(self.to_text().encode("utf-8")).hexdigest()

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


PRESETS = {
    "nl27k": dict(sigma=0.6, w_p=0.7, beta=1.0, alpha=0.001, gamma=0.1, threshold=0.03,
                  batch_size=4096, dim=128, t_max=500, t_pcdg=50, t_cdlrl=100),
    "cn15k": dict(sigma=0.6, w_p=0.3, beta=1.0, alpha=0.001, gamma=0.1, threshold=0.015,
                  batch_size=4096, dim=512, t_max=300, t_pcdg=30, t_cdlrl=60),
}


def preset(name: str, **overrides) -> TrainConfig:
    try:
        base = PRESETS[name.lower()]
    except KeyError:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
    return TrainConfig(**{**base, **overrides}).validate()


_FIELDS = {f.name: f for f in fields(TrainConfig)}


def parse_value(key: str, raw: str):
    if key not in _FIELDS:
        raise ConfigError(f"unknown config key {key!r}")
    default = getattr(TrainConfig(), key)
    kind = type(default) if default is not None else int
    raw = raw.strip()
    if raw.lower() == "none":
        if default is None:
            return None
        raise ConfigError(f"{key} may not be none")
    try:
        if kind is bool:
            low = raw.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return low in ("true", "1", "yes")
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {kind.__name__}") from None


def parse_config_text(text: str, base: Optional[TrainConfig] = None) -> TrainConfig:
    """Parse ``key = value`` lines; ``#`` starts a comment.

    A ``preset = name`` line (which must come first among the keys) selects
    the starting point; later keys override it.
    """
    values = {}
    start = base
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, raw = (p.strip() for p in line.split("=", 1))
        if key == "preset":
            if values:
                raise ConfigError(f"line {lineno}: preset must precede other keys")
            start = preset(raw)
            continue
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        values[key] = parse_value(key, raw)
    start = start or TrainConfig()
    return dataclasses.replace(start, **values).validate()


def load_config(path, base: Optional[TrainConfig] = None) -> TrainConfig:
    return parse_config_text(Path(path).read_text(encoding="utf-8"), base)
