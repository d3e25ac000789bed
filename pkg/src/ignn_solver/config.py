"""Flat ``key = value`` run configuration."""

from __future__ import annotations

import configparser
import hashlib
import json
from dataclasses import asdict, dataclass, fields

from .errors import ConfigError


@dataclass
class RunConfig:
    # loss weights
    lambda1: float = 0.1
    lambda1_schedule: str = "linear_increasing"
    lambda1_warmup: bool = True
    lambda2: float = 5.0
    lambda3: float = 1e-4
    lambda3_decay: bool = True
    # model
    nhid: int = 128
    kappa: float = 0.95
    activation: str = "relu"
    dropout: float = 0.5
    weight_decay: float = 0.0
    lr: float = 0.002
    epochs: int = 100
    tol: float = 3e-6
    max_iter: int = 300
    # solver
    m: int = 5
    K: int = 10
    p: int = 8
    beta_max: float = 1.5
    keep_fraction: float = 0.25
    update_rule: str = "classic"
    solver_steps: int = 100
    solver_lr: float = 0.002
    # alternating schedule
    T1: int = 0  # 0 picks ceil(0.07 * T2)
    T2: int = 20
    warmup_epochs: int = 10
    warmup_solver_steps: int = 100
    # misc
    seed: int = 0
    model_checkpoint: str = "model.ckpt"
    solver_checkpoint: str = "solver.ckpt"
    eval_tol: float = 1e-3

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(asdict(self), sort_keys=True).encode()).hexdigest()[:16]


_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def _coerce(name: str, kind, raw: str):
    raw = raw.strip()
    try:
        if kind is bool:
            low = raw.lower()
            if low in _TRUE:
                return True
            if low in _FALSE:
                return False
            raise ValueError(raw)
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"{name}: cannot read {raw!r} as {kind.__name__}") from None


_TYPES = {f.name: {"float": float, "int": int, "bool": bool, "str": str}[f.type] for f in fields(RunConfig)}


def parse_config(text: str, base: RunConfig | None = None) -> RunConfig:
    """Parse ``key = value`` lines (``#`` comments allowed) on top of ``base``."""
    parser = configparser.ConfigParser(interpolation=None, comment_prefixes=("#", ";"), inline_comment_prefixes=("#",))
    parser.optionxform = str
    try:
        parser.read_string("[run]\n" + text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    values = asdict(base or RunConfig())
    for key, raw in parser["run"].items():
        if key not in _TYPES:
            raise ConfigError(f"unknown config key {key!r}")
        values[key] = _coerce(key, _TYPES[key], raw)
    return RunConfig(**values)


def load_config(path) -> RunConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())
