"""Run configuration: a flat ``key=value`` file, overridable from the command line.

Blank lines and ``#`` comments are ignored. Unknown keys are an error so a
typo cannot silently fall back to a default.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path

from .errors import ConfigError
from .fieldcore import PRIMES
from .quantizer import QuantParams

_TRUE = {"1", "true", "on", "yes"}
_FALSE = {"0", "false", "off", "no"}


@dataclass
class RunConfig:
    k: int = 2
    m: int = 1
    workers: int | None = None
    prime: str = "25bit"
    frac_bits: int = 8
    epochs: int = 200
    seed: int = 0
    integrity: bool = False
    dataset: str = "moons"
    out_dir: str = "runs"
    insecure_dump: bool = False
    # training
    lr: float = 0.1
    large_batch: int = 10
    n_points: int = 500
    hidden: int = 16
    faulty: int = 0
    fault_prob: float = 1.0
    transcript: bool = False
    # codec-check
    instances: int = 1000
    dim: int = 32
    break_constraint: bool = False
    # privacy-audit
    samples: int = 100_000
    alpha: float = 0.01
    bins: int = 100
    chi_rounds: int = 10
    mi_primes: str = "5,7"
    mi_max_k: int = 2
    mi_max_m: int = 2
    # integrity-audit
    trials: int = 1000
    # bench
    reps: int = 50
    bench_k: str = "1,2,4"

    def __post_init__(self):
        if self.prime not in PRIMES:
            raise ConfigError(f"prime must be one of {sorted(PRIMES)}, got {self.prime!r}")
        if self.k < 1 or self.m < 1:
            raise ConfigError("k and m must be >= 1")
        QuantParams(self.frac_bits, PRIMES[self.prime])  # validates the pair

    @property
    def p(self) -> int:
        return int(PRIMES[self.prime])

    @property
    def q(self) -> QuantParams:
        return QuantParams(self.frac_bits, PRIMES[self.prime])

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)


_FIELDS = {f.name: f for f in dataclasses.fields(RunConfig)}


def _coerce(name: str, raw: str):
    kind = _FIELDS[name].type
    raw = raw.strip()
    if "bool" in kind:
        low = raw.lower()
        if low in _TRUE:
            return True
        if low in _FALSE:
            return False
        raise ConfigError(f"{name}: expected on/off, got {raw!r}")
    if "None" in kind and raw.lower() in {"", "none", "auto"}:
        return None
    try:
        if kind.startswith("int"):
            return int(raw)
        if kind.startswith("float"):
            return float(raw)
    except ValueError:
        raise ConfigError(f"{name}: cannot parse {raw!r} as {kind}") from None
    return raw


def parse_config_text(text: str) -> dict:
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {line!r}")
        key, raw = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in _FIELDS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        values[key] = _coerce(key, raw)
    return values


def load_config(path=None, overrides: dict | None = None) -> RunConfig:
    values = parse_config_text(Path(path).read_text()) if path else {}
    for key, val in (overrides or {}).items():
        if val is None:
            continue
        if key not in _FIELDS:
            raise ConfigError(f"unknown key {key!r}")
        values[key] = _coerce(key, val) if isinstance(val, str) else val
    return RunConfig(**values)


def dump_config(cfg: RunConfig) -> str:
    lines = []
    for name, val in cfg.as_dict().items():
        if isinstance(val, bool):
            val = "on" if val else "off"
        lines.append(f"{name}={'auto' if val is None else val}")
    return "\n".join(lines) + "\n"
