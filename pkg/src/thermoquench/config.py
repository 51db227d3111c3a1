"""Experiment configuration: flat dotted-key TOML files mapped onto dataclasses.

Example::

    model.L = 12
    model.g0 = [0.5, 1.0, 1.5]
    quench.g = 1.0
    quench.h = 1.0
    thermal.beta = [0.5, 1.0, 1.5]
    truncation.kind = "weight"
    truncation.value = 0.99
    output = "runs/quench"

Scalars may be replaced by lists in ``model.g0``, ``model.h0`` and
``thermal.beta``; a run then covers their Cartesian product.
"""
from __future__ import annotations

import dataclasses
import itertools
import os
import sys
from dataclasses import dataclass, field

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .errors import ConfigError
from .model import ModelParams, Observable, ObservableKind

THREADS_ENV = "THERMOQUENCH_THREADS"
TRUNCATION_KINDS = ("weight", "count", "cutoff", "n_sim")
SOURCES = ("ed", "dmqmc")


def auto_basis(g0: float) -> str:
    """Sampling basis that keeps the initial state close to diagonal: z below g0 = 1, x above."""
    return "x" if g0 > 1.0 else "z"


def auto_observable(g0: float) -> str:
    """M^z_pi for quenches starting in the ordered phase, M^x from the paramagnet."""
    return "mx" if g0 > 1.0 else "mz_pi"


def default_workers() -> int:
    raw = os.environ.get(THREADS_ENV)
    if raw is None:
        return 1
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"{THREADS_ENV} must be an integer, got {raw!r}") from None
    if n < 1:
        raise ConfigError(f"{THREADS_ENV} must be >= 1")
    return n


@dataclass
class ModelBlock:
    L: int = 8
    J: float = 1.0
    g0: float | list = 0.5
    h0: float | list = 0.0
    h_s: float | None = None
    basis: str = "auto"


@dataclass
class QuenchBlock:
    g: float = 1.0
    h: float = 1.0


@dataclass
class ThermalBlock:
    beta: float | list = 1.0
    source: str = "ed"
    N_psip: int = 1_000_000
    N_loops: int = 10
    delta_beta: float = 0.01
    ceiling: int | None = None
    damping: float = 0.5
    workers: int | None = None


@dataclass
class TruncationBlock:
    kind: str = "weight"
    value: float = 0.99


@dataclass
class TimeBlock:
    t_max: float = 10.0
    points: int = 201


@dataclass
class SweepBlock:
    L: list = field(default_factory=lambda: [4, 6, 8, 10, 12])
    beta: list = field(default_factory=lambda: [0.0, 0.5, 1.0, 2.0, 3.0])
    g0: list = field(default_factory=lambda: [0.5, 1.5])
    h0: list = field(default_factory=lambda: [0.0])
    basis: list = field(default_factory=lambda: ["z", "x"])
    w_target: float = 0.93


@dataclass
class CircuitBlock:
    n: str = "00000000"
    m: str = "11111111"
    variant: str = "psi+"


@dataclass
class ExperimentConfig:
    model: ModelBlock = field(default_factory=ModelBlock)
    quench: QuenchBlock = field(default_factory=QuenchBlock)
    thermal: ThermalBlock = field(default_factory=ThermalBlock)
    truncation: TruncationBlock = field(default_factory=TruncationBlock)
    time: TimeBlock = field(default_factory=TimeBlock)
    sweep: SweepBlock = field(default_factory=SweepBlock)
    circuit: CircuitBlock = field(default_factory=CircuitBlock)
    observable: str = "mz_pi"
    seed: int = 0
    output: str = "out"

    def validate(self) -> "ExperimentConfig":
        ModelParams(self.model.L, J=self.model.J)  # L parity/range and J > 0
        if self.thermal.source not in SOURCES:
            raise ConfigError(f"thermal.source must be one of {SOURCES}, got {self.thermal.source!r}")
        if self.truncation.kind not in TRUNCATION_KINDS:
            raise ConfigError(f"truncation.kind must be one of {TRUNCATION_KINDS}")
        if self.model.basis not in ("auto", "z", "x"):
            raise ConfigError("model.basis must be 'auto', 'z' or 'x'")
        if self.observable != "auto" and self.observable not in {k.value for k in ObservableKind}:
            raise ConfigError(f"unknown observable {self.observable!r}")
        if self.time.points < 2 or self.time.t_max <= 0:
            raise ConfigError("time grid needs t_max > 0 and at least 2 points")
        for b in _as_list(self.thermal.beta):
            if b < 0:
                raise ConfigError(f"thermal.beta must be >= 0, got {b}")
        if self.thermal.N_psip <= 0 or self.thermal.N_loops <= 0:
            raise ConfigError("thermal.N_psip and thermal.N_loops must be positive")
        return self

    def points(self) -> list["RunPoint"]:
        out = []
        for g0, h0, beta in itertools.product(_as_list(self.model.g0), _as_list(self.model.h0),
                                              _as_list(self.thermal.beta)):
            out.append(RunPoint(self, float(g0), float(h0), float(beta)))
        return out

    def effective(self) -> dict:
        d = dataclasses.asdict(self)
        d["model"]["h_s"] = self.h_s
        d["thermal"]["workers"] = self.workers
        return d

    @property
    def h_s(self) -> float:
        return 1.0 / self.model.L if self.model.h_s is None else float(self.model.h_s)

    @property
    def workers(self) -> int:
        return default_workers() if self.thermal.workers is None else int(self.thermal.workers)

    @property
    def obs(self) -> Observable:
        if self.observable == "auto":
            raise ConfigError("observable 'auto' is resolved per run point")
        return Observable(self.observable, self.model.L)


@dataclass(frozen=True)
class RunPoint:
    config: ExperimentConfig
    g0: float
    h0: float
    beta: float

    @property
    def basis(self) -> str:
        b = self.config.model.basis
        return auto_basis(self.g0) if b == "auto" else b

    @property
    def initial(self) -> ModelParams:
        m = self.config.model
        return ModelParams(m.L, g=self.g0, h=self.h0, h_s=self.config.h_s, J=m.J, basis=self.basis)

    @property
    def quench(self) -> ModelParams:
        m, q = self.config.model, self.config.quench
        return ModelParams(m.L, g=q.g, h=q.h, h_s=0.0, J=m.J, basis=self.basis)

    @property
    def obs(self) -> Observable:
        name = self.config.observable
        return Observable(auto_observable(self.g0) if name == "auto" else name, self.config.model.L)

    @property
    def tag(self) -> str:
        return f"L{self.config.model.L}_b{self.beta:g}_g{self.g0:g}_h{self.h0:g}_{self.basis}"


def _as_list(x) -> list:
    return list(x) if isinstance(x, (list, tuple)) else [x]


def _set_dotted(cfg: ExperimentConfig, key: str, value) -> None:
    parts = key.split(".")
    target = cfg
    for p in parts[:-1]:
        if not hasattr(target, p) or not dataclasses.is_dataclass(getattr(target, p)):
            raise ConfigError(f"unknown config section {key!r}")
        target = getattr(target, p)
    name = parts[-1]
    if name not in {f.name for f in dataclasses.fields(target)}:
        raise ConfigError(f"unknown config key {key!r}")
    setattr(target, name, value)


def _flatten(d: dict, prefix: str = "") -> dict:
    out = {}
    for k, v in d.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            out.update(_flatten(v, key + "."))
        else:
            out[key] = v
    return out


def parse_value(raw: str):
    """Parse a command-line override value with TOML syntax, falling back to a bare string."""
    try:
        return tomllib.loads(f"v = {raw}")["v"]
    except tomllib.TOMLDecodeError:
        return raw


def load_config(path=None, overrides: dict | None = None) -> ExperimentConfig:
    cfg = ExperimentConfig()
    data = {}
    if path is not None:
        try:
            with open(path, "rb") as fh:
                data = tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from None
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
    flat = _flatten(data)
    flat.update(overrides or {})
    for key, value in flat.items():
        _set_dotted(cfg, key, value)
    return cfg.validate()
