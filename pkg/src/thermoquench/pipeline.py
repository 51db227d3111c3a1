"""End-to-end quench runs: thermal source -> truncation -> orbit plan -> dynamics."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from . import dmqmc
from .config import ExperimentConfig, RunPoint
from .containers import DensityMatrix, TimeSeries
from .dynamics import (Reconstruction, make_propagator, reconstruct_full, truncate_to_nsim,
                       truncation_error)
from .exact import heisenberg_expectation, thermal_density_matrix
from .model import MAX_DENSE_L
from .symmetry import OrbitPlan, plan_simulations, symmetrize_rho
from .truncation import TruncatedDensityMatrix, truncate

log = logging.getLogger(__name__)


@dataclass
class QuenchResult:
    point: RunPoint
    rho: DensityMatrix
    trunc: TruncatedDensityMatrix
    plan: OrbitPlan
    recon: Reconstruction
    oracle: TimeSeries | None = None
    delta_w: float | None = None
    stats: dmqmc.SamplingStats | None = None
    timings: dict = field(default_factory=dict)

    @property
    def series(self) -> TimeSeries:
        return self.recon.series

    def summary(self) -> dict:
        return {"tag": self.point.tag, "g0": self.point.g0, "h0": self.point.h0, "beta": self.point.beta,
                "basis": self.point.basis, "w": self.trunc.weight, "epsilon": self.trunc.cutoff,
                "N_w": self.trunc.N_w, "N_sim": self.plan.N_sim, "delta_w": self.delta_w,
                "method": self.series.meta.get("method"), "timings": self.timings}


class Stages:
    """Records the stage currently executing so failures can name it."""

    def __init__(self):
        self.current = "setup"
        self.timings = {}
        self._t0 = None

    def __call__(self, name: str):
        self.current = name
        return self

    def __enter__(self):
        self._t0 = time.perf_counter()
        return self

    def __exit__(self, exc_type, exc, tb):
        self.timings[self.current] = round(time.perf_counter() - self._t0, 3)
        return False


def thermal_source(point: RunPoint, stages: Stages, workers: int = 1):
    cfg = point.config
    h0 = point.initial
    if cfg.thermal.source == "ed":
        with stages("thermal-ed"):
            return thermal_density_matrix(h0, point.beta), None
    th = cfg.thermal
    with stages("dmqmc"):
        rho, stats = dmqmc.sample(h0, point.beta, th.N_psip, th.N_loops, th.delta_beta, cfg.seed,
                                  workers=workers, ceiling=th.ceiling, damping=th.damping)
    with stages("symmetrize"):
        rho = symmetrize_rho(rho, h0)
    return rho, stats


def truncate_for(rho: DensityMatrix, point: RunPoint, stages: Stages):
    cfg = point.config
    kind, value = cfg.truncation.kind, cfg.truncation.value
    obs = point.obs
    with stages("truncate"):
        if kind == "n_sim":
            return truncate_to_nsim(rho, obs, point.quench, int(value))
        trunc = truncate(rho, **{kind: int(value) if kind == "count" else float(value)})
    with stages("plan"):
        plan = plan_simulations(trunc.index_set, obs, point.quench)
    return trunc, plan


def run_quench(point: RunPoint, workers: int = 1, with_oracle: bool | None = None,
               stages: Stages | None = None) -> QuenchResult:
    cfg: ExperimentConfig = point.config
    stages = stages or Stages()
    obs = point.obs
    h1 = point.quench
    times = np.linspace(0.0, cfg.time.t_max, cfg.time.points)

    rho, stats = thermal_source(point, stages, workers)
    trunc, plan = truncate_for(rho, point, stages)
    errors = None
    if stats is not None:
        with stages("element-errors"):
            errors = dmqmc.element_error(stats, trunc.rho_w)
    with stages("dynamics"):
        recon = reconstruct_full(trunc, plan, obs, h1, times, propagator=make_propagator(h1), errors=errors)
    recon.series.meta.update({"tag": point.tag, "observable": obs.kind.value})

    oracle = delta = None
    if with_oracle is None:
        with_oracle = cfg.model.L <= MAX_DENSE_L
    if with_oracle:
        with stages("oracle"):
            exact_rho = rho if cfg.thermal.source == "ed" else thermal_density_matrix(point.initial, point.beta)
            oracle = heisenberg_expectation(exact_rho, obs, h1, times)
            delta = truncation_error(oracle, recon.series)
    return QuenchResult(point, rho, trunc, plan, recon, oracle, delta, stats, dict(stages.timings))
