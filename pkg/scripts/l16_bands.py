"""L = 16 sampled quench: statistical band against N_sim and sign structure of the sample.

One DMQMC sample is reused for every N_sim. Takes tens of minutes on one core
with the defaults.
"""
import argparse
import time
from dataclasses import dataclass

import numpy as np

from thermoquench import dmqmc
from thermoquench.dynamics import default_times, make_propagator, reconstruct, truncate_to_nsim
from thermoquench.model import ModelParams, Observable
from thermoquench.symmetry import symmetrize_rho


@dataclass
class Settings:
    L: int = 16
    beta: float = 0.5
    g0: float = 1.0
    N_psip: int = 100_000
    ceiling: int = 200_000
    N_loops: int = 3
    seed: int = 1
    n_sim: tuple = (5, 10, 20)
    points: int = 101


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--n-sim", type=int, nargs="+")
    ap.add_argument("--loops", type=int)
    a = ap.parse_args()
    s = Settings()
    if a.n_sim:
        s.n_sim = tuple(a.n_sim)
    if a.loops:
        s.N_loops = a.loops

    h0 = ModelParams(s.L, g=s.g0, h_s=1 / s.L)
    h1 = ModelParams(s.L, g=1.0, h=1.0)
    obs = Observable.staggered_z(s.L)
    t0 = time.time()
    rho, stats = dmqmc.sample(h0, s.beta, s.N_psip, s.N_loops, seed=s.seed, ceiling=s.ceiling)
    rho = symmetrize_rho(rho, h0)
    print(f"sampled {len(rho)} elements in {time.time() - t0:.0f}s, chi_diag={stats.chi_diag}")

    v = rho.values[np.argsort(-np.abs(rho.values), kind="stable")]
    for lo, hi in ((0, 100), (100, 500), (500, 1000), (1000, 5000)):
        print(f"ranks {lo + 1}-{hi}: negative fraction {np.mean(v[lo:hi] < 0):.3f}")

    times = default_times(points=s.points)
    prop = make_propagator(h1)
    late = times >= 5
    for n in s.n_sim:
        tr, plan = truncate_to_nsim(rho, obs, h1, n)
        err = dmqmc.element_error(stats, tr.rho_w)
        series = reconstruct(tr, plan, obs, h1, times, propagator=prop, errors=err)
        print(f"N_sim={plan.N_sim} N_w={tr.N_w} w={tr.weight:.3f}: mean band {series.stat_err.mean():.4f}, "
              f"late mean {series.values[late].mean():+.4f}, {time.time() - t0:.0f}s")


if __name__ == "__main__":
    main()
