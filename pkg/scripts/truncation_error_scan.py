"""Truncation error against the number of simulated elements for the three quenches.

Thermal states are exact; each N_sim picks the longest magnitude-ordered
prefix whose orbit plan fits. Output is a CSV on stdout.
"""
import argparse
import sys
from dataclasses import dataclass

from thermoquench import exact
from thermoquench.config import auto_basis, auto_observable
from thermoquench.dynamics import default_times, reconstruct, truncate_to_nsim, truncation_error
from thermoquench.model import ModelParams, Observable


@dataclass
class Settings:
    L: int = 10
    beta: float = 1.0
    n_sim: tuple = (1, 2, 4, 8, 16, 32, 64)
    t_max: float = 10.0


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--L", type=int, default=Settings.L)
    ap.add_argument("--beta", type=float, default=Settings.beta)
    a = ap.parse_args()
    s = Settings(L=a.L, beta=a.beta)
    times = default_times(s.t_max)
    print("g0,basis,observable,N_sim,N_w,w,delta_w")
    for g0 in (0.5, 1.0, 1.5):
        basis = auto_basis(g0)
        h0 = ModelParams(s.L, g=g0, h_s=1 / s.L, basis=basis)
        h1 = ModelParams(s.L, g=1.0, h=1.0, basis=basis)
        obs = Observable(auto_observable(g0), s.L)
        rho = exact.thermal_density_matrix(h0, s.beta)
        ref = exact.heisenberg_expectation(rho, obs, h1, times)
        for n in s.n_sim:
            tr, plan = truncate_to_nsim(rho, obs, h1, n)
            d = truncation_error(ref, reconstruct(tr, plan, obs, h1, times))
            print(f"{g0},{basis},{obs.kind.value},{plan.N_sim},{tr.N_w},{tr.weight:.6f},{d:.6g}")
            sys.stdout.flush()


if __name__ == "__main__":
    main()
