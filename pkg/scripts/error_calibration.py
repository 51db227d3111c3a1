"""Compare the predicted per-element DMQMC error with the spread over independent runs."""
import argparse
from dataclasses import dataclass

import numpy as np

from thermoquench import dmqmc
from thermoquench.model import ModelParams


@dataclass
class Settings:
    L: int = 4
    beta: float = 0.5
    g0: float = 1.0
    N_psip: int = 10_000
    N_loops: int = 1
    runs: int = 100


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--runs", type=int, default=Settings.runs)
    ap.add_argument("--N-psip", type=int, default=Settings.N_psip)
    ap.add_argument("--loops", type=int, default=Settings.N_loops)
    a = ap.parse_args()
    s = Settings(runs=a.runs, N_psip=a.N_psip, N_loops=a.loops)
    h0 = ModelParams(s.L, g=s.g0, h_s=1 / s.L)
    D = h0.dim
    vals = np.zeros((s.runs, D * D))
    pred = np.zeros((s.runs, D * D))
    counts = np.zeros((s.runs, D * D))
    for r in range(s.runs):
        rho, st = dmqmc.sample(h0, s.beta, s.N_psip, s.N_loops, seed=1000 + r)
        for (m, n), d in dmqmc.element_error(st).items():
            pred[r, m * D + n] = d
        vals[r, rho.keys] = rho.values
        counts[r, st.keys] = st.element_counts()[1]
    good = counts.mean(axis=0) >= 10
    ratio = vals.std(axis=0, ddof=1)[good] / pred.mean(axis=0)[good]
    q = np.quantile(ratio, [0, 0.25, 0.5, 0.75, 1])
    print(f"{good.sum()} elements with N >= 10; empirical/predicted std quantiles: "
          + " ".join(f"{x:.2f}" for x in q))
    print(f"outside [0.5, 2]: {np.sum((ratio < 0.5) | (ratio > 2))}")


if __name__ == "__main__":
    main()
