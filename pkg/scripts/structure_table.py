"""Print N_w / 4^L for the structure sweep, one block per basis.

    python scripts/structure_table.py --L 4 6 8 --beta 0 1 2 3
"""
import argparse
from dataclasses import dataclass, field

from thermoquench.truncation import sweep_nw


@dataclass
class Settings:
    L: list = field(default_factory=lambda: [4, 6, 8, 10])
    beta: list = field(default_factory=lambda: [0.0, 1.0, 2.0, 3.0])
    g0: list = field(default_factory=lambda: [0.5, 1.5])
    w_target: float = 0.93


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--L", type=int, nargs="+")
    ap.add_argument("--beta", type=float, nargs="+")
    ap.add_argument("--w", type=float)
    a = ap.parse_args()
    s = Settings()
    s.L = a.L or s.L
    s.beta = a.beta or s.beta
    s.w_target = a.w or s.w_target

    grid = [(L, b, g, 0.0, basis) for basis in ("z", "x") for g in s.g0 for L in s.L for b in s.beta]
    rows = sweep_nw(grid, s.w_target)
    for basis in ("z", "x"):
        print(f"\nbasis {basis}, w = {s.w_target}")
        print("g0    L   " + "".join(f"beta={b:<7g}" for b in s.beta))
        for g in s.g0:
            for L in s.L:
                sel = [r for r in rows if r["basis"] == basis and r["g0"] == g and r["L"] == L]
                cells = "".join(f"{r['N_w'] / 4 ** L:<12.4f}" if r["N_w"] else f"{'-':<12}" for r in sel)
                print(f"{g:<5g} {L:<3d} {cells}")


if __name__ == "__main__":
    main()
