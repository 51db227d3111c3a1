"""Command-line front end.

    thermoquench <command> [config.toml] [--set key=value ...] [-o DIR]

Exit codes: 0 success, 2 configuration error, 3 capacity exceeded,
4 numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import platform
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, circuits, dmqmc
from .config import ExperimentConfig, THREADS_ENV, load_config, parse_value
from .errors import CapacityError, ConfigError, NumericalError
from .exact import tde_average
from .model import BasisState
from .pipeline import Stages, run_quench, thermal_source, truncate_for
from .truncation import sweep_nw, write_sweep_csv

log = logging.getLogger("thermoquench")

EXIT_OK, EXIT_CONFIG, EXIT_CAPACITY, EXIT_NUMERICAL = 0, 2, 3, 4


class RunDirectory:
    """Output directory owned by one run; files it registered are removed on failure."""

    def __init__(self, path):
        self.path = Path(path)
        self.created = []
        self._made_dir = False

    def __enter__(self):
        if not self.path.exists():
            self.path.mkdir(parents=True)
            self._made_dir = True
        return self

    def file(self, name: str) -> Path:
        p = self.path / name
        self.created.append(p)
        return p

    def __exit__(self, exc_type, exc, tb):
        if exc_type is not None:
            for p in self.created:
                p.unlink(missing_ok=True)
            if self._made_dir and not any(self.path.iterdir()):
                self.path.rmdir()
        return False


def _write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow(["" if v is None else repr(v) if isinstance(v, float) else v for v in r])


def _manifest(cfg: ExperimentConfig, command: str, started: float, extra: dict) -> dict:
    return {"command": command, "version": __version__, "config": cfg.effective(), "seed": cfg.seed,
            "wall_clock_s": round(time.time() - started, 3), "python": platform.python_version(),
            "numpy": np.__version__, **extra}


def cmd_structure(cfg, run, stages):
    sw = cfg.sweep
    grid = [(L, b, g, h, basis) for L in sw.L for b in sw.beta for g in sw.g0 for h in sw.h0
            for basis in sw.basis]
    with stages("sweep"):
        rows = sweep_nw(grid, sw.w_target)
    write_sweep_csv(rows, run.file("structure.csv"))
    failed = [r for r in rows if r["N_w"] is None]
    return {"rows": len(rows), "failed": len(failed)}


def cmd_quench(cfg, run, stages):
    summaries, report = [], []
    for point in cfg.points():
        res = run_quench(point, workers=cfg.workers, stages=stages)
        res.series.to_csv(run.file(f"series_{point.tag}.csv"))
        res.trunc.write_manifest(run.file(f"truncation_{point.tag}.json"))
        res.plan.write_json(run.file(f"plan_{point.tag}.json"))
        if res.oracle is not None:
            res.oracle.to_csv(run.file(f"oracle_{point.tag}.csv"))
        if res.stats is not None:
            dmqmc.write_jsonl(res.stats, run.file(f"dmqmc_{point.tag}.jsonl"))
        s = res.summary()
        summaries.append(s)
        report.append([point.tag, point.g0, point.h0, point.beta, s["w"], s["N_w"], s["N_sim"], s["delta_w"]])
        print(f"{point.tag}: w={s['w']:.4f} N_w={s['N_w']} N_sim={s['N_sim']}"
              + ("" if s["delta_w"] is None else f" delta_w={s['delta_w']:.4g}"))
    _write_csv(run.file("delta_w.csv"), ["tag", "g0", "h0", "beta", "w", "N_w", "N_sim", "delta_w"], report)
    return {"runs": summaries}


def cmd_dmqmc_sample(cfg, run, stages):
    cfg.thermal.source = "dmqmc"
    out = []
    for point in cfg.points():
        th = cfg.thermal
        with stages("dmqmc"):
            _, stats = dmqmc.sample(point.initial, point.beta, th.N_psip, th.N_loops, th.delta_beta,
                                    cfg.seed, workers=cfg.workers, ceiling=th.ceiling, damping=th.damping)
        dmqmc.write_jsonl(stats, run.file(f"dmqmc_{point.tag}.jsonl"))
        out.append({"tag": point.tag, "elements": len(stats.keys), "chi_diag": stats.chi_diag,
                    "loops_kept": stats.N_loops, "discarded": stats.discarded})
        print(f"{point.tag}: {len(stats.keys)} elements, chi_diag={stats.chi_diag}")
    return {"samples": out}


def cmd_orbits(cfg, run, stages):
    out = []
    for point in cfg.points():
        rho, _ = thermal_source(point, stages, cfg.workers)
        trunc, plan = truncate_for(rho, point, stages)
        plan.write_json(run.file(f"plan_{point.tag}.json"))
        ratio = trunc.N_w / plan.N_sim if plan.N_sim else None
        out.append({"tag": point.tag, "N_w": trunc.N_w, "N_sim": plan.N_sim, "excluded": len(plan.excluded),
                    "reduction": ratio})
        print(f"{point.tag}: N_w={trunc.N_w} N_sim={plan.N_sim} excluded={len(plan.excluded)}")
    return {"plans": out}


def cmd_circuit(cfg, run, stages):
    c = cfg.circuit
    with stages("synthesize"):
        spec = circuits.SuperpositionSpec(BasisState.from_string(c.n), BasisState.from_string(c.m), c.variant)
        circ = circuits.synthesize(spec)
    with stages("verify"):
        dev = float(np.max(np.abs(circuits.simulate(circ) - spec.target())))
        if dev > 1e-12:
            raise NumericalError(f"synthesized circuit misses the target state by {dev:.3e}")
    run.file("circuit.txt").write_text(circ.to_text())
    print(f"{c.variant} |{c.n}>,|{c.m}>: {len(circ.gates)} gates, {len(circ.layers)} layers, "
          f"{circ.cnot_layers()} CNOT layers, max deviation {dev:.1e}")
    return {"gates": len(circ.gates), "layers": len(circ.layers), "cnot_layers": circ.cnot_layers(),
            "max_deviation": dev}


def cmd_tde(cfg, run, stages):
    rows = []
    for point in cfg.points():
        obs = point.obs
        with stages("tde"):
            val = tde_average(point.initial, point.quench, obs, point.beta)
        rows.append([cfg.model.L, point.beta, point.g0, point.h0, cfg.quench.g, cfg.quench.h,
                     point.basis, obs.kind.value, float(val)])
        print(f"{point.tag}: TDE <{obs.kind.value}> = {val:.6g}")
    _write_csv(run.file("tde.csv"), ["L", "beta", "g0", "h0", "g", "h", "basis", "observable", "tde"], rows)
    return {"points": len(rows)}


COMMANDS = {
    "structure": (cmd_structure, "N_w sweep over L, beta, g0 and basis"),
    "quench": (cmd_quench, "truncated-density-matrix quench dynamics"),
    "dmqmc-sample": (cmd_dmqmc_sample, "standalone DMQMC sampling to a JSON-lines artifact"),
    "orbits": (cmd_orbits, "symmetry orbit plan for the retained elements"),
    "circuit": (cmd_circuit, "synthesize and verify a superposition-preparation circuit"),
    "tde": (cmd_tde, "thermal diagonal-ensemble values"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="thermoquench", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_) in COMMANDS.items():
        p = sub.add_parser(name, help=help_)
        p.add_argument("config", nargs="?", help="TOML config with dotted keys")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config key (TOML value syntax)")
        p.add_argument("-o", "--output", help="output directory (overrides config 'output')")
    parser.epilog = f"Set {THREADS_ENV} to change the default worker count."
    return parser


def _overrides(pairs) -> dict:
    out = {}
    for item in pairs:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = parse_value(v.strip())
    return out


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    stages = Stages()
    started = time.time()
    try:
        overrides = _overrides(args.set)
        if args.output:
            overrides["output"] = args.output
        cfg = load_config(args.config, overrides)
        func = COMMANDS[args.command][0]
        with RunDirectory(cfg.output) as run:
            extra = func(cfg, run, stages)
            manifest = _manifest(cfg, args.command, started,
                                 {"stages": stages.timings, "artifacts": [p.name for p in run.created], **extra})
            with open(run.file("run_manifest.json"), "w") as fh:
                json.dump(manifest, fh, indent=1, default=str)
    except ConfigError as exc:
        print(f"configuration error [{stages.current}]: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CapacityError as exc:
        print(f"capacity exceeded [{stages.current}]: {exc}", file=sys.stderr)
        return EXIT_CAPACITY
    except (NumericalError, ZeroDivisionError, FloatingPointError) as exc:
        print(f"numerical failure [{stages.current}]: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except ValueError as exc:
        print(f"invalid input [{stages.current}]: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
