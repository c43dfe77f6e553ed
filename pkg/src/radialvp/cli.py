"""Command line entry point: ``radialvp <subcommand>``.

transform      round-trip and Jacobian checks of the action-angle map
kepler-check   integrated Kepler flow against the exact linear motion
simulate       run a configured simulation into an output directory
diagnose       recompute fits and residuals from a run's snapshots
scatter        tabulate raw and unsheared scattering residuals of a run
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import aa, diagnostics, evolve, kepler
from .config import ConfigError, load_config
from .snapshot import SnapshotError, list_snapshots, read_snapshot, write_snapshot
from .structfn import g_of_w

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2

CSV_NAME = "diagnostics.csv"
SUMMARY_NAME = "summary.json"
SNAPSHOT_DIR = "snapshots"


def _perturbed_to_aa(r, v, q):
    # to_aa with G scaled by 1 + 1e-6: a broken map the checks must reject
    r = np.asarray(r, dtype=float)
    v = np.asarray(v, dtype=float)
    a2 = v * v + q / r
    theta = np.where(v < 0, -1.0, 1.0) * (q / a2) * g_of_w(np.abs(v) * np.sqrt(r / q)) * (1.0 + 1e-6)
    return theta, np.sqrt(a2)


FAULTS = {"perturbed-G": _perturbed_to_aa}


def _dump(obj, path=None):
    text = json.dumps(obj, indent=2, sort_keys=True, default=float) + "\n"
    if path:
        Path(path).write_text(text)
    sys.stdout.write(text)


def _forward(args):
    if args.fault_inject is None:
        return None
    return FAULTS[args.fault_inject]


def _config_q(args, default):
    if args.q:
        return args.q
    if args.config:
        return [load_config(args.config).q]
    return default


def cmd_transform(args) -> int:
    reports = [aa.check_transform(q, n=args.n, forward=_forward(args)) for q in _config_q(args, [0.5, 1.0, 2.0])]
    passed = all(r["passed"] for r in reports)
    _dump({"passed": passed, "reports": reports}, args.out)
    return EXIT_OK if passed else EXIT_FAIL


def cmd_kepler_check(args) -> int:
    times = tuple(float(x) for x in args.times.split(","))
    reports = [
        kepler.oracle_check(q, n=args.n, times=times, seed=args.seed, forward=_forward(args))
        for q in _config_q(args, [1.0])
    ]
    passed = all(r["passed"] for r in reports)
    _dump({"passed": passed, "reports": reports}, args.out)
    return EXIT_OK if passed else EXIT_FAIL


def write_csv(path, rows) -> None:
    if not rows:
        Path(path).write_text("")
        return
    columns = list(rows[0])
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([repr(float(row[c])) for c in columns])


def simulate(config_path, out_dir, threads: int = 1) -> evolve.RunResult:
    """Run a config and write ``config.ini``, snapshots, CSV and summary."""
    cfg = load_config(config_path)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.ini").write_text(cfg.source)
    snap_dir = out / SNAPSHOT_DIR
    if snap_dir.exists():
        for old in snap_dir.glob("snap_*"):
            old.unlink()
    digest = cfg.config_hash()

    def save(index, ens):
        write_snapshot(snap_dir, index, ens, digest)

    result = evolve.run(cfg, threads=threads, on_snapshot=save)
    write_csv(out / CSV_NAME, result.rows)
    summary = dict(result.summary, config_hash=digest)
    (out / SUMMARY_NAME).write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return result


def cmd_simulate(args) -> int:
    if not args.config or not args.out:
        raise ConfigError("simulate needs --config and --out")
    result = simulate(args.config, args.out, args.threads)
    _dump(result.summary)
    return EXIT_OK


def load_run(run_dir):
    """Config and snapshot ensembles of a completed run, in time order."""
    run_dir = Path(run_dir)
    cfg_path = run_dir / "config.ini"
    if not cfg_path.exists():
        raise SnapshotError(f"{run_dir}: not a run directory (no config.ini)")
    cfg = load_config(cfg_path)
    states = []
    for sidecar in list_snapshots(run_dir / SNAPSHOT_DIR):
        ens, meta = read_snapshot(sidecar)
        if meta["config_hash"] != cfg.config_hash():
            raise SnapshotError(f"{sidecar}: snapshot was written by a different config")
        states.append(ens)
    return cfg, states


def diagnose(run_dir) -> tuple[list, dict]:
    """Rows and summary recomputed from the snapshots alone."""
    cfg, states = load_run(run_dir)
    rows = [diagnostics.record(e, cfg.norms, cfg.tau_alphas, cfg.tangents, cfg.rho_bandwidth) for e in states]
    diagnostics.add_scatter_columns(rows, states, cfg.e_inf_window)
    summary = diagnostics.summarize(rows, cfg.field_fit, cfg.average_fit, cfg.scatter_fit, cfg.scatter_compare)
    return rows, summary


def cmd_diagnose(args) -> int:
    _, summary = diagnose(args.run_dir)
    _dump(summary, args.out)
    return EXIT_OK


def cmd_scatter(args) -> int:
    cfg, states = load_run(args.run_dir)
    window = args.window or cfg.e_inf_window
    rows = [{"t": e.t} for e in states]
    diagnostics.add_scatter_columns(rows, states, window)
    for row in rows:
        un = row["scatter_unsheared"]
        row["ratio"] = row["scatter_raw"] / un if un > 0 else math.inf
    target = args.out or sys.stdout
    if target is sys.stdout:
        writer = csv.writer(sys.stdout, lineterminator="\n")
        writer.writerow(list(rows[0]))
        for row in rows:
            writer.writerow([repr(float(v)) for v in row.values()])
    else:
        write_csv(target, rows)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="radialvp", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, fault=False):
        p.add_argument("--config", help="INI config (only [physics] q is used by checks)")
        p.add_argument("--out", help="also write the JSON report here")
        p.add_argument("--threads", type=int, default=1, help="worker threads (never changes results)")
        if fault:
            p.add_argument("--fault-inject", choices=sorted(FAULTS), help="test-only broken map")

    p = sub.add_parser("transform", help="action-angle map checks")
    common(p, fault=True)
    p.add_argument("--q", type=float, action="append", help="charge coupling (repeatable)")
    p.add_argument("--n", type=int, default=100, help="grid points per axis")
    p.set_defaults(func=cmd_transform)

    p = sub.add_parser("kepler-check", help="Kepler flow oracle")
    common(p, fault=True)
    p.add_argument("--q", type=float, action="append", help="charge coupling (repeatable)")
    p.add_argument("--n", type=int, default=100, help="number of initial conditions")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--times", default="1,10,100", help="comma-separated times")
    p.set_defaults(func=cmd_kepler_check)

    p = sub.add_parser("simulate", help="run a configured simulation")
    common(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("diagnose", help="recompute fits from snapshots")
    p.add_argument("run_dir")
    p.add_argument("--out", help="also write the summary JSON here")
    p.set_defaults(func=cmd_diagnose)

    p = sub.add_parser("scatter", help="scattering residual table of a run")
    p.add_argument("run_dir")
    p.add_argument("--out", help="CSV path (default: stdout)")
    p.add_argument("--window", type=int, help="late snapshots averaged into E_inf")
    p.set_defaults(func=cmd_scatter)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "threads", 1) < 1:
        sys.stderr.write("radialvp: --threads must be at least 1\n")
        return EXIT_USAGE
    try:
        return args.func(args)
    except (ConfigError, SnapshotError) as exc:
        sys.stderr.write(f"radialvp: {exc}\n")
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
