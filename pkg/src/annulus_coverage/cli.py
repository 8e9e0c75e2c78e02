"""Command line front end: ``simulate``, ``check`` and ``plot``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from .checks import run_checks
from .geometry import AnnulusDomain, PolarCurve
from .grid import ResolutionError, build_grid
from .partition import bar_segment
from .scenario import Scenario, ScenarioError, load
from .sim import DiagnosticsLog, Simulation, SimulationError, convergence_report
from .svg import snapshot

log = logging.getLogger("annulus_coverage")

TRAJECTORY_HEADER = ["t", "agent", "px", "py", "l", "m", "qx", "qy", "E", "h"]
DIAGNOSTICS_HEADER = ["t", "V", "max_gap", "imbalance", "min_h", "partition_guard", "agent_guard"]
DOMAIN_FILE = "domain.json"
TIME_TOL = 1e-6


class MissingTimeError(LookupError):
    pass


def _g(x) -> str:
    return f"{float(x):.9g}"


# ---------------------------------------------------------------- writers


def trajectory_rows(lg: DiagnosticsLog, every: int):
    last = len(lg.records) - 1
    for k, rec in enumerate(lg.records):
        if k % every and k != last:
            continue
        for i in range(len(rec.positions)):
            yield [_g(rec.t), str(i), _g(rec.positions[i, 0]), _g(rec.positions[i, 1]), _g(rec.l[i]),
                   _g(rec.m[i]), _g(rec.targets[i, 0]), _g(rec.targets[i, 1]), _g(rec.E[i]), _g(rec.h[i])]


def write_trajectory(path: Path, lg: DiagnosticsLog, every: int) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRAJECTORY_HEADER)
        w.writerows(trajectory_rows(lg, every))


def write_diagnostics(path: Path, lg: DiagnosticsLog) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(DIAGNOSTICS_HEADER)
        for r in lg.records:
            w.writerow([_g(r.t), _g(r.V), _g(r.max_gap), _g(r.imbalance), _g(r.min_h),
                        str(r.partition_guard), str(r.agent_guard)])


def _curve_dict(c: PolarCurve) -> dict:
    return {"kind": c.kind, "a": c.a, "b": c.b, "r0": c.r0,
            "sin": [list(t) for t in c.sin_terms], "cos": [list(t) for t in c.cos_terms]}


def domain_dict(domain: AnnulusDomain, spacing: float) -> dict:
    return {"center": list(domain.inner.center), "inner": _curve_dict(domain.inner),
            "outer": _curve_dict(domain.outer), "spacing": spacing}


def domain_from_dict(d: dict) -> tuple[AnnulusDomain, float]:
    def curve(c):
        return PolarCurve(c["kind"], c["a"], c["b"], c["r0"], tuple((int(k), float(v)) for k, v in c["sin"]),
                          tuple((int(k), float(v)) for k, v in c["cos"]), tuple(d["center"]))

    return AnnulusDomain(curve(d["inner"]), curve(d["outer"])), float(d["spacing"])


# ---------------------------------------------------------------- plotting


def read_trajectory(path: Path) -> dict[float, list[dict]]:
    frames: dict[float, list[dict]] = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != TRAJECTORY_HEADER:
            raise ValueError(f"{path}: unexpected header {reader.fieldnames}")
        for row in reader:
            frames.setdefault(float(row["t"]), []).append(row)
    return frames


def render_snapshots(csv_path: Path, times: list[float], out_dir: Path | None = None) -> list[Path]:
    """One SVG per requested time from a trajectory CSV and its domain sidecar."""
    csv_path = Path(csv_path)
    if not times:
        return []
    side = csv_path.parent / DOMAIN_FILE
    if not side.exists():
        raise FileNotFoundError(f"domain sidecar {side} not found next to {csv_path}")
    domain, spacing = domain_from_dict(json.loads(side.read_text()))
    frames = read_trajectory(csv_path)
    logged = np.array(sorted(frames))
    out_dir = csv_path.parent if out_dir is None else Path(out_dir)
    written = []
    for t in times:
        k = int(np.argmin(np.abs(logged - t))) if logged.size else -1
        if k < 0 or abs(logged[k] - t) > TIME_TOL:
            raise MissingTimeError(f"time {t:g} is not in {csv_path}")
        rows = sorted(frames[logged[k]], key=lambda r: int(r["agent"]))
        agents = np.array([[float(r["px"]), float(r["py"])] for r in rows])
        targets = np.array([[float(r["qx"]), float(r["qy"])] for r in rows])
        bars = []
        for r in rows:
            bar = bar_segment(domain, float(r["l"]), spacing)
            bars.append((bar.start, bar.end))
        path = out_dir / f"snapshot_t{t:08.2f}.svg"
        path.write_text(snapshot(domain, float(logged[k]), bars, agents, targets))
        written.append(path)
    return written


# ---------------------------------------------------------------- commands


def simulate(scn: Scenario) -> dict:
    out = scn.out_dir
    out.mkdir(parents=True, exist_ok=True)
    started = time.perf_counter()
    sim = Simulation(scn.config)
    state, lg, summary = sim.run()
    elapsed = time.perf_counter() - started
    (out / DOMAIN_FILE).write_text(json.dumps(domain_dict(scn.config.domain, scn.config.spacing), indent=2) + "\n")
    write_trajectory(out / "trajectory.csv", lg, scn.log_every)
    write_diagnostics(out / "diagnostics.csv", lg)
    report = summary.as_dict()
    report["scenario"] = scn.name
    report["seed"] = scn.config.seed
    report["convergence"] = convergence_report(lg, scn.config)
    report["runtime_s"] = round(elapsed, 3)
    (out / "summary.json").write_text(json.dumps(report, indent=2) + "\n")
    snaps = [t for t in scn.snapshots if t <= state.time + TIME_TOL]
    render_snapshots(out / "trajectory.csv", snaps)
    return report


def _overrides(args) -> dict:
    return {"seed": args.seed, "out": args.out, "dt": args.dt, "T": args.T}


def cmd_simulate(args) -> int:
    scn = load(args.scenario, _overrides(args))
    report = simulate(scn)
    print(f"{scn.name}: {report['steps']} steps, final imbalance {report['final_relative_imbalance']:.3g}, "
          f"max target distance {max(report['final_target_distances']):.3g}; outputs in {scn.out_dir}")
    return 0


def cmd_check(args) -> int:
    scn = load(args.scenario, {"seed": args.seed})
    cfg = scn.config
    grid = build_grid(cfg.domain, cfg.spacing)
    results = run_checks(cfg.domain, cfg.density, grid, cfg.n_agents, cfg.seed, cfg.cost)
    print(f"checks for {scn.name} (spacing {cfg.spacing:g}, N={cfg.n_agents})")
    for r in results:
        print(r.row())
    failed = [r for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} passed")
    return 1 if failed else 0


def cmd_plot(args) -> int:
    times = [float(t) for t in args.times.split(",") if t.strip()] if args.times else []
    for p in render_snapshots(Path(args.csv), times, args.out):
        print(p)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="annulus-coverage", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run a scenario and write trajectory, diagnostics, summary and snapshots")
    p.add_argument("scenario", help="scenario YAML path or bundled name (case_study, circular_uniform)")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", type=Path)
    p.add_argument("--dt", type=float)
    p.add_argument("--T", type=float)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("check", help="run oracle and property checks for a scenario's domain and density")
    p.add_argument("scenario")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("plot", help="render SVG snapshots from a trajectory CSV")
    p.add_argument("csv")
    p.add_argument("--times", default="", help="comma-separated times, e.g. 0,40")
    p.add_argument("--out", type=Path)
    p.set_defaults(func=cmd_plot)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ScenarioError as exc:
        print(f"scenario error: {exc}", file=sys.stderr)
        return 2
    except ResolutionError as exc:
        print(f"resolution error: {exc}", file=sys.stderr)
        return 3
    except MissingTimeError as exc:
        print(f"missing time: {exc}", file=sys.stderr)
        return 4
    except (SimulationError, ValueError, RuntimeError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
