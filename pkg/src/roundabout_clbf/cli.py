"""Command-line front end.

Examples::

    roundabout-sim --controller mpc-clbf --horizon 20 --duration 300 --out-dir out
    roundabout-sim --compare --horizon 10 20 30 --seed 3 --out-dir cmp --emit-plots
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from typing import Dict, List, Optional, Sequence

from .metrics import summarize_trips, trips_from_rows
from .sim import COLUMNS, CONTROLLERS, ScenarioConfig, SimResult, generate_arrivals, run

log = logging.getLogger("roundabout_clbf")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3


class ConfigError(ValueError):
    pass


def load_config(path: Optional[str]) -> dict:
    """Flat JSON object whose keys are scenario fields; anything else is rejected."""
    if path is None:
        return {}
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    known = set(ScenarioConfig.field_names())
    unknown = sorted(set(doc) - known)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    for key, val in doc.items():
        if isinstance(val, (dict,)) or (isinstance(val, list) and key != "arrival_rates"):
            raise ConfigError(f"config key {key} must be a scalar")
    return doc


def make_config(doc: dict, **overrides) -> ScenarioConfig:
    merged = dict(doc)
    merged.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return ScenarioConfig(**merged)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def _fmt(val) -> str:
    if isinstance(val, float):
        return repr(val)
    return str(val)


def write_trajectories(rows: Sequence[tuple], path: str, Td: float = 0.1) -> None:
    """CSV with one row per vehicle per step; floats use the shortest round-trip form."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(COLUMNS)
        for r in rows:
            t = round(r[0], 9)
            w.writerow([_fmt(t)] + [_fmt(v) for v in r[1:]])


def read_trajectories(path: str) -> List[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def summary_from_table(path: str, Td: float, beta: float) -> dict:
    """Recompute time, energy and objective totals from a trajectory table."""
    tt, ee, obj, _ = summarize_trips(trips_from_rows(read_trajectories(path), Td), beta)
    return {"total_time": tt, "total_energy": ee, "total_objective": obj}


def write_summary(result: SimResult, cfg: ScenarioConfig, path: str) -> None:
    doc = {"summary": result.summary.to_dict(), "config": _config_dict(cfg)}
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _config_dict(cfg: ScenarioConfig) -> dict:
    d = {k: getattr(cfg, k) for k in ScenarioConfig.field_names()}
    d["arrival_rates"] = list(cfg.arrival_rates)
    return d


def plot_profiles(rows: Sequence[tuple], path: str, cav_id: Optional[int] = None, title: str = "") -> Optional[int]:
    """Speed and acceleration of one vehicle against time, as an SVG file.

    Picks ``cav_id`` when present in the log, otherwise the largest id not above it.
    Returns the id plotted, or None for an empty log.
    """
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    ids = sorted({r[1] for r in rows})
    if not ids:
        return None
    if cav_id is None or cav_id not in ids:
        below = [i for i in ids if cav_id is None or i <= cav_id]
        cav_id = below[-1] if below else ids[0]
    mine = [r for r in rows if r[1] == cav_id]
    t = [r[0] for r in mine]
    fig, (ax_v, ax_u) = plt.subplots(2, 1, sharex=True, figsize=(6, 5))
    ax_v.plot(t, [r[5] for r in mine])
    ax_v.set_ylabel("speed [m/s]")
    ax_u.plot(t, [r[6] for r in mine])
    ax_u.set_ylabel("acceleration [m/s^2]")
    ax_u.set_xlabel("time [s]")
    fig.suptitle(title or f"vehicle {cav_id}")
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return cav_id


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="roundabout-sim",
                                description="Closed-loop CAV roundabout simulation.")
    p.add_argument("--config", help="flat JSON scenario file")
    p.add_argument("--controller", choices=CONTROLLERS)
    p.add_argument("--horizon", type=int, nargs="+", metavar="H",
                   help="MPC horizon; several values run a sweep")
    p.add_argument("--seed", type=int)
    p.add_argument("--duration", type=float, help="arrival window in seconds")
    p.add_argument("--out-dir", default="out")
    p.add_argument("--emit-plots", action="store_true", help="write SVG speed/control profiles")
    p.add_argument("--plot-cav", type=int, default=30, help="vehicle id to plot")
    p.add_argument("--compare", action="store_true",
                   help="run every controller on one shared arrival trace")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def plan_runs(base: ScenarioConfig, horizons: Optional[List[int]], compare: bool) -> List[ScenarioConfig]:
    hs = horizons or [base.H]
    ctrls = list(CONTROLLERS) if compare else [base.controller]
    runs = []
    for c in ctrls:
        if c == "mpc-clbf":
            runs.extend(base.replace(controller=c, H=h) for h in hs)
        else:
            runs.append(base.replace(controller=c))
    return runs


def run_label(cfg: ScenarioConfig) -> str:
    return f"{cfg.controller}-H{cfg.H}" if cfg.controller == "mpc-clbf" else cfg.controller


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        doc = load_config(args.config)
        base = make_config(doc, controller=args.controller, seed=args.seed, duration=args.duration,
                           H=args.horizon[0] if args.horizon else None)
        if args.horizon and any(h < 1 for h in args.horizon):
            raise ConfigError("horizons must be >= 1")
        runs = plan_runs(base, args.horizon, args.compare)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    trace = generate_arrivals(base)
    single = len(runs) == 1
    index: Dict[str, dict] = {}
    try:
        os.makedirs(args.out_dir, exist_ok=True)
        for cfg in runs:
            label = run_label(cfg)
            out = args.out_dir if single else os.path.join(args.out_dir, label)
            os.makedirs(out, exist_ok=True)
            result = run(cfg, trace)
            write_trajectories(result.rows, os.path.join(out, "trajectories.csv"), cfg.Td)
            write_summary(result, cfg, os.path.join(out, "summary.json"))
            if args.emit_plots:
                plot_profiles(result.rows, os.path.join(out, "profiles.svg"), args.plot_cav,
                              title=f"{label}: vehicle {args.plot_cav}")
            s = result.summary
            index[label] = s.to_dict()
            print(f"{label}: objective={s.total_objective:.2f} time={s.total_time:.1f} "
                  f"energy={s.total_energy:.2f} infeasible={s.infeasible_count} "
                  f"unsafe={s.unsafe_count} completed={s.n_completed}/{s.n_arrivals}")
        if not single:
            with open(os.path.join(args.out_dir, "comparison.json"), "w") as fh:
                json.dump(index, fh, indent=2, sort_keys=True)
                fh.write("\n")
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
