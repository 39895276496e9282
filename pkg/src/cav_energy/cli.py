"""Command-line front end: tables, scenario matrices, drive-cycle traces.

Exit codes: 0 success, 2 missing input, 3 invalid input, 4 model error.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import fields
from importlib import resources
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .corridor import Route, build_corridor, load_corridor
from .errors import InvalidInput, ModelError
from .pareto import (
    FORMAT_VERSION,
    ParetoGridSpec,
    ParetoSplitController,
    build_pareto_table,
    load_table,
    save_table,
)
from .powertrain.maps import load_maps, save_maps, synthesize_default_maps
from .sim import ScenarioConfig, load_drive_cycle, run_scenario, trace_drive_cycle
from .sim.scenario import ControllerCase
from .sim.traffic import TRAFFIC_LEVELS

log = logging.getLogger("cav_energy")

EXIT_OK, EXIT_MISSING, EXIT_INVALID, EXIT_MODEL = 0, 2, 3, 4
OUT_ENV = "CAV_ENERGY_OUT"
CASES = [c.value for c in ControllerCase]
LEVELS = list(TRAFFIC_LEVELS)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INVALID, f"{self.prog}: error: {message}\n")


def build_fingerprint() -> str:
    """Package version, digest of the package sources and of the default maps."""
    h = hashlib.sha256()
    root = resources.files("cav_energy")
    for p in sorted(Path(str(root)).rglob("*.py")):
        h.update(p.relative_to(Path(str(root))).as_posix().encode())
        h.update(p.read_bytes())
    maps = synthesize_default_maps().fingerprint()[:12]
    return f"cav-energy {__version__} (source {h.hexdigest()[:12]}, maps {maps}, table v{FORMAT_VERSION})"


# ------------------------------------------------------------------ helpers


def _out_dir(args) -> Path:
    return Path(args.out or os.environ.get(OUT_ENV) or "out")


def _read_yaml(path) -> dict:
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"config not found: {p}")
    try:
        data = yaml.safe_load(p.read_text()) or {}
    except yaml.YAMLError as exc:
        raise InvalidInput(f"{p}: {exc}") from None
    if not isinstance(data, dict):
        raise InvalidInput(f"{p}: expected a mapping at the top level")
    return data


def _maps(args):
    if args.maps:
        return load_maps(args.maps)
    return synthesize_default_maps()


def _controller(args, maps):
    """Fitted split controller from ``--table``, or built from the maps."""
    if getattr(args, "table", None):
        table = load_table(args.table, maps)
        return ParetoSplitController.from_table(table, maps)
    log.info("no --table given: building the Pareto table in memory")
    return ParetoSplitController().fit(maps=maps)


def _fmt(x) -> str:
    if x is None:
        return ""
    return repr(float(x)) if isinstance(x, (float, np.floating)) else str(x)


# ------------------------------------------------------------------ commands


def cmd_build_table(args) -> int:
    maps = _maps(args)
    params = _read_yaml(args.config) if args.config else {}
    known = {f.name for f in fields(ParetoGridSpec)}
    unknown = set(params) - known
    if unknown:
        raise InvalidInput(f"unknown grid settings: {sorted(unknown)}")
    spec = ParetoGridSpec(**{k: float(v) for k, v in params.items()})
    table = build_pareto_table(maps, spec)
    dest = Path(args.out) if args.out else _out_dir(args) / "pareto_table.csv"
    save_table(table, dest)
    print(f"wrote {dest}")
    print(f"cells: {table.n_cells} ({table.shape[0]} speeds x {table.shape[1]} demands)")
    print(f"infeasible cells: {table.n_infeasible}")
    return EXIT_OK


def cmd_export_maps(args) -> int:
    dest = save_maps(synthesize_default_maps(), _out_dir(args))
    print(f"wrote default maps to {dest}")
    return EXIT_OK


_MATRIX_KEYS = {"traffic", "cases", "seeds", "duration", "dt", "corridor", "flows", "trace_stride"}


def _matrix(args):
    cfg = _read_yaml(args.config) if args.config else {}
    unknown = set(cfg) - _MATRIX_KEYS
    if unknown:
        raise InvalidInput(f"unknown run settings: {sorted(unknown)}")

    def as_list(x):
        return x if isinstance(x, list) else [x]

    levels = args.traffic or as_list(cfg.get("traffic", ["high"]))
    cases = args.case or as_list(cfg.get("cases", CASES))
    seeds = args.seed if args.seed is not None else as_list(cfg.get("seeds", [0]))
    for lv in levels:
        if lv not in LEVELS:
            raise InvalidInput(f"unknown traffic level {lv!r}")
    for c in cases:
        if c not in CASES:
            raise InvalidInput(f"unknown controller case {c!r}")
    common = {
        "duration": float(args.duration if args.duration is not None else cfg.get("duration", 1800.0)),
        "dt": float(args.dt if args.dt is not None else cfg.get("dt", 0.1)),
        "trace_stride": float(cfg.get("trace_stride", 1.0)),
    }
    if "flows" in cfg:
        common["flows"] = {Route(k): float(v) for k, v in cfg["flows"].items()}
    corridor_path = cfg.get("corridor")
    if corridor_path is not None:
        base = Path(args.config).parent
        corridor_path = str((base / corridor_path) if not Path(corridor_path).is_absolute()
                            else Path(corridor_path))
    runs = [(lv, int(s), c) for lv in dict.fromkeys(levels) for s in dict.fromkeys(seeds)
            for c in dict.fromkeys(cases)]
    if not runs:
        raise InvalidInput("empty run matrix")
    return runs, common, corridor_path


def _run_one(job):
    (level, seed, case), common, corridor_path, maps_dir, table_path = job
    corridor = load_corridor(corridor_path) if corridor_path else build_corridor()
    ns = argparse.Namespace(maps=maps_dir, table=table_path)
    maps = _maps(ns)
    controller = _controller(ns, maps) if ControllerCase(case).has_pt else None
    cfg = ScenarioConfig(traffic_level=level, controller_case=case, seed=seed,
                         corridor=corridor, **common)
    res = run_scenario(cfg, maps=maps, controller=controller)
    return (level, seed, case), res.to_json(), res.records_csv(), res.traces_csv(), res.summary()


def _summary_rows(results):
    """Per (level, seed) rows plus seed means; improvement versus the baseline case."""
    rows = []
    by_level: dict[str, dict[str, list]] = {}
    for (level, seed, case), summ in sorted(results.items(), key=lambda kv: (
            LEVELS.index(kv[0][0]), kv[0][1], CASES.index(kv[0][2]))):
        agg = summ["aggregates"]
        mean = agg["mean"] if agg else None
        base = results.get((level, seed, "baseline"))
        base_mean = base["aggregates"]["mean"] if base and base["aggregates"] else None
        imp = 100.0 * (mean / base_mean - 1.0) if mean is not None and base_mean else None
        rows.append([level, seed, case, agg["count"] if agg else 0, mean,
                     agg["std"] if agg else None, imp])
        if mean is not None:
            by_level.setdefault(level, {}).setdefault(case, []).append((mean, agg["std"]))
    for level in sorted(by_level, key=LEVELS.index):
        cases = by_level[level]
        base = cases.get("baseline")
        base_mean = float(np.mean([m for m, _ in base])) if base else None
        for case in sorted(cases, key=CASES.index):
            mean = float(np.mean([m for m, _ in cases[case]]))
            std = float(np.mean([s for _, s in cases[case]]))
            imp = 100.0 * (mean / base_mean - 1.0) if base_mean else None
            rows.append([level, "mean", case, len(cases[case]), mean, std, imp])
    return rows


def cmd_simulate(args) -> int:
    runs, common, corridor_path = _matrix(args)
    if args.maps:
        load_maps(args.maps)  # fail early on a bad path
    if args.table and any(ControllerCase(c).has_pt for _, _, c in runs):
        load_table(args.table, _maps(args))
    out = _out_dir(args)
    (out / "csv").mkdir(parents=True, exist_ok=True)
    jobs = [(key, common, corridor_path, args.maps, args.table) for key in runs]
    if args.jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            done = list(pool.map(_run_one, jobs))
    else:
        done = [_run_one(j) for j in jobs]
    summaries = {}
    for (level, seed, case), js, rec_csv, trace_csv, summ in done:
        stem = f"{level}_{case}_seed{seed}"
        (out / f"{stem}.json").write_text(js)
        (out / "csv" / f"{stem}.records.csv").write_text(rec_csv)
        (out / "csv" / f"{stem}.traces.csv").write_text(trace_csv)
        summaries[(level, seed, case)] = summ
    rows = _summary_rows(summaries)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["level", "seed", "case", "vehicles", "mean_mpge", "std_mpge", "improvement_pct"])
    for r in rows:
        w.writerow([_fmt(x) for x in r])
    (out / "summary.csv").write_text(buf.getvalue())
    print(f"{'level':8} {'seed':>5} {'case':9} {'n':>5} {'MPGe':>8} {'std':>6} {'vs base':>8}")
    for level, seed, case, n, mean, std, imp in rows:
        m = f"{mean:8.2f}" if mean is not None else f"{'-':>8}"
        s = f"{std:6.2f}" if std is not None else f"{'-':>6}"
        i = f"{imp:7.1f}%" if imp is not None else f"{'-':>8}"
        print(f"{level:8} {seed!s:>5} {case:9} {n:5d} {m} {s} {i}")
    print(f"wrote {len(done)} runs and summary.csv to {out}")
    return EXIT_OK


def cmd_trace(args) -> int:
    maps = _maps(args)
    cycle = load_drive_cycle(args.cycle)
    cases = ["baseline", "pareto"] if args.case == "both" else [args.case]
    out = _out_dir(args)
    out.mkdir(parents=True, exist_ok=True)
    report = {"cycle": cycle.name, "distance_miles": cycle.distance_miles, "dt": args.dt,
              "results": {}}
    for case in cases:
        controller = _controller(args, maps) if case == "pareto" else None
        res = trace_drive_cycle(cycle, case, maps, controller, dt=args.dt)
        report["results"][case] = {"mpge": res.mpge, "fuel_gal": res.fuel_gal,
                                   "net_kwh": res.net_kwh, "rms_error_mps": res.rms_error,
                                   "distance_miles": res.distance_miles}
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t", "v_ref", "v", "soc"])
        ref = np.interp(res.t, cycle.t, cycle.v)
        for row in zip(res.t, ref, res.v, res.soc):
            w.writerow([_fmt(x) for x in row])
        (out / f"trace_{cycle.name}_{case}.csv").write_text(buf.getvalue())
        print(f"{cycle.name} {case:8} MPGe {res.mpge:7.3f}  tracking RMS {res.rms_error:.4f} m/s")
    if len(cases) == 2:
        b, p = (report["results"][c]["mpge"] for c in cases)
        report["improvement_pct"] = 100.0 * (p / b - 1.0)
        print(f"{cycle.name} improvement {report['improvement_pct']:.2f}%")
    (out / f"trace_{cycle.name}.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    return EXIT_OK


# ------------------------------------------------------------------ entry


def make_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="cav-energy", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=build_fingerprint())
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, table=True):
        sp.add_argument("--out", help=f"output path (default: ${OUT_ENV} or ./out)")
        sp.add_argument("--maps", help="efficiency-map directory (default: built-in synthetic maps)")
        if table:
            sp.add_argument("--table", help="Pareto table file (default: build from the maps)")

    b = sub.add_parser("build-table", help="build and save the Pareto split table")
    common(b, table=False)
    b.add_argument("--config", help="YAML with grid settings (torque_step, speed_step, ...)")
    b.set_defaults(func=cmd_build_table)

    s = sub.add_parser("simulate", help="run a scenario matrix")
    common(s)
    s.add_argument("--config", help="YAML run matrix (traffic, cases, seeds, duration, ...)")
    s.add_argument("--traffic", action="append", choices=LEVELS)
    s.add_argument("--case", action="append", choices=CASES)
    s.add_argument("--seed", action="append", type=int)
    s.add_argument("--dt", type=float)
    s.add_argument("--duration", type=float)
    s.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
    s.set_defaults(func=cmd_simulate)

    t = sub.add_parser("trace", help="trace a drive cycle with the powertrain")
    common(t)
    t.add_argument("--cycle", default="combined",
                   help="udds, hwfet, us06, combined, or a CSV path (seconds, mph)")
    t.add_argument("--case", default="both", choices=["baseline", "pareto", "both"])
    t.add_argument("--dt", type=float, default=0.1)
    t.set_defaults(func=cmd_trace)

    e = sub.add_parser("export-maps", help="write the default efficiency maps")
    e.add_argument("--out", help=f"output directory (default: ${OUT_ENV} or ./out)")
    e.set_defaults(func=cmd_export_maps)
    return p


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except InvalidInput as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except ModelError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_MODEL


if __name__ == "__main__":
    sys.exit(main())
