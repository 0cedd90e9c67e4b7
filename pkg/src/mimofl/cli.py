"""Batch experiments: scheme comparisons over seeded drops, sweeps over M or t_QoS.

Usage::

    mimofl run --sweep qos --values 1,2,3,4 --schemes OPT_SB,OPT_Syn --drops 4 --out qos.csv
    mimofl sizes --k 10
    mimofl trace --scheme OPT_SB --seed 3 --out trace.csv
"""

from __future__ import annotations

import argparse
import csv
import logging
import math
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .cvx import SolverError
from .heur import HEURISTICS
from .models import energy_sb, energy_single, validate_schedule_feasibility
from .netgen import ConfigError, NetworkConfig, load_config, make_drop
from .sca import InitialPointError, run_algorithm1, run_algorithm2, binarize_and_polish

log = logging.getLogger(__name__)

SCHEMES = ("OPT_SB", "OPT_Asyn", "OPT_Syn", "HEU_SB", "HEU_Asyn", "HEU_Syn")
SWEEPS = {"antennas": "M", "qos": "t_qos_s", None: None}
CSV_COLUMNS = ("sweep_param", "value", "scheme", "drop", "e_dl", "e_comp", "e_ul", "total", "iters", "feasible")


def parse_scheme(name):
    for s in SCHEMES:
        if s.lower() == str(name).strip().lower():
            return s
    raise ValueError(f"unknown scheme {name!r}; choose from {', '.join(SCHEMES)}")


@dataclass
class ExperimentPlan:
    """What to run.  Drop ``d`` uses seed ``seed + d`` at every sweep point and
    for every scheme, so schemes are compared on the same UE placements."""

    scenario: NetworkConfig = field(default_factory=NetworkConfig.paper_defaults)
    sweep: str | None = None            # "antennas", "qos" or None
    values: tuple = ()
    schemes: tuple = SCHEMES
    n_drops: int = 1
    seed: int = 0

    def __post_init__(self):
        self.values = tuple(self.values)
        self.schemes = tuple(parse_scheme(s) for s in self.schemes)
        self.validate()

    def validate(self):
        if self.sweep not in SWEEPS:
            raise ConfigError(f"sweep must be one of antennas, qos or none (got {self.sweep!r})")
        if int(self.n_drops) < 1:
            raise ConfigError("n_drops must be >= 1")
        if not self.schemes:
            raise ConfigError("no schemes selected")
        if self.sweep is None and self.values:
            raise ConfigError("values given without a sweep")
        if self.sweep is not None and not self.values:
            raise ConfigError("a sweep needs at least one value")
        for _, cfg in self.points():
            if cfg.M <= cfg.K:
                raise ConfigError(f"M must exceed K (M={cfg.M}, K={cfg.K})")

    @property
    def sweep_param(self):
        return SWEEPS[self.sweep] or "none"

    def points(self):
        """``(value, NetworkConfig)`` per sweep point."""
        if self.sweep is None:
            return [("", self.scenario)]
        key = SWEEPS[self.sweep]
        out = []
        for v in self.values:
            v = int(v) if key == "M" else float(v)
            out.append((v, self.scenario.replace(**{key: v})))
        return out


@dataclass
class RunRecord:
    """One (sweep value, scheme, drop) outcome; ``row()`` is the CSV view."""

    sweep_param: str
    value: object
    scheme: str
    drop: int
    energy: object = None
    iters: int = 0
    feasible: bool = False
    converged: bool = False
    trace: object = None
    vars: object = None
    info: dict = field(default_factory=dict)
    seconds: float = 0.0

    def row(self):
        e = self.energy
        vals = (e.e_dl, e.e_comp, e.e_ul, e.total) if e is not None else (math.nan,) * 4
        return [self.sweep_param, _fmt(self.value), self.scheme, self.drop,
                *(_fmt(x) for x in vals), self.iters, int(self.feasible)]


def _fmt(x):
    if isinstance(x, float):
        return repr(x)
    return str(x)


def run_scheme(scheme, state, config, seed=None):
    """Solve one scheme on one drop; returns ``(vars, energy, iters, trace, info)``."""
    kind, design = scheme.split("_")
    design = design.lower()
    if kind == "HEU":
        v = HEURISTICS[design](state, config)
        e = energy_sb(v, state, config) if design == "sb" else energy_single(v, state, config)
        return v, e, 0, None, {}
    if design == "sb":
        res = run_algorithm1(state, config, seed=seed)
        v, info = binarize_and_polish(res, state, config)
        info["converged"] = res.converged
        info["lambda"] = res.penalty.lam
        info["relaxed"] = res.vars
        return v, energy_sb(v, state, config), res.iterations, res.trace, info
    res = run_algorithm2(state, config, design, seed=seed)
    v = res.vars
    return v, energy_single(v, state, config), res.iterations, res.trace, {"converged": res.converged}


def _run_task(args):
    sweep_param, value, config, scheme, drop, seed = args
    rec = RunRecord(sweep_param, value, scheme, drop)
    _, state = make_drop(config, seed)
    t0 = time.perf_counter()
    try:
        v, e, iters, trace, info = run_scheme(scheme, state, config, seed=seed)
    except (SolverError, InitialPointError, ValueError, np.linalg.LinAlgError) as exc:
        rec.seconds = time.perf_counter() - t0
        rec.info = {"error": f"{type(exc).__name__}: {exc}"}
        log.info("%s drop %d at %s=%s failed: %s", scheme, drop, sweep_param, value, exc)
        return rec
    rec.seconds = time.perf_counter() - t0
    report = validate_schedule_feasibility(v, state, config, scheme.split("_")[1].lower())
    rec.energy, rec.iters, rec.trace, rec.vars, rec.info = e, iters, trace, v, info
    rec.feasible = report.ok(1e-6)
    rec.converged = bool(info.get("converged", True))
    rec.info["max_violation"] = report.max_violation
    return rec


def plan_tasks(plan: ExperimentPlan):
    tasks = []
    for value, cfg in plan.points():
        for scheme in plan.schemes:
            for d in range(plan.n_drops):
                tasks.append((plan.sweep_param, value, cfg, scheme, d, plan.seed + d))
    return tasks


def run_plan(plan: ExperimentPlan, workers=1):
    """All records of ``plan`` in (sweep value, scheme, drop) order.

    Failed drops come back with ``feasible=False`` instead of raising.
    """
    tasks = plan_tasks(plan)
    if workers and workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(_run_task, tasks))
    else:
        records = [_run_task(t) for t in tasks]
    return records


def summarize(records):
    """Mean energies over feasible drops per (value, scheme)."""
    groups = {}
    for r in records:
        groups.setdefault((r.value, r.scheme), []).append(r)
    out = {}
    for key, recs in groups.items():
        ok = [r.energy for r in recs if r.feasible]
        if not ok:
            out[key] = None
            continue
        out[key] = {
            "e_dl": float(np.mean([e.e_dl for e in ok])),
            "e_comp": float(np.mean([e.e_comp for e in ok])),
            "e_ul": float(np.mean([e.e_ul for e in ok])),
            "total": float(np.mean([e.total for e in ok])),
            "n": len(ok),
        }
    return out


def write_csv(records, path_or_file):
    close = not hasattr(path_or_file, "write")
    fh = open(path_or_file, "w", newline="") if close else path_or_file
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in records:
            w.writerow(r.row())
    finally:
        if close:
            fh.close()


# ---------------------------------------------------------------------------
# complexity bookkeeping


def report_problem_sizes(K):
    """Variable (V), linear (L) and quadratic (Q) constraint counts per design
    and the resulting ``sqrt(L+Q) (V+L+Q) V^2`` interior-point figure."""
    K = int(K)
    if K < 1:
        raise ValueError("K must be >= 1")
    counts = {
        "sb": (16 * K**2 + 5 * K + 2, 7 * K**2 + 12 * K + 1, 12 * K**2),
        "asyn": (9 * K + 1, 11 * K + 1, 6 * K),
        "syn": (7 * K + 4, 7 * K + 2, 7 * K),
    }
    out = {}
    for design, (V, L, Q) in counts.items():
        out[design] = {"V": V, "L": L, "Q": Q, "complexity": math.sqrt(L + Q) * (V + L + Q) * V**2}
    return out


# ---------------------------------------------------------------------------
# command line


def _csv_list(text, cast=str):
    return [cast(x) for x in text.split(",") if x.strip()]


def _load_scenario(path):
    return load_config(path) if path else NetworkConfig.paper_defaults()


def build_parser():
    p = argparse.ArgumentParser(prog="mimofl", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="cmd", required=True)

    r = sub.add_parser("run", help="run schemes over seeded drops and write the result CSV")
    r.add_argument("--config", help="scenario file (YAML key/value); default: paper setup")
    r.add_argument("--sweep", choices=("m", "qos", "none"), default="none")
    r.add_argument("--values", default="", help="comma separated sweep values")
    r.add_argument("--schemes", default=",".join(SCHEMES))
    r.add_argument("--drops", type=int, default=10)
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--workers", type=int, default=1)
    r.add_argument("--out", default="-")

    s = sub.add_parser("sizes", help="print problem sizes for K UEs")
    s.add_argument("--k", type=int, default=10)

    t = sub.add_parser("trace", help="write the per-iteration SCA trace of one run")
    t.add_argument("--scheme", required=True)
    t.add_argument("--config")
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--out", default="-")
    return p


def _open_out(path):
    return sys.stdout if path == "-" else open(path, "w", newline="")


def _cmd_run(args):
    sweep = {"m": "antennas", "qos": "qos", "none": None}[args.sweep]
    cast = int if sweep == "antennas" else float
    plan = ExperimentPlan(_load_scenario(args.config), sweep, _csv_list(args.values, cast),
                          _csv_list(args.schemes), args.drops, args.seed)
    records = run_plan(plan, workers=args.workers)
    fh = _open_out(args.out)
    try:
        write_csv(records, fh)
    finally:
        if fh is not sys.stdout:
            fh.close()
    return 0 if any(r.feasible for r in records) else 3


def _cmd_sizes(args):
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(["design", "V", "L", "Q", "complexity"])
    for design, c in report_problem_sizes(args.k).items():
        w.writerow([design, c["V"], c["L"], c["Q"], f"{c['complexity']:.6g}"])
    return 0


def _cmd_trace(args):
    scheme = parse_scheme(args.scheme)
    if not scheme.startswith("OPT"):
        raise ConfigError("traces exist only for the optimized schemes")
    config = _load_scenario(args.config)
    _, state = make_drop(config, args.seed)
    design = scheme.split("_")[1].lower()
    try:
        if design == "sb":
            res = run_algorithm1(state, config, seed=args.seed)
        else:
            res = run_algorithm2(state, config, design, seed=args.seed)
    except (SolverError, InitialPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    fh = _open_out(args.out)
    try:
        res.trace.to_csv(fh)
    finally:
        if fh is not sys.stdout:
            fh.close()
    return 0


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    cmd = {"run": _cmd_run, "sizes": _cmd_sizes, "trace": _cmd_trace}[args.cmd]
    try:
        return cmd(args)
    except (ConfigError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
