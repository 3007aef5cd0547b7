"""Command-line experiment runner.

Every subcommand reads one JSON config (``--config``), lets flags override it,
validates the result before computing anything, writes its tables and a
``manifest.json`` into ``--out`` and exits nonzero iff a verdict expected for
the configured regime fails. Invalid configs exit with status 2 and a JSON
error report.
"""

from __future__ import annotations

import argparse
import concurrent.futures as cf
import csv
import hashlib
import io
import json
import logging
import math
import os
import platform
import sys
import tempfile
import time
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .constructions import degeneracy_sweep, strict_gap_curve
from .grid import Grid, Params
from .riesz import build_kernel
from .selftest import (
    gradient_check,
    multiplier_minimum,
    newtonian_gaussian_error,
    random_test_pair,
    semigroup_defect,
)
from .solve import (
    SolveOptions,
    canonical_dipole_init,
    canonical_groundstate_init,
    level_report,
    solve_groundstate,
    solve_nodal,
    write_history_csv,
)

log = logging.getLogger("choquard")

COMMANDS = ("levels", "strict-gap", "sweep-p", "degeneracy", "kernel-selftest", "gradcheck")
KERNEL_CHOICES = {"truncated": "truncated_kernel", "truncated_kernel": "truncated_kernel",
                  "spectral": "spectral"}

DEFAULTS = {
    "params": {"N": 2, "alpha": 1.0, "p": 2.5, "mode": "choquard"},
    "grid": {"n": 256, "L": 40.0},
    "kernel": "truncated_kernel",
    "solver": {},
    "seed": 0,
    "out": "runs",
    "R_list": [4, 6, 8, 10, 12],
    "p_list": [1.8, 2.0, 2.5],
}


class ConfigError(ValueError):
    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field_name = field_name
        self.message = message


@dataclass(frozen=True)
class RunConfig:
    params: Params
    grid: Grid
    kernel: str
    solver: SolveOptions
    experiment: str
    out: str
    seed: int
    R_list: tuple = ()
    p_list: tuple = ()

    def echo(self) -> dict:
        return {
            "params": self.params.to_dict(),
            "grid": self.grid.to_dict(),
            "kernel": self.kernel,
            "solver": asdict(self.solver),
            "experiment": self.experiment,
            "seed": self.seed,
            "R_list": list(self.R_list),
            "p_list": list(self.p_list),
        }

    def kernel_for(self, params: Params | None = None):
        params = params or self.params
        if params.mode != "choquard":
            return None
        return build_kernel(self.grid, params.alpha, self.kernel)


def _merge(base: dict, top: dict) -> dict:
    out = dict(base)
    for k, v in top.items():
        out[k] = _merge(out[k], v) if isinstance(v, dict) and isinstance(out.get(k), dict) else v
    return out


def build_config(experiment: str, raw: dict) -> RunConfig:
    """Validate a merged config dictionary; raise :class:`ConfigError` on the first problem."""
    known = set(DEFAULTS) | {"experiment"}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ConfigError(unknown[0], "unknown config key")
    cfg = _merge(DEFAULTS, raw)
    pr = cfg["params"]
    try:
        params = Params(int(pr["N"]), float(pr["alpha"]), float(pr["p"]), pr.get("mode", "choquard"))
    except (KeyError, TypeError) as exc:
        raise ConfigError("params", f"missing or malformed field ({exc})") from None
    except ValueError as exc:
        raise ConfigError("params", str(exc)) from None
    try:
        grid = Grid(params.N, int(cfg["grid"]["n"]), float(cfg["grid"]["L"]))
    except (KeyError, TypeError) as exc:
        raise ConfigError("grid", f"missing or malformed field ({exc})") from None
    except ValueError as exc:
        raise ConfigError("grid", str(exc)) from None
    kernel = KERNEL_CHOICES.get(cfg["kernel"])
    if kernel is None:
        raise ConfigError("kernel", f"unknown kernel {cfg['kernel']!r}")
    seed = cfg["seed"]
    if not isinstance(seed, int) or isinstance(seed, bool) or seed < 0:
        raise ConfigError("seed", "must be a nonnegative integer")
    solver_raw = dict(cfg["solver"])
    solver_raw["seed"] = seed
    try:
        solver = SolveOptions(**solver_raw)
    except TypeError as exc:
        raise ConfigError("solver", str(exc)) from None
    except ValueError as exc:
        raise ConfigError("solver", str(exc)) from None
    try:
        R_list = tuple(float(r) for r in cfg["R_list"])
        p_list = tuple(float(p) for p in cfg["p_list"])
    except (TypeError, ValueError) as exc:
        raise ConfigError("R_list/p_list", str(exc)) from None
    if any(not r > 0 for r in R_list):
        raise ConfigError("R_list", "separations must be positive")
    if experiment == "sweep-p":
        for p in p_list:
            try:
                Params(params.N, params.alpha, p, params.mode)
            except ValueError as exc:
                raise ConfigError("p_list", f"p={p}: {exc}") from None
    if experiment == "degeneracy" and not params.p < 2:
        raise ConfigError("params.p", "the degeneracy experiment needs p < 2")
    if experiment == "strict-gap" and not params.p > 1:
        raise ConfigError("params.p", "need p > 1")
    return RunConfig(params, grid, kernel, solver, experiment, str(cfg["out"]), seed,
                     R_list, p_list)


# -- output helpers ---------------------------------------------------------------

def _atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    with os.fdopen(fd, "w", newline="") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _json_text(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2, default=_jsonable) + "\n"


def _jsonable(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.bool_):
        return bool(obj)
    raise TypeError(f"not serializable: {type(obj).__name__}")


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow(row)
    return buf.getvalue()


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def _sha256(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def write_manifest(out: Path, cfg: RunConfig, command: str, wall: float, outputs: list[str],
                   status: int) -> None:
    config_text = json.dumps(cfg.echo(), sort_keys=True)
    manifest = {
        "command": command,
        "config": cfg.echo(),
        "input_hash": _sha256(config_text.encode()),
        "outputs": {name: _sha256((out / name).read_bytes()) for name in sorted(outputs)},
        "versions": {"artifact": __version__, "python": platform.python_version(),
                     "numpy": np.__version__, "scipy": scipy.__version__},
        "wall_time_s": round(wall, 3),
        "exit_status": status,
    }
    _atomic_write(out / "manifest.json", _json_text(manifest))


# -- commands ---------------------------------------------------------------------

def cmd_levels(cfg: RunConfig, out: Path) -> tuple[int, list[str]]:
    kernel = cfg.kernel_for()
    report = level_report(cfg.params, kernel, cfg.solver, cfg.grid)
    _atomic_write(out / "levels.json", report.to_json() + "\n")
    names = ["levels.json"]
    for level, result in report.results.items():
        name = f"history_{level}.csv"
        write_history_csv(result, out / name)
        names.append(name)
    return (0 if report.expected_ok else 1), names


def cmd_strict_gap(cfg: RunConfig, out: Path) -> tuple[int, list[str]]:
    kernel = cfg.kernel_for()
    gs = solve_groundstate(cfg.params, kernel, cfg.solver,
                           canonical_groundstate_init(cfg.grid, cfg.seed, cfg.solver.perturbation))
    if not gs.converged:
        log.warning("groundstate did not converge (residual %.3e)", gs.residual)
    curve = strict_gap_curve(cfg.params, gs.minimizer, cfg.R_list, kernel_mode=cfg.kernel)
    rows = [[_fmt(r[k]) for k in ("R", "t_R", "action", "gap")] for r in curve.rows]
    text = _csv_text(["R", "t_R", "action", "gap"], rows)
    text += f"# fitted exponent {_fmt(curve.exponent)} coefficient {_fmt(curve.coefficient)}\n"
    for note in curve.skipped:
        text += f"# skipped {note}\n"
    _atomic_write(out / "strict_gap.csv", text)
    target = -(cfg.params.N - cfg.params.alpha)
    verdicts = {
        "three rows": len(curve.rows) >= 3,
        "gap positive at largest R": bool(curve.rows) and curve.rows[-1]["gap"] > 0,
        "exponent within 15%": math.isfinite(curve.exponent)
        and abs(curve.exponent - target) <= 0.15 * abs(target),
    }
    summary = {"c_0": curve.c_0, "grid": curve.grid.to_dict(), "exponent": curve.exponent,
               "coefficient": curve.coefficient, "target_exponent": target,
               "verdicts": verdicts, "groundstate_converged": gs.converged}
    _atomic_write(out / "strict_gap.json", _json_text(summary))
    return (0 if all(verdicts.values()) else 1), ["strict_gap.csv", "strict_gap.json"]


def _sweep_point(cfg: RunConfig, p: float) -> dict:
    params = Params(cfg.params.N, cfg.params.alpha, p, cfg.params.mode)
    try:
        report = level_report(params, cfg.kernel_for(params), cfg.solver, cfg.grid)
    except Exception as exc:  # per-point failures are recorded, the sweep continues
        return {"p": p, "error": f"{type(exc).__name__}: {exc}"}
    d = report.to_dict()
    d["p"] = p
    d["expected_ok"] = report.expected_ok
    return d


def _workers() -> int:
    env = os.environ.get("CHOQUARD_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            log.warning("ignoring non-integer CHOQUARD_THREADS=%r", env)
    return os.cpu_count() or 1


def cmd_sweep_p(cfg: RunConfig, out: Path) -> tuple[int, list[str]]:
    points = list(cfg.p_list)
    workers = min(_workers(), len(points)) or 1
    results = {}
    names = []
    if workers == 1:
        for p in points:
            results[p] = _sweep_point(cfg, p)
    else:
        with cf.ProcessPoolExecutor(max_workers=workers) as pool:
            futures = {pool.submit(_sweep_point, cfg, p): p for p in points}
            for fut in cf.as_completed(futures):
                results[futures[fut]] = fut.result()
    for p in points:
        name = f"point_p{p:g}.json"
        _atomic_write(out / name, _json_text(results[p]))
        names.append(name)
    header = ["p", "regime", "c_0", "c_odd", "c_nod", "sign_collapsed", "verdicts_ok", "error"]
    rows, status = [], 0
    for p in points:
        r = results[p]
        if "error" in r:
            rows.append([_fmt(p), "", "", "", "", "", "false", r["error"]])
            status = 1
            continue
        lv = r["levels"]
        regime = r["regime"]
        ok = r["expected_ok"]
        # the p = 2 row carries no verdict
        verdict = "" if regime == "boundary" else _fmt(ok)
        if regime != "boundary" and not ok:
            status = 1
        rows.append([_fmt(p), regime, _fmt(lv["c_0"]), _fmt(lv["c_odd"]), _fmt(lv["c_nod"]),
                     _fmt(r["flags"]["c_nod"]["sign_collapsed"]), verdict, ""])
    _atomic_write(out / "sweep_p.csv", _csv_text(header, rows))
    return status, names + ["sweep_p.csv"]


def cmd_degeneracy(cfg: RunConfig, out: Path) -> tuple[int, list[str]]:
    params, kernel, opts = cfg.params, cfg.kernel_for(), cfg.solver
    gs = solve_groundstate(params, kernel, opts,
                           canonical_groundstate_init(cfg.grid, cfg.seed, opts.perturbation))
    sweep = degeneracy_sweep(params, kernel, gs.minimizer, gs.level)
    keys = ["delta", "s_plus", "s_minus", "limit_minus", "action", "discrete_action",
            "h1_distance", "note"]
    _atomic_write(out / "degeneracy.csv",
                  _csv_text(keys, [[_fmt(r[k]) for k in keys] for r in sweep.rows]))
    nod = solve_nodal(params, kernel, opts,
                      canonical_dipole_init(cfg.grid, cfg.seed, opts.perturbation))
    write_history_csv(nod, out / "nodal_history.csv")
    c_0 = gs.level
    min_action = sweep.min_action
    verdicts = {
        "family minimum within 1% of c_0": abs(min_action - c_0) <= 0.01 * c_0,
        "family actions >= c_0 (1 - grad_tol)": all(
            r["action"] >= c_0 * (1 - opts.grad_tol) for r in sweep.rows
            if math.isfinite(r["action"])),
        "nodal descent sign_collapsed": nod.flags["sign_collapsed"],
        "nodal level within 1% of c_0": abs(nod.level - c_0) <= 0.01 * c_0,
    }
    summary = {
        "c_0": c_0,
        "family_min_action": min_action,
        "limit_minus": sweep.limit_minus,
        "extrapolated_minus": sweep.extrapolated_minus(params.p),
        "nodal": {"level": nod.level, "flags": nod.flags, "iterations": nod.iterations,
                  "diagnostics": nod.diagnostics},
        "verdicts": verdicts,
    }
    _atomic_write(out / "degeneracy.json", _json_text(summary))
    return (0 if all(verdicts.values()) else 1), ["degeneracy.csv", "degeneracy.json",
                                                   "nodal_history.csv"]


def cmd_kernel_selftest(cfg: RunConfig, out: Path) -> tuple[int, list[str]]:
    semigroup = semigroup_defect(cfg.grid, cfg.params.alpha, cfg.seed)
    newton = newtonian_gaussian_error()
    positivity = multiplier_minimum(cfg.grid, cfg.params.alpha)
    verdicts = {"semigroup <= 1e-12": semigroup <= 1e-12,
                "newtonian gaussian <= 5e-3": newton <= 5e-3,
                "truncated multiplier positive": positivity > 0}
    summary = {"semigroup_defect": semigroup, "newtonian_gaussian_error": newton,
               "truncated_multiplier_min_over_max": positivity, "verdicts": verdicts}
    _atomic_write(out / "kernel_selftest.json", _json_text(summary))
    return (0 if all(verdicts.values()) else 1), ["kernel_selftest.json"]


def cmd_gradcheck(cfg: RunConfig, out: Path, samples: int = 20) -> tuple[int, list[str]]:
    kernel = cfg.kernel_for()
    eps_list = [1e-1, 5e-2, 2.5e-2, 1.25e-2]
    rows, worst, slopes = [], 0.0, []
    for i in range(samples):
        u, phi = random_test_pair(cfg.grid, cfg.seed * 1000 + i)
        err = gradient_check(cfg.params, kernel, u, phi, 1e-5)
        sweep = [gradient_check(cfg.params, kernel, u, phi, e) for e in eps_list]
        slope = float(np.polyfit(np.log(eps_list), np.log(sweep), 1)[0])
        worst = max(worst, err)
        slopes.append(slope)
        rows.append([str(i), _fmt(err), _fmt(slope)])
    _atomic_write(out / "gradcheck.csv", _csv_text(["sample", "rel_error", "order"], rows))
    verdicts = {"relative error <= 1e-6": worst <= 1e-6,
                "order 2 +- 0.2": all(abs(s - 2) <= 0.2 for s in slopes)}
    _atomic_write(out / "gradcheck.json",
                  _json_text({"max_rel_error": worst, "orders": slopes, "verdicts": verdicts}))
    return (0 if all(verdicts.values()) else 1), ["gradcheck.csv", "gradcheck.json"]


HANDLERS = {
    "levels": cmd_levels,
    "strict-gap": cmd_strict_gap,
    "sweep-p": cmd_sweep_p,
    "degeneracy": cmd_degeneracy,
    "kernel-selftest": cmd_kernel_selftest,
    "gradcheck": cmd_gradcheck,
}


# -- argument handling ------------------------------------------------------------

def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="choquard", description=__doc__.splitlines()[0])
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", type=Path, help="JSON config file")
    parser.add_argument("--out", help="output directory")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--kernel", choices=("truncated", "spectral"))
    parser.add_argument("--grid", type=int, metavar="N", help="nodes per axis")
    parser.add_argument("--box", type=float, metavar="L", help="box length")
    parser.add_argument("--p", type=float, help="override params.p")
    parser.add_argument("--R-list", type=float, nargs="+", dest="R_list")
    parser.add_argument("--p-list", type=float, nargs="+", dest="p_list")
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def _overrides(args) -> dict:
    top: dict = {}
    if args.out is not None:
        top["out"] = args.out
    if args.seed is not None:
        top["seed"] = args.seed
    if args.kernel is not None:
        top["kernel"] = args.kernel
    if args.grid is not None:
        top.setdefault("grid", {})["n"] = args.grid
    if args.box is not None:
        top.setdefault("grid", {})["L"] = args.box
    if args.p is not None:
        top["params"] = {"p": args.p}
    if args.R_list is not None:
        top["R_list"] = args.R_list
    if args.p_list is not None:
        top["p_list"] = args.p_list
    return top


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    raw: dict = {}
    if args.config is not None:
        try:
            raw = json.loads(args.config.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            print(_json_text({"error": "config", "field": "--config", "message": str(exc)}),
                  end="", file=sys.stderr)
            return 2
        if not isinstance(raw, dict):
            print(_json_text({"error": "config", "field": "--config",
                              "message": "config must be a JSON object"}),
                  end="", file=sys.stderr)
            return 2
        raw.pop("experiment", None)
    raw = _merge(raw, _overrides(args))
    try:
        cfg = build_config(args.command, raw)
    except ConfigError as exc:
        report = {"error": "validation", "field": exc.field_name, "message": exc.message}
        print(_json_text(report), end="", file=sys.stderr)
        out = raw.get("out")
        if out:
            _atomic_write(Path(out) / "error.json", _json_text(report))
        return 2
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    start = time.perf_counter()
    status, outputs = HANDLERS[args.command](cfg, out)
    write_manifest(out, cfg, args.command, time.perf_counter() - start, outputs, status)
    log.info("%s finished with status %d", args.command, status)
    return status


if __name__ == "__main__":
    sys.exit(main())
