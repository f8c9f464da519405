"""Configuration-driven batch front end.

Subcommands: validate (outer-data and compatibility gates), solve
(transformed solve + reconstruction + residual audit), stability
(linearized perturbation pipeline), report (re-print a run summary).

Exit codes: 0 success, 1 parse or internal error, 2 validation or gate
failure, 3 convergence failure.  `--threads` is accepted and recorded in
the summary but intentionally has no effect: runs stay single-threaded
per process so identical configs give bit-identical grid files.
"""

import argparse
import ast
import json
import os
import sys
import traceback

import numpy as np

from . import gridio
from .config import load_config, parse_config
from .crocco import build_traces, check_compatibility
from .errors import ConfigParse, MissingBackground, NoConvergence, PrandtlError
from .flowfield import make_rect_domain, validate_euler
from .grids import GridSpec
from .presets import PRESET_NAMES, make_preset
from .reconstruct import prandtl_residual, reconstruct_state
from .solver import DEFAULT_OPTS, picard_solve
from .stability import (Background, PerturbationData, StabilityGrid,
                        run_perturbation)

_FUNCS = {"sin": np.sin, "cos": np.cos, "exp": np.exp, "tanh": np.tanh,
          "sqrt": np.sqrt, "log": np.log, "abs": np.abs}
_CONSTS = {"pi": np.pi}
_NODES = (ast.Expression, ast.BinOp, ast.UnaryOp, ast.Constant, ast.Name,
          ast.Load, ast.Call, ast.Add, ast.Sub, ast.Mult, ast.Div, ast.Pow,
          ast.USub, ast.UAdd)


def compile_expression(src, argnames, where):
    """Restricted arithmetic expression over the named arguments."""
    try:
        tree = ast.parse(src, mode="eval")
    except SyntaxError:
        raise ConfigParse(f"{where}: cannot parse expression {src!r}")
    for node in ast.walk(tree):
        if not isinstance(node, _NODES):
            raise ConfigParse(f"{where}: unsupported syntax in {src!r}")
        if isinstance(node, ast.Name):
            if node.id not in argnames and node.id not in _FUNCS \
                    and node.id not in _CONSTS:
                raise ConfigParse(f"{where}: unknown name {node.id!r} in {src!r}")
        if isinstance(node, ast.Call):
            if not isinstance(node.func, ast.Name) or node.func.id not in _FUNCS \
                    or node.keywords:
                raise ConfigParse(f"{where}: unsupported call in {src!r}")
        if isinstance(node, ast.Constant) and not isinstance(node.value, (int, float)):
            raise ConfigParse(f"{where}: non-numeric constant in {src!r}")
    code = compile(tree, where, "eval")

    def fn(*args):
        env = dict(zip(argnames, args))
        env.update(_FUNCS)
        env.update(_CONSTS)
        return eval(code, {"__builtins__": {}}, env)

    return fn


class RunConfig:
    """Everything a run needs, assembled from config text and flags."""

    def __init__(self):
        self.preset = None
        self.flow = None
        self.grid = None
        self.traces = None
        self.z = None
        self.solver_opts = {}
        self.stability = None
        self.out_dir = "out"
        self.grids_to_write = ["W", "u", "v", "w", "K"]
        self.tables_to_write = ["wall_shear"]
        self.threads = 1
        self.verbose = False


_SOLVER_KEYS = {
    "max_picard": int, "tol_sup": float, "cfl_safety": float,
    "floor_scale": float, "compat_rtol": float, "max_halvings": int,
    "track_functionals": bool, "skip_gate": bool, "margin": float,
}


def _solver_opts(blk):
    opts = {}
    for key, cast in _SOLVER_KEYS.items():
        if blk.has(key):
            opts[key] = blk.get(key, cast=cast)
    for key in blk.keys():
        if key not in _SOLVER_KEYS:
            raise ConfigParse(f"solver.{key}: unknown option")
    if opts.get("max_picard", DEFAULT_OPTS["max_picard"]) < 1:
        raise ConfigParse("solver.max_picard: must be at least 1")
    if not opts.get("tol_sup", DEFAULT_OPTS["tol_sup"]) > 0:
        raise ConfigParse("solver.tol_sup: must be positive")
    return opts


def _require_file(path, where):
    if not os.path.isfile(path):
        raise ConfigParse(f"{where}: file not found: {path}")
    return path


def _custom_problem(prob, gridblk):
    """Flow + traces from expressions and grid files (non-preset runs)."""
    x = prob.get_floats("x", count=2, required=True)
    y = prob.get_floats("y", count=2, required=True)
    k_src = prob.get("k", required=True)
    k_fn = compile_expression(k_src, ("xi", "eta", "x", "y"), "problem.k")
    flow = make_rect_domain(x, y, lambda xv, yv: k_fn(xv, yv, xv, yv))
    U_fn = compile_expression(prob.get("U", default="1"), ("t", "x", "y"),
                              "problem.U")
    p_fn = compile_expression(prob.get("p", default="0"), ("t", "x", "y"),
                              "problem.p")
    flow = flow.with_euler(U_fn, p_fn, f"U = {prob.get('U', default='1')}")
    n_t = gridblk.get("n_t", default=128, cast=int)
    n_xi = gridblk.get("n_xi", default=8, cast=int)
    n_eta = gridblk.get("n_eta", default=8, cast=int)
    n_zeta = gridblk.get("n_zeta", default=128, cast=int)
    t_max = gridblk.get("T", default=0.25, cast=float)
    grid = GridSpec(x, y, n_t, n_xi, n_eta, n_zeta, t_max)
    traces = None
    if prob.has("initial"):
        w0_path = _require_file(prob.get("initial"), "problem.initial")
        W0, _ = gridio.read_grid(w0_path)
        W1 = {}
        for edge in ("left", "right", "bottom", "top"):
            key = f"inflow_{edge}"
            if prob.has(key):
                path = _require_file(prob.get(key), f"problem.{key}")
                W1[edge], _ = gridio.read_grid(path)
        traces = build_traces(W0, W1, flow, grid)
    return flow, grid, traces


def build_run(cfg, args):
    run = RunConfig()
    run.verbose = bool(args.verbose)
    run.threads = max(1, int(args.threads))
    prob = cfg.block("problem")
    gridblk = cfg.block("grid")
    preset_name = args.preset or prob.get("preset")
    if preset_name is not None:
        if preset_name not in PRESET_NAMES:
            raise ConfigParse(f"problem.preset: unknown preset {preset_name!r}")
        run.preset = make_preset(
            preset_name,
            n_t=gridblk.get("n_t", default=128, cast=int),
            n_xi=gridblk.get("n_xi", default=8, cast=int),
            n_eta=gridblk.get("n_eta", default=8, cast=int),
            n_zeta=gridblk.get("n_zeta", default=128, cast=int),
            t_max=gridblk.get("T", default=None, cast=float),
        )
        run.flow, run.grid = run.preset.flow, run.preset.grid
        run.traces, run.z = run.preset.traces, run.preset.z
    elif prob.has("k") or prob.has("x"):
        run.flow, run.grid, run.traces = _custom_problem(prob, gridblk)
    else:
        raise ConfigParse("problem: needs either a preset or a custom k/x/y spec")
    run.solver_opts = _solver_opts(cfg.block("solver"))
    if cfg.has("stability"):
        run.stability = cfg.block("stability")
    out = cfg.block("output")
    run.out_dir = args.out or out.get("directory", default="out")
    if out.has("grids"):
        run.grids_to_write = out.get("grids").split()
    if out.has("tables"):
        run.tables_to_write = out.get("tables").split()
    return run


def _write_json(path, payload):
    with open(path, "w", newline="\n") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def run_validate(run):
    os.makedirs(run.out_dir, exist_ok=True)
    report = validate_euler(run.flow, run.grid)
    lines = [str(report)]
    summary = {
        "bernoulli_max": report.bernoulli_max,
        "alignment_max": report.alignment_max,
        "burgers_max": report.burgers_max,
        "u_min": report.u_min,
        "failures": list(report.failures),
        "threads": run.threads,
    }
    passed = report.passed
    if not passed:
        lines.append("outer-data gate FAILED: residual(s) "
                     + ", ".join(report.failures)
                     + " exceed tolerance; the direction field must satisfy"
                     " the steady Burgers relation k_x + k k_y = 0 and the"
                     " Euler data the aligned Bernoulli relation.")
    if run.traces is not None:
        compat = check_compatibility(run.traces, run.flow, run.grid)
        lines.append(str(compat))
        summary["compat_passed"] = compat.passed
        summary["compat_worst"] = None if compat.passed else repr(compat.worst())
        summary["compat_M"] = compat.M
        passed = passed and compat.passed
    summary["passed"] = passed
    with open(os.path.join(run.out_dir, "validate.txt"), "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
    _write_json(os.path.join(run.out_dir, "validate.json"), summary)
    if run.verbose:
        print("\n".join(lines))
    print(f"validate: {'pass' if passed else 'FAIL'} -> {run.out_dir}")
    return 0 if passed else 2


def _write_state_grids(run, field, state):
    g = run.grid
    sp3 = [g.dt, g.dxi, g.deta]
    wrote = []
    named = {
        "W": (field.W, sp3 + [g.dzeta]),
        "u": (state.u, sp3 + [gridio.axis_spacing(state.z)]),
        "v": (state.v, sp3 + [gridio.axis_spacing(state.z)]),
        "w": (state.w, sp3 + [gridio.axis_spacing(state.z)]),
        "K": (state.K, [g.dxi, g.deta]),
    }
    for name in run.grids_to_write:
        if name not in named:
            raise ConfigParse(f"output.grids: unknown field {name!r}")
        arr, sp = named[name]
        path = os.path.join(run.out_dir, f"{name}.prd3")
        gridio.write_grid(path, arr, sp)
        wrote.append(os.path.basename(path))
    gridio.write_table(os.path.join(run.out_dir, "z_axis.csv"), ["z"], [state.z])
    wrote.append("z_axis.csv")
    if "wall_shear" in run.tables_to_write:
        path = os.path.join(run.out_dir, "wall_shear.csv")
        gridio.write_field_table(
            path,
            [("t", g.t), ("x", g.xi), ("y", g.eta)],
            [("shear", state.shear[:, :, :, 0])])
        wrote.append("wall_shear.csv")
    return wrote


def run_solve(run):
    os.makedirs(run.out_dir, exist_ok=True)
    code = run_validate(run)
    if code != 0:
        return code
    if run.traces is None:
        raise ConfigParse("problem: solve needs trace data (preset or files)")
    field, report = picard_solve(run.flow, run.traces, run.grid,
                                 run.solver_opts)
    state = reconstruct_state(field, run.flow, z=run.z)
    residuals = prandtl_residual(state, run.flow)
    wrote = _write_state_grids(run, field, state)
    text = str(report) + "\n\n" + str(residuals) + "\n"
    with open(os.path.join(run.out_dir, "solve_report.txt"), "w",
              newline="\n") as fh:
        fh.write(text)
    summary = {
        "converged": report.converged,
        "iterations": len(report.iterations),
        "halvings": report.halvings,
        "achieved_t_max": report.achieved_t_max,
        "contractions": report.contractions,
        "envelope_violations": report.certification["violations"],
        "M_data": report.M_data,
        "M_solution": report.M_solution,
        "res_u": residuals.res_u,
        "res_v": residuals.res_v,
        "res_div": residuals.res_div,
        "structure": residuals.structure,
        "bernoulli": residuals.bernoulli,
        "artifacts": wrote + ["solve_report.txt", "summary.json"],
        "threads": run.threads,
    }
    _write_json(os.path.join(run.out_dir, "summary.json"), summary)
    if run.verbose:
        print(text)
    note = "" if run.grid.t_max == report.achieved_t_max else \
        f" (horizon shortened to {report.achieved_t_max:g})"
    print(f"solve: converged in {len(report.iterations)} iterations{note} "
          f"-> {run.out_dir}")
    return 0


def _background_from_dir(path, sgrid):
    """Rebuild a stability background from a prior solve directory."""
    need = [os.path.join(path, f"{n}.prd3") for n in ("u", "w", "K")]
    for p in need:
        _require_file(p, "stability.background")
    z_path = _require_file(os.path.join(path, "z_axis.csv"),
                           "stability.background")
    u, sp = gridio.read_grid(need[0])
    w, _ = gridio.read_grid(need[1])
    K, _ = gridio.read_grid(need[2])
    z_old = np.loadtxt(z_path, delimiter=",", skiprows=1)
    grid = StabilityGrid(u.shape[0], u.shape[1], u.shape[2], sgrid.n_z,
                         t_max=sp[0] * (u.shape[0] - 1),
                         x_range=(0.0, sp[1] * (u.shape[1] - 1)),
                         y_range=(0.0, sp[2] * (u.shape[2] - 1)),
                         z_max=min(sgrid.z_max, float(z_old[-1])))
    us = np.empty(grid.shape())
    ws = np.empty(grid.shape())
    flat_u = u.reshape(-1, u.shape[3])
    flat_w = w.reshape(-1, w.shape[3])
    fu = us.reshape(-1, grid.n_z)
    fw = ws.reshape(-1, grid.n_z)
    for i in range(flat_u.shape[0]):
        fu[i] = np.interp(grid.z, z_old, flat_u[i])
        fw[i] = np.interp(grid.z, z_old, flat_w[i])
    return Background(us, ws, K, grid), grid


def run_stability(run):
    os.makedirs(run.out_dir, exist_ok=True)
    blk = run.stability
    if blk is None:
        raise ConfigParse("stability: block required for this subcommand")
    sgrid = StabilityGrid(
        blk.get("n_t", default=64, cast=int),
        blk.get("n_x", default=16, cast=int),
        blk.get("n_y", default=16, cast=int),
        blk.get("n_z", default=64, cast=int),
        t_max=blk.get("T", default=1.0, cast=float),
        x_range=(0.0, blk.get("L_x", default=1.0, cast=float)),
        y_range=(0.0, blk.get("L_y", default=1.0, cast=float)),
        z_max=blk.get("z_max", default=12.0, cast=float))
    source = blk.get("background", default="shear")
    if source == "shear":
        bg = Background.shear(sgrid, k=blk.get("k", default=0.5, cast=float))
        grid = sgrid
    elif os.path.isdir(source):
        bg, grid = _background_from_dir(source, sgrid)
    else:
        raise MissingBackground(f"stability.background: {source!r} is neither"
                                " 'shear' nor a solve output directory")
    kw = {}
    for key, names in (("f1", ("t", "x", "y", "z")), ("f2", ("t", "x", "y", "z")),
                       ("u0", ("x", "y", "z")), ("v0", ("x", "y", "z"))):
        if blk.has(key):
            fn = compile_expression(blk.get(key), names, f"stability.{key}")
            axes = [grid.t, grid.x, grid.y, grid.z] if len(names) == 4 \
                else [grid.x, grid.y, grid.z]
            mesh = np.meshgrid(*axes, indexing="ij")
            kw[key] = np.broadcast_to(np.asarray(fn(*mesh), dtype=float),
                                      mesh[0].shape).copy()
    data = PerturbationData(grid,
                            lam=blk.get("lam", default=0.0, cast=float),
                            l=blk.get("l", default=1.0, cast=float),
                            j=blk.get("j", default=4, cast=int), **kw)
    fields, report = run_perturbation(bg, data, grid)
    wrote = []
    sp = [grid.dt, grid.dx, grid.dy, grid.dz]
    for name in ("u", "v", "w", "tilde_v", "h"):
        path = os.path.join(run.out_dir, f"pert_{name}.prd3")
        gridio.write_grid(path, fields[name], sp)
        wrote.append(os.path.basename(path))
    text = str(report) + "\n"
    with open(os.path.join(run.out_dir, "stability_report.txt"), "w",
              newline="\n") as fh:
        fh.write(text)
    summary = {
        "norm_u": report.norm_u, "norm_v": report.norm_v,
        "norm_w": report.norm_w, "M0": report.M0, "M1": report.M1,
        "lhs": report.lhs, "rhs": report.rhs, "ratio": report.ratio,
        "trivial": report.trivial, "lam": report.lam, "l": report.l,
        "j": report.j,
        "artifacts": wrote + ["stability_report.txt", "stability.json"],
        "threads": run.threads,
    }
    _write_json(os.path.join(run.out_dir, "stability.json"), summary)
    if run.verbose:
        print(text)
    print(f"stability: ratio="
          f"{'n/a (trivial)' if report.trivial else format(report.ratio, '.4g')}"
          f" -> {run.out_dir}")
    return 0


def run_report(args):
    out = args.out or "out"
    shown = False
    for name in ("summary.json", "validate.json", "stability.json"):
        path = os.path.join(out, name)
        if os.path.isfile(path):
            with open(path) as fh:
                payload = json.load(fh)
            print(f"== {name} ==")
            for key in sorted(payload):
                print(f"  {key} = {payload[key]}")
            shown = True
    if not shown:
        raise ConfigParse(f"report: no run summaries found under {out!r}")
    return 0


def _parse_args(argv):
    ap = argparse.ArgumentParser(
        prog="prandtl3",
        description="Batch solver for the aligned-crossflow boundary layer")
    ap.add_argument("command", choices=("validate", "solve", "stability",
                                        "report"))
    ap.add_argument("--config", help="path to a run configuration file")
    ap.add_argument("--preset", help="built-in problem preset",
                    choices=PRESET_NAMES)
    ap.add_argument("--out", help="output directory (overrides config)")
    ap.add_argument("--threads", type=int, default=1,
                    help="recorded in the summary; runs are single-threaded")
    ap.add_argument("--verbose", action="store_true")
    return ap.parse_args(argv)


def main(argv=None):
    args = _parse_args(argv)
    try:
        if args.command == "report":
            return run_report(args)
        if args.config:
            cfg = load_config(args.config)
        elif args.preset:
            cfg = parse_config("", "<flags>")
        else:
            raise ConfigParse(f"{args.command}: needs --config or --preset")
        run = build_run(cfg, args)
        if args.command == "validate":
            return run_validate(run)
        if args.command == "solve":
            return run_solve(run)
        return run_stability(run)
    except ConfigParse as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except NoConvergence as exc:
        print(f"convergence failure: {exc}", file=sys.stderr)
        return 3
    except PrandtlError as exc:
        print(f"gate failure: {exc.__class__.__name__}: {exc}", file=sys.stderr)
        return 2
    except Exception:
        traceback.print_exc()
        return 1


if __name__ == "__main__":
    sys.exit(main())
