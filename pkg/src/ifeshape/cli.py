"""Command-line driver: forward convergence studies, gradient checks, inversions.

Usage
-----
    ifeshape forward-study --case table2-case1 --out runs/fwd
    ifeshape grad-check --case heat --mesh 20 --out runs/gc
    ifeshape invert --config run.json --out runs/inv --max-iters 100
"""
import argparse
import dataclasses
import json
import os
import sys
import time
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .errors import GeometryError, IfeError, InvalidArgument
from .optimize import OptOptions, run
from .output import svg_curves, write_csv, write_curves, write_manifest
from .presets import NAMES, hausdorff, make_case, target_curves
from .problem import ShapeProblem, finite_difference_gradient, perturbed_retry, relative_errors, vertex_margin

COMMANDS = ("forward-study", "grad-check", "invert")


@dataclass
class RunConfig:
    """Resolved run configuration (serialized as JSON)."""
    command: str = "invert"
    case: str = "table2-case1"
    N: Optional[int] = None               # None: the case's own mesh size
    n_ctrl: Optional[int] = None          # None: the case's own control-point count
    phase: float = 0.0                    # angular offset of initial control points (fraction of a turn)
    out: str = "out"
    threads: int = 1
    meshes: List[int] = field(default_factory=lambda: [20, 40, 80])
    target_points: int = 128              # control points of the true-interface spline (forward study)
    delta: float = 1e-5                   # finite-difference step (grad-check)
    grad_tol: float = 1e-3
    omega0: Optional[List[float]] = None  # override of the objective's sub-domain
    whole_domain: bool = False            # drop the sub-domain restriction
    snapshot_every: int = 1
    optimizer: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.command not in COMMANDS:
            raise InvalidArgument(f"unknown command {self.command!r}")
        if self.case not in NAMES:
            raise InvalidArgument(f"unknown case {self.case!r}; choose from {', '.join(NAMES)}")
        valid = {f.name for f in dataclasses.fields(OptOptions)}
        bad = set(self.optimizer) - valid
        if bad:
            raise InvalidArgument(f"unknown optimizer options: {sorted(bad)}")
        if self.threads < 1:
            raise InvalidArgument("threads must be >= 1")

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise InvalidArgument(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    def dumps(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def loads(cls, text):
        return cls.from_dict(json.loads(text))

    def options(self):
        return OptOptions(**self.optimizer)


# ------------------------------------------------------------------ helpers
def build_case(cfg):
    case = make_case(cfg.case, cfg.N, cfg.n_ctrl, cfg.phase, cfg.optimizer.get("max_refinements"))
    obj = case.problem.objective
    if cfg.whole_domain:
        obj.omega0 = None
    elif cfg.omega0 is not None:
        obj.omega0 = tuple(cfg.omega0)
    return case


def _log(msg):
    print(msg, flush=True)


def _rate(a, b):
    return float(np.log2(a / b)) if a > 0 and b > 0 else float("nan")


# ------------------------------------------------------------------ commands
def cmd_forward_study(cfg):
    """Errors of the Dirichlet state on the true interface for a sequence of meshes."""
    case = build_case(cfg)
    if case.exact is None:
        raise InvalidArgument(f"case {cfg.case!r} has no exact solution")
    curves = target_curves(case, cfg.target_points)
    alpha = np.concatenate([c.alpha for c in curves])
    p = case.problem
    prob = ShapeProblem(curves, p.materials, p.specs, p.objective, N=cfg.meshes[0], exact=case.exact)
    rows, prev = [], None
    for N in cfg.meshes:
        prob.set_mesh(N)
        e0, e1 = prob.error_norms(alpha)
        r0, r1 = (_rate(prev[0], e0), _rate(prev[1], e1)) if prev else (None, None)
        rows.append((N, e0, e1, r0, r1))
        _log(f"N={N:4d}  L2={e0:.4e}  H1={e1:.4e}" + (f"  rates {r0:.3f} {r1:.3f}" if prev else ""))
        prev = (e0, e1)
    write_csv(os.path.join(cfg.out, "convergence.csv"), ["N", "L2", "H1", "rate_L2", "rate_H1"], rows)
    return 0, {"rows": rows}


def cmd_grad_check(cfg):
    """Adjoint gradient vs direct sensitivities vs central finite differences."""
    case = build_case(cfg)
    prob = case.problem
    alpha = prob.initial_alpha()
    (J, g), alpha = perturbed_retry(prob.gradient, alpha)
    _, gd = prob.gradient(alpha, "direct", threads=cfg.threads)
    margin = vertex_margin(prob, alpha)
    fd, used = finite_difference_gradient(prob, alpha, cfg.delta)
    rel = relative_errors(g, fd)
    rel_d = relative_errors(g, gd)
    rows = [(j, g[j], gd[j], fd[j], used[j], rel[j]) for j in range(len(g))]
    write_csv(os.path.join(cfg.out, "grad_check.csv"),
              ["j", "adjoint", "direct", "fd", "delta", "rel_err"], rows)
    worst = float(rel.max())
    _log(f"J={J:.6e}  max rel err (adjoint vs FD) = {worst:.3e}  "
         f"(adjoint vs direct) = {float(rel_d.max()):.3e}  vertex margin = {margin:.3e} h")
    if np.any(used < cfg.delta):
        _log(f"step shrunk for {int(np.sum(used < cfg.delta))} variables to keep the topology fixed")
    return (0 if worst <= cfg.grad_tol else 1), {"max_rel_err": worst, "max_rel_err_direct": float(rel_d.max()),
                                                 "vertex_margin": margin}


def cmd_invert(cfg):
    """Run the shape optimization and write history, curves and a figure."""
    case = build_case(cfg)
    prob = case.problem
    opts = cfg.options()
    if "max_refinements" not in cfg.optimizer:
        opts.max_refinements = case.max_refinements
    os.makedirs(os.path.join(cfg.out, "curves"), exist_ok=True)
    target = case.target() if case.target else None
    history, snaps = [], []
    t0 = time.time()

    def callback(state, rec):
        curves = prob.curves(state.alpha)
        rec = dict(rec, N=prob.N)
        history.append(rec)
        k = len(history) - 1
        write_curves(os.path.join(cfg.out, "curves", f"iter_{k:04d}.csv"), curves)
        if k % max(cfg.snapshot_every, 1) == 0:
            snaps.append([c.sample(512) for c in curves])
        extra = f"  H/h={hausdorff(curves, target) / prob.mesh.h:.3f}" if target else ""
        _log(f"it={rec['iter']:4d}  N={prob.N}  J={rec['J']:.6e}  |g|={rec['gradnorm']:.3e}  "
             f"step={rec['step']:.3e}{extra}")

    def refine():
        prob.set_mesh(2 * prob.N)
        _log(f"refining mesh to N={prob.N}")
        return prob.mesh.h

    def fg(a):
        return prob.gradient(a, threads=cfg.threads)

    status, code = "failed", 1
    try:
        (_, _), alpha0 = perturbed_retry(fg, prob.initial_alpha())
        con = prob.constraint if prob.constrained else None
        traj = run(fg, alpha0, opts, con=con, refine=refine, h=prob.mesh.h, callback=callback)
        status, code = traj.status, 0
        final = prob.curves(traj.alpha)
    except (IfeError, RuntimeError) as err:
        _log(f"optimizer failure: {err}")
        final = prob.curves(prob.initial_alpha()) if not history else None
    write_csv(os.path.join(cfg.out, "objective_history.csv"), ["iter", "J", "gradnorm", "step", "N"],
              [(r["iter"], r["J"], r["gradnorm"], r["step"], r["N"]) for r in history])
    if final is None:
        import glob
        from .output import read_curve_csv
        from .geometry import SplineCurve
        last = sorted(glob.glob(os.path.join(cfg.out, "curves", "iter_*.csv")))[-1]
        final = [SplineCurve(p, closed=t.closed) for p, t in zip(read_curve_csv(last), prob.templates)]
    write_curves(os.path.join(cfg.out, "final_curve.csv"), final)
    if not snaps or len(history) % max(cfg.snapshot_every, 1) != 1:
        snaps.append([c.sample(512) for c in final])
    svg_curves(os.path.join(cfg.out, "curves.svg"), snaps, target)
    summary = {"status": status, "iterations": history[-1]["iter"] if history else 0,
               "final_J": history[-1]["J"] if history else None, "final_N": prob.N,
               "seconds": round(time.time() - t0, 3)}
    if target:
        summary["hausdorff"] = hausdorff(final, target)
        summary["hausdorff_over_h"] = summary["hausdorff"] / prob.mesh.h
    _log(f"status: {status}")
    return code, summary


HANDLERS = {"forward-study": cmd_forward_study, "grad-check": cmd_grad_check, "invert": cmd_invert}


def parse_args(argv=None):
    ap = argparse.ArgumentParser(prog="ifeshape", description=__doc__.split("\n")[0])
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", help="JSON run configuration")
    ap.add_argument("--case", choices=NAMES)
    ap.add_argument("--mesh", type=int, help="mesh size N (N x N squares)")
    ap.add_argument("--ctrl", type=int, help="number of control points per curve")
    ap.add_argument("--out", help="output directory")
    ap.add_argument("--threads", type=int)
    ap.add_argument("--max-iters", type=int)
    ap.add_argument("--tol-g", type=float)
    return ap.parse_args(argv)


def resolve_config(args):
    data = {}
    if args.config:
        with open(args.config) as fh:
            data = json.load(fh)
    data["command"] = args.command
    for key, val in (("case", args.case), ("N", args.mesh), ("n_ctrl", args.ctrl),
                     ("out", args.out), ("threads", args.threads)):
        if val is not None:
            data[key] = val
    opt = dict(data.get("optimizer", {}))
    if args.max_iters is not None:
        opt["max_iters"] = args.max_iters
    if args.tol_g is not None:
        opt["tol_g"] = args.tol_g
    data["optimizer"] = opt
    if args.command == "forward-study" and args.mesh is not None:
        data.setdefault("meshes", [args.mesh, 2 * args.mesh, 4 * args.mesh])
    return RunConfig.from_dict(data)


def main(argv=None):
    args = parse_args(argv)
    try:
        cfg = resolve_config(args)
    except (InvalidArgument, TypeError, json.JSONDecodeError) as err:
        print(f"configuration error: {err}", file=sys.stderr)
        return 2
    os.makedirs(cfg.out, exist_ok=True)
    try:
        code, summary = HANDLERS[cfg.command](cfg)
    except IfeError as err:
        print(f"error: {err}", file=sys.stderr)
        code, summary = 1, {"error": str(err)}
    write_manifest(os.path.join(cfg.out, "manifest.json"), cfg.to_dict(), {"summary": summary, "exit_code": code})
    return code


if __name__ == "__main__":
    sys.exit(main())
