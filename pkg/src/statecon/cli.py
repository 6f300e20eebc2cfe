"""Command-line front end: config parsing, pipeline orchestration, and
bit-stable CSV/JSON export.

Floats are written with 17 significant digits so repeated runs with the same
config and seed produce byte-identical files.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .geometry import Ball, Domain, Ellipse, SmoothedBox, fd_grad
from .model import (Hamiltonian, check_assumptions, energy_bound,
                    problem_from_config)
from .penalty import Trajectory, delta_choice, epsilon_schedule
from .pmp import check_extremal, make_extremal
from .value import compute_value, dpp_check, lipschitz_report
from .mfg import (GaussianKernelCoupling, constant_measure, evaluate_flow,
                  fixed_point, lip_flow, mild_solution)

log = logging.getLogger("statecon")

FMT = "%.17g"


def _fmt(x) -> str:
    return FMT % float(x)


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, np.bool_):
        return bool(o)
    raise TypeError(f"not serializable: {type(o)}")


def write_json(path: Path, obj) -> None:
    # round-trip through 17-digit strings for stable float text
    def clean(v):
        if isinstance(v, dict):
            return {k: clean(x) for k, x in v.items()}
        if isinstance(v, (list, tuple)):
            return [clean(x) for x in v]
        if isinstance(v, (float, np.floating)):
            return float(_fmt(v))
        return v
    path.write_text(json.dumps(clean(obj), indent=2, sort_keys=True,
                               default=_json_default) + "\n")


def write_csv(path: Path, header: list[str], rows) -> None:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(_fmt(v) for v in row))
    path.write_text("\n".join(lines) + "\n")


def trajectory_rows(dom: Domain, gamma: Trajectory):
    t = gamma.times
    V = gamma.velocities
    V = np.vstack([V, V[-1]])  # repeat the last interval velocity at t = T
    d = np.maximum(dom.b_many(gamma.knots), 0.0)
    for i in range(gamma.N + 1):
        yield [t[i], *gamma.knots[i], *V[i], d[i]]


def read_trajectory_csv(path: Path, dim: int) -> Trajectory:
    rows = [line.split(",") for line in
            path.read_text().strip().splitlines()[1:]]
    t = np.array([float(r[0]) for r in rows])
    X = np.array([[float(v) for v in r[1:1 + dim]] for r in rows])
    return Trajectory(float(t[0]), float(t[-1]), X)


class ConfigError(ValueError):
    pass


def load_config(path: str) -> dict:
    try:
        cfg = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if "domain" not in cfg:
        raise ConfigError("config needs a 'domain' section")
    return cfg


def build_domain(cfg: dict) -> Domain:
    try:
        return Domain.from_config(cfg["domain"])
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"bad domain spec: {exc}") from exc


def build_problem(cfg: dict, dom: Domain):
    pc = cfg.get("problem")
    if pc is None:
        raise ConfigError("config needs a 'problem' section")
    if "mu" in pc and float(pc["mu"]) < 1:
        raise ConfigError("mu must satisfy mu >= 1 (uniform convexity of the "
                          "running cost requires it)")
    try:
        return problem_from_config(pc, dom.dim)
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"bad problem spec: {exc}") from exc


# ---------------------------------------------------------------------------
# subcommands


def cmd_solve(cfg, out: Path, args) -> int:
    dom = build_domain(cfg)
    prob = build_problem(cfg, dom)
    x0 = np.asarray(cfg.get("x0", [0.0] * dom.dim), dtype=float)
    N = args.grid_n or int(cfg.get("solver", {}).get("N", 256))
    delta, Nm = delta_choice(prob, dom)
    delta = float(cfg.get("solver", {}).get("delta", delta))
    gamma, params = epsilon_schedule(prob, dom, x0, delta, N=N)
    ex = make_extremal(prob, dom, gamma, params=params)
    report = check_extremal(prob, dom, ex)
    write_csv(out / "trajectory.csv",
              ["t"] + [f"x{i+1}" for i in range(dom.dim)]
              + [f"v{i+1}" for i in range(dom.dim)] + ["d"],
              trajectory_rows(dom, gamma))
    write_json(out / "pmp_report.json", {
        "checks": report.checks, "residuals": report.residuals,
        "epsilon": params.epsilon, "delta": params.delta,
        "terminal_drift_speed": Nm, "nu": ex.beta_over_delta,
        "Lstar": ex.Lstar})
    ok = report.all_passed
    print(f"solve: N={N} eps={_fmt(params.epsilon)} "
          f"delta={_fmt(params.delta)} checks="
          f"{'pass' if ok else 'FAIL'}")
    return 0 if ok else 2


def cmd_pmp_check(cfg, out: Path, args) -> int:
    dom = build_domain(cfg)
    prob = build_problem(cfg, dom)
    if not args.trajectory:
        raise ConfigError("pmp-check needs --trajectory <csv>")
    gamma = read_trajectory_csv(Path(args.trajectory), dom.dim)
    ex = make_extremal(prob, dom, gamma)
    report = check_extremal(prob, dom, ex)
    write_json(out / "pmp_report.json", {
        "checks": report.checks, "residuals": report.residuals,
        "nu": ex.beta_over_delta, "Lstar": ex.Lstar})
    print(f"pmp-check: {'pass' if report.all_passed else 'FAIL'} "
          f"(state {_fmt(report.residuals['state_ode'])}, "
          f"adjoint {_fmt(report.residuals['adjoint_ode'])})")
    return 0 if report.all_passed else 2


def _value_grid_spec(cfg, dom: Domain, args):
    vc = cfg.get("value", {})
    nt = int(vc.get("n_times", 5))
    nx = args.grid_n or int(vc.get("n_points", 5))
    T = float(cfg["problem"]["T"])
    times = np.linspace(0.0, T, nt)
    lo, hi = dom.bounding_box()
    axes = [np.linspace(lo[k], hi[k], nx) for k in range(dom.dim)]
    mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
    pts = mesh.reshape(-1, dom.dim)
    keep = dom.b_many(pts) <= dom.boundary_tol
    return times, pts[keep]


def cmd_value(cfg, out: Path, args) -> int:
    dom = build_domain(cfg)
    prob = build_problem(cfg, dom)
    times, points = _value_grid_spec(cfg, dom, args)
    N = int(cfg.get("value", {}).get("N", 32))
    vg = compute_value(prob, dom, times, points, N=N)
    Lx, Lt = lipschitz_report(vg)
    gap = dpp_check(prob, dom, vg, samples=5,
                    rng=np.random.default_rng(args.seed), N=N)
    rows = []
    for i, t in enumerate(vg.times):
        for j in range(points.shape[0]):
            rows.append([t, *points[j], vg.values[i, j]])
    write_csv(out / "value.csv",
              ["t"] + [f"x{k+1}" for k in range(dom.dim)] + ["u"], rows)
    write_json(out / "value_report.json",
               {"Lx": Lx, "Lt": Lt, "dpp_gap": gap,
                "failures": len(vg.failures)})
    print(f"value: {points.shape[0]} points x {times.size} times, "
          f"Lx={_fmt(Lx)} Lt={_fmt(Lt)} dpp_gap={_fmt(gap)}")
    return 0 if not vg.failures else 2


def cmd_mfg(cfg, out: Path, args) -> int:
    dom = build_domain(cfg)
    prob = build_problem(cfg, dom)
    mc = cfg.get("mfg")
    if mc is None:
        raise ConfigError("config needs an 'mfg' section")
    coupling = GaussianKernelCoupling.from_config(mc.get("coupling", {}))
    atoms = np.asarray(mc["m0"]["points"], dtype=float)
    weights = np.asarray(mc["m0"]["weights"], dtype=float)
    N = int(mc.get("N", 64))
    eta0 = constant_measure(atoms, weights, prob.horizon, N=N)
    eta, history = fixed_point(prob, dom, coupling, eta0,
                               alpha=float(mc.get("alpha", 0.5)),
                               tol=float(mc.get("tol", 1e-3)),
                               max_iter=int(mc.get("max_iter", 50)), N=N)
    times = np.linspace(0.0, prob.horizon, int(mc.get("n_times", 9)))
    flow = evaluate_flow(eta, times)
    rows = []
    for i, t in enumerate(times):
        m = flow.measures[i]
        for k in range(m.points.shape[0]):
            rows.append([t, *m.points[k], m.weights[k]])
    write_csv(out / "flow.csv",
              ["t"] + [f"x{k+1}" for k in range(dom.dim)] + ["w"], rows)
    write_csv(out / "residuals.csv", ["iter", "residual"],
              [[i, r] for i, r in enumerate(history)])
    vc = mc.get("value", {})
    nx = int(vc.get("n_points", 5))
    lo, hi = dom.bounding_box()
    axes = [np.linspace(lo[k], hi[k], nx) for k in range(dom.dim)]
    pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, dom.dim)
    pts = pts[dom.b_many(pts) <= dom.boundary_tol]
    vt = np.linspace(0.0, prob.horizon, int(vc.get("n_times", 3)))
    vg, _flow = mild_solution(prob, dom, coupling, eta, vt, pts,
                              N=int(vc.get("N", 32)))
    vrows = []
    for i, t in enumerate(vg.times):
        for j in range(pts.shape[0]):
            vrows.append([t, *pts[j], vg.values[i, j]])
    write_csv(out / "mild_value.csv",
              ["t"] + [f"x{k+1}" for k in range(dom.dim)] + ["u"], vrows)
    print(f"mfg: {len(history)} iterations, residual "
          f"{_fmt(history[-1])}, Lip(m)={_fmt(lip_flow(flow))}")
    return 0


def cmd_geometry_test(cfg, out: Path, args) -> int:
    dom = build_domain(cfg)
    rng = np.random.default_rng(args.seed)
    pts = dom.sample_tube(rng, 2000)
    g = dom.grad_many(pts)
    unit_err = float(np.max(np.abs(np.linalg.norm(g, axis=1) - 1.0)))
    H = dom.hess_many(pts)
    orth_err = float(np.max(np.linalg.norm(
        np.einsum("mij,mj->mi", H, g), axis=1)))
    fd_err = 0.0
    for x in pts[:50]:
        fd_err = max(fd_err, float(np.max(np.abs(
            fd_grad(dom, x) - dom.grad_many(x[None])[0]))))
    report = {"unit_gradient_error": unit_err,
              "hessian_orthogonality_error": orth_err,
              "fd_gradient_error": fd_err,
              "rho0": dom.rho0, "diameter": dom.diameter}
    write_json(out / "geometry_report.json", report)
    ok = unit_err < 1e-9 and orth_err < 1e-6 and fd_err < 1e-7
    print(f"geometry-test: unit={_fmt(unit_err)} orth={_fmt(orth_err)} "
          f"fd={_fmt(fd_err)} {'pass' if ok else 'FAIL'}")
    return 0 if ok else 2


def cmd_assumptions(cfg, out: Path, args) -> int:
    dom = build_domain(cfg)
    prob = build_problem(cfg, dom)
    rng = np.random.default_rng(args.seed)
    rep = check_assumptions(prob, dom, rng=rng)
    K = energy_bound(prob, dom, report=rep)
    ham = Hamiltonian(prob)
    payload = {
        "checks": {k: {"passed": c.passed, "measured": c.measured,
                       "bound": c.bound} for k, c in rep.checks.items()},
        "growth_constant": rep.C_mu_M, "measured": rep.measured,
        "energy_budget": K,
        "H_at_origin": float(ham.value_many(
            np.array([0.0]), np.zeros((1, dom.dim)),
            np.zeros((1, dom.dim)))[0]),
    }
    write_json(out / "assumptions.json", payload)
    print(f"assumptions: {'pass' if rep.all_passed else 'FAIL'} "
          f"(K={_fmt(K)})")
    return 0 if rep.all_passed else 1


COMMANDS = {
    "solve": cmd_solve,
    "pmp-check": cmd_pmp_check,
    "value": cmd_value,
    "mfg": cmd_mfg,
    "geometry-test": cmd_geometry_test,
    "assumptions": cmd_assumptions,
}


def make_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="statecon",
        description="State-constrained variational solver and checks")
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("--config", required=True, help="JSON run configuration")
    ap.add_argument("--out", default=".", help="output directory")
    ap.add_argument("--grid-n", type=int, default=None,
                    help="override the main grid resolution")
    ap.add_argument("--seed", type=int, default=0,
                    help="seed for sampled checks")
    ap.add_argument("--threads", type=int, default=1,
                    help="worker cap for independent solves (currently "
                    "single-threaded for byte-stable output)")
    ap.add_argument("--trajectory", default=None,
                    help="trajectory CSV (pmp-check)")
    return ap


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("CVX_LOG", "WARNING").upper())
    args = make_parser().parse_args(argv)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    try:
        cfg = load_config(args.config)
        return COMMANDS[args.command](cfg, out, args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:
        log.exception("solver failure")
        print(f"solver failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
