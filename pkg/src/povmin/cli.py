"""Command-line interface: solve, simulate, sweep, validate, rerun.

Every command that writes files also writes a run manifest next to them
(<out>.manifest.json) holding the resolved configuration, the library
version, and SHA-256 digests of each output; `povmin rerun MANIFEST`
re-executes the stored command and reproduces the outputs byte for byte.
All floating-point output is printed with 17 significant digits so values
round-trip exactly.

Exit codes: 0 success, 2 infeasible specification, 3 numerical
non-convergence.
"""

from __future__ import annotations

import argparse
import csv
import datetime
import hashlib
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__, constant, hjb, montecarlo, proportional
from .errors import FeasibilityError, NonConvergence, PovminError
from .model import load_spec, spec_to_dict, validate

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_NUMERICAL = 3


def fmt(x) -> str:
    return f"{float(x):.17g}"


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    h.update(path.read_bytes())
    return h.hexdigest()


def _write_manifest(out_prefix: Path, command: str, config: dict, outputs: list[Path]):
    manifest = {
        "command": command,
        "config": config,
        "version": __version__,
        "created_at": datetime.datetime.now(datetime.timezone.utc).isoformat(),
        "outputs": {str(p): _sha256(p) for p in outputs},
    }
    path = out_prefix.with_suffix(out_prefix.suffix + ".manifest.json")
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True), encoding="utf-8")
    return path


def _write_csv(path: Path, header: list[str], rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([v if isinstance(v, str) else fmt(v) for v in row])


def _write_json(path: Path, payload: dict) -> None:
    # floats are stringified at full precision by json anyway (repr-based),
    # so plain dumps round-trips
    path.write_text(json.dumps(payload, indent=2, sort_keys=True), encoding="utf-8")


def _closed_form_solution(problem):
    if problem.is_constant:
        return constant.solve(problem)
    return proportional.solve(problem)


def _solution_grid(problem, n_points: int, w_max: float | None):
    a = problem.poverty.a
    if problem.is_constant:
        return np.linspace(a, problem.w_s, n_points)
    top = w_max if w_max is not None else 40.0 * problem.poverty.d
    below = np.linspace(a, problem.poverty.d, n_points // 2 + 1)
    above = np.geomspace(problem.poverty.d, top, n_points - n_points // 2)[1:]
    return np.concatenate([below, above])


def cmd_solve(args) -> int:
    problem = validate(load_spec(args.spec))
    out = Path(args.out)

    if args.method == "closed":
        if not problem.poverty.is_single_step:
            raise FeasibilityError(
                ["closed form requires single-step poverty; use --method fd"]
            )
        sol = _closed_form_solution(problem)
        grid = _solution_grid(problem, args.points, args.w_max)
        a = problem.poverty.a
        rows = []
        for w in grid:
            pi = sol.pi_star(w) if w > a else sol.pi_a_plus()
            rows.append((w, sol.value(w), pi))
        csv_path = out.with_suffix(".csv")
        _write_csv(csv_path, ["w", "value", "policy"], rows)
        constants_path = out.with_suffix(".json")
        _write_json(constants_path, sol.export_dict())
        outputs = [csv_path, constants_path]
    else:
        table = hjb.solve_bvp(
            problem,
            hjb.GridConfig(n=args.grid_n, w_max=args.w_max),
            hjb.SolverConfig(max_iters=args.max_iters, tol=args.tol),
        )
        csv_path = out.with_suffix(".csv")
        _write_csv(
            csv_path,
            ["w", "value", "policy", "residual"],
            zip(table.grid.nodes, table.values, table.policy, table.residuals),
        )
        constants_path = out.with_suffix(".json")
        rep = hjb.residual(table)
        _write_json(
            constants_path,
            {
                "iterations": table.iterations,
                "sup_change": table.sup_change,
                "max_residual": rep.max_abs,
                "mean_residual": rep.mean_abs,
                "nodes": int(table.grid.n),
            },
        )
        outputs = [csv_path, constants_path]

    config = {
        "spec": spec_to_dict(problem),
        "method": args.method,
        "points": args.points,
        "grid_n": args.grid_n,
        "w_max": args.w_max,
        "max_iters": args.max_iters,
        "tol": args.tol,
        "out": str(out),
    }
    _write_manifest(out, "solve", config, outputs)
    print(f"wrote {', '.join(str(p) for p in outputs)}")
    return EXIT_OK


def _resolve_policy(problem, args):
    if args.policy == "star":
        if problem.poverty.is_single_step:
            return _closed_form_solution(problem)
        return hjb.solve_bvp(problem, hjb.GridConfig(n=args.grid_n))
    if args.policy == "zero":
        # the ruin-probability-minimizing linear policy
        nodes = _solution_grid(problem, 513, None)
        values = hjb.initial_policy(problem, nodes)
        return montecarlo.TabulatedPolicy.from_callable(
            lambda w: float(np.interp(w, nodes, values)), nodes[0], nodes[-1]
        )
    if args.policy == "none":
        a = problem.poverty.a
        hi = problem.w_s if problem.is_constant else 4.0 * problem.poverty.d
        return montecarlo.TabulatedPolicy.zero(a, hi)
    if args.policy == "file":
        if not args.policy_file:
            raise PovminError("--policy file requires --policy-file")
        knots, vals = [], []
        with open(args.policy_file, newline="", encoding="utf-8") as fh:
            for row in csv.DictReader(fh):
                knots.append(float(row["w"]))
                vals.append(float(row["pi"]))
        knots = np.asarray(knots)
        vals = np.asarray(vals)
        order = np.argsort(knots)
        knots, vals = knots[order], vals[order]
        return montecarlo.TabulatedPolicy.from_callable(
            lambda w: float(np.interp(w, knots, vals)), knots[0], knots[-1]
        )
    raise PovminError(f"unknown policy {args.policy!r}")


def cmd_simulate(args) -> int:
    problem = validate(load_spec(args.spec))
    if args.w0 <= problem.poverty.a:
        raise FeasibilityError(
            [f"starting wealth below ruin level (w0={args.w0}, a={problem.poverty.a})"]
        )
    policy = _resolve_policy(problem, args)
    config = montecarlo.SimConfig(
        dt=args.dt,
        n_paths=args.n_paths,
        seed=args.seed,
        t_cap=args.t_cap,
        bridge=args.bridge,
        n_workers=args.workers,
    )
    est = montecarlo.simulate_cost(problem, policy, args.w0, config)
    payload = {
        "mean": est.mean,
        "stderr": est.stderr,
        "ruin_fraction": est.ruin_fraction,
        "truncation_bound": est.truncation_bound,
    }
    out = Path(args.out)
    json_path = out.with_suffix(".json")
    _write_json(json_path, payload)
    _write_manifest(
        out,
        "simulate",
        {
            "spec": spec_to_dict(problem),
            "policy": args.policy,
            "policy_file": args.policy_file,
            "w0": args.w0,
            "dt": args.dt,
            "n_paths": args.n_paths,
            "seed": args.seed,
            "t_cap": args.t_cap,
            "bridge": args.bridge,
            "workers": args.workers,
            "grid_n": args.grid_n,
            "out": str(out),
        },
        [json_path],
    )
    print(json.dumps(payload, sort_keys=True))
    return EXIT_OK


SWEEPABLE = ("l", "rho", "lambda", "mu", "sigma", "c", "kappa")


def _with_param(spec_dict: dict, param: str, value: float) -> dict:
    doc = json.loads(json.dumps(spec_dict))
    if param in ("l", "rho"):
        doc["poverty"][param] = value
    elif param in ("lambda", "mu", "sigma"):
        doc["market"][param] = value
    elif param in ("c", "kappa"):
        if doc["consumption"]["type"] == "constant" and param != "c":
            raise PovminError("kappa sweep needs proportional consumption")
        if doc["consumption"]["type"] == "proportional" and param != "kappa":
            raise PovminError("c sweep needs constant consumption")
        doc["consumption"][param] = value
    else:
        raise PovminError(
            f"unknown sweep parameter {param!r}; choose from {SWEEPABLE}"
        )
    return doc


def cmd_sweep(args) -> int:
    from .model import spec_from_dict

    base = validate(load_spec(args.spec))
    base_doc = spec_to_dict(base)
    values = [float(v) for v in args.values.split(",")]
    rows = []
    for v in values:
        problem = validate(spec_from_dict(_with_param(base_doc, args.param, v)))
        if args.observable in ("y_da", "z_da"):
            if problem.is_constant:
                obs = constant.solve_g_root(problem)
            else:
                obs = proportional.solve_h_root(problem)
            rows.append((args.param, v, "", args.observable, obs))
        else:
            sol = _closed_form_solution(problem)
            if args.at_w is None:
                raise PovminError("--observable value/policy requires --at-w")
            w = args.at_w
            obs = sol.value(w) if args.observable == "value" else sol.pi_star(w)
            rows.append((args.param, v, fmt(w), args.observable, obs))
    out = Path(args.out)
    csv_path = out.with_suffix(".csv")
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["param", "param_value", "w", "observable", "value"])
        for param, v, w, name, obs in rows:
            writer.writerow([param, fmt(v), w, name, fmt(obs)])
    _write_manifest(
        out,
        "sweep",
        {
            "spec": base_doc,
            "param": args.param,
            "values": values,
            "observable": args.observable,
            "at_w": args.at_w,
            "out": str(out),
        },
        [csv_path],
    )
    print(f"wrote {csv_path}")
    return EXIT_OK


def cmd_validate(args) -> int:
    from .model import check, load_spec as _load

    spec = _load(args.spec)
    violations = check(spec)
    if violations:
        for v in violations:
            print(f"infeasible: {v}", file=sys.stderr)
        return EXIT_INVALID
    problem = validate(spec)
    der = problem.derived
    info = {
        "m": der.m,
        "beta1": der.beta1,
        "beta2": der.beta2,
        "safe_level": problem.w_s,
    }
    if der.gamma1 is not None:
        info["gamma1"] = der.gamma1
        info["gamma2"] = der.gamma2
    print(json.dumps(info, sort_keys=True))
    return EXIT_OK


def cmd_rerun(args) -> int:
    manifest = json.loads(Path(args.manifest).read_text(encoding="utf-8"))
    command = manifest["command"]
    cfg = manifest["config"]
    spec_path = Path(args.manifest).with_suffix(".spec.json")
    spec_path.write_text(json.dumps(cfg["spec"]), encoding="utf-8")
    argv = [command, str(spec_path)]
    if command == "solve":
        argv += ["--method", cfg["method"], "--out", cfg["out"],
                 "--points", str(cfg["points"]), "--grid-n", str(cfg["grid_n"])]
        if cfg.get("w_max") is not None:
            argv += ["--w-max", str(cfg["w_max"])]
        if cfg.get("tol") is not None:
            argv += ["--tol", str(cfg["tol"])]
        argv += ["--max-iters", str(cfg["max_iters"])]
    elif command == "simulate":
        argv += [
            "--policy", cfg["policy"], "--w0", str(cfg["w0"]),
            "--dt", str(cfg["dt"]), "--n-paths", str(cfg["n_paths"]),
            "--seed", str(cfg["seed"]), "--t-cap", str(cfg["t_cap"]),
            "--workers", str(cfg["workers"]), "--grid-n", str(cfg["grid_n"]),
            "--out", cfg["out"],
        ]
        if cfg.get("bridge"):
            argv += ["--bridge"]
        if cfg.get("policy_file"):
            argv += ["--policy-file", cfg["policy_file"]]
    elif command == "sweep":
        argv += [
            "--param", cfg["param"],
            "--values", ",".join(fmt(v) for v in cfg["values"]),
            "--observable", cfg["observable"], "--out", cfg["out"],
        ]
        if cfg.get("at_w") is not None:
            argv += ["--at-w", str(cfg["at_w"])]
    else:
        raise PovminError(f"manifest command {command!r} cannot be re-run")
    try:
        return main(argv)
    finally:
        spec_path.unlink(missing_ok=True)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="povmin",
        description="Minimum expected lifetime poverty with a ruin penalty",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_solve = sub.add_parser("solve", help="solve a problem spec")
    p_solve.add_argument("spec")
    p_solve.add_argument("--method", choices=["closed", "fd"], default="closed")
    p_solve.add_argument("--out", required=True, help="output prefix")
    p_solve.add_argument("--points", type=int, default=201,
                         help="closed form: number of CSV sample points")
    p_solve.add_argument("--grid-n", type=int, default=1001)
    p_solve.add_argument("--w-max", type=float, default=None)
    p_solve.add_argument("--max-iters", type=int, default=200)
    p_solve.add_argument("--tol", type=float, default=None)
    p_solve.set_defaults(func=cmd_solve)

    p_sim = sub.add_parser("simulate", help="Monte Carlo cost estimate")
    p_sim.add_argument("spec")
    p_sim.add_argument("--policy", choices=["star", "zero", "none", "file"],
                       default="star",
                       help="star: optimal; zero: ruin-probability policy; "
                            "none: no risky investment; file: CSV (w, pi)")
    p_sim.add_argument("--policy-file", default=None)
    p_sim.add_argument("--w0", type=float, required=True)
    p_sim.add_argument("--dt", type=float, default=1e-3)
    p_sim.add_argument("--n-paths", type=int, default=10_000)
    p_sim.add_argument("--seed", type=int, default=0)
    p_sim.add_argument("--t-cap", type=float, default=None)
    p_sim.add_argument("--bridge", action="store_true")
    p_sim.add_argument("--workers", type=int, default=1)
    p_sim.add_argument("--grid-n", type=int, default=1001)
    p_sim.add_argument("--out", required=True)
    p_sim.set_defaults(func=cmd_simulate)

    p_sweep = sub.add_parser("sweep", help="comparative-statics sweep")
    p_sweep.add_argument("spec")
    p_sweep.add_argument("--param", required=True, choices=SWEEPABLE)
    p_sweep.add_argument("--values", required=True, help="comma-separated")
    p_sweep.add_argument("--observable", required=True,
                         choices=["value", "policy", "y_da", "z_da"])
    p_sweep.add_argument("--at-w", type=float, default=None)
    p_sweep.add_argument("--out", required=True)
    p_sweep.set_defaults(func=cmd_sweep)

    p_val = sub.add_parser("validate", help="check a spec's feasibility")
    p_val.add_argument("spec")
    p_val.set_defaults(func=cmd_validate)

    p_rerun = sub.add_parser("rerun", help="re-execute a run manifest")
    p_rerun.add_argument("manifest")
    p_rerun.set_defaults(func=cmd_rerun)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "t_cap", None) is None and args.command == "simulate":
        # smallest horizon satisfying the truncation-bias invariant
        problem = validate(load_spec(args.spec))
        args.t_cap = 20.0 / problem.market.lam
    try:
        return args.func(args)
    except FeasibilityError as exc:
        for v in exc.violations:
            print(f"infeasible: {v}", file=sys.stderr)
        return EXIT_INVALID
    except NonConvergence as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except PovminError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    raise SystemExit(main())
