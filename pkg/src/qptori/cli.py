"""Command-line front end: solve, trajectory, resonance, glue-check, verify, models.

Exit codes: 0 success/convergence, 2 divergence or non-convergence,
3 configuration error. ``TORUS_THREADS`` caps the BLAS worker count and
must be applied before the numeric stack loads, so heavy imports live
inside the handlers.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

EXIT_OK = 0
EXIT_DIVERGED = 2
EXIT_CONFIG = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse default exit code 2 collides with "diverged"
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise SystemExit(EXIT_CONFIG)


class ConfigError(ValueError):
    pass


def _apply_thread_cap() -> None:
    cap = os.environ.get("TORUS_THREADS")
    if cap:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ.setdefault(var, cap)


def _parse_floats(text: str) -> list[float]:
    return [float(tok) for tok in text.split(",") if tok.strip() != ""]


def _parse_ints(text: str) -> list[int]:
    return [int(tok) for tok in text.split(",") if tok.strip() != ""]


def _build_model(args):
    from .hamiltonian import load_model, model_with_amplitude_vector

    if getattr(args, "model_file", None):
        base = load_model(args.model_file)
        if args.amplitudes is None:
            return base
        return model_with_amplitude_vector(base, _parse_floats(args.amplitudes), args.epsilon or base.epsilon)
    name = args.model
    if name is None:
        raise ConfigError("--model or --model-file is required")
    if name == "henon":
        eps = 0.5 if args.epsilon is None else args.epsilon
        amps = _parse_floats(args.amplitudes) if args.amplitudes else [1.0, 0.0]
        return model_with_amplitude_vector("henon", amps, eps)
    if name == "fpu":
        n = args.n or 3
        eps = 1.0 if args.epsilon is None else args.epsilon
        amps = _parse_floats(args.amplitudes) if args.amplitudes else [1.0] + [0.0] * (n - 1)
        if len(amps) != n:
            raise ConfigError(f"--amplitudes must list {n} values for --n {n}")
        return model_with_amplitude_vector("fpu", amps, eps, n=n)
    raise ConfigError(f"unknown model {name!r}")


def _config_dict(model, cfg, extra=None) -> dict:
    from . import __version__

    out = {
        "library": "qptori",
        "version": __version__,
        "model": model.name,
        "n": model.n,
        "excited": [bool(b) for b in model.excited],
        "amplitudes": [float(a) for a in model.amplitudes],
        "epsilon": float(model.epsilon),
        "schedule": list(cfg.schedule),
        "r_max": cfg.r_max,
        "tol_F": cfg.tol_F,
        "tol_step": cfg.tol_step,
        "b_variant": cfg.b_variant,
        "linear_solver": cfg.linear_solver,
        "check_conditions": cfg.check_conditions,
    }
    out.update(extra or {})
    return out


def cmd_solve(args) -> int:
    import numpy as np

    from .io import (
        conditions_rows,
        convergence_rows,
        save_solution,
        write_csv,
    )
    from .resonance import ResonanceConfig, admissible
    from .solver import DivergenceError, SingularOperatorError, default_config, iterate

    model = _build_model(args)
    overrides: dict = {}
    if args.schedule:
        overrides["schedule"] = tuple(_parse_ints(args.schedule))
    if args.rmax is not None:
        overrides["r_max"] = args.rmax
    if args.tol is not None:
        overrides["tol_F"] = args.tol
    if args.b_variant:
        overrides["b_variant"] = args.b_variant
    if args.linear_solver:
        overrides["linear_solver"] = args.linear_solver
    if args.no_conditions:
        overrides["check_conditions"] = False
    cfg = default_config(model, **overrides)

    rcfg = ResonanceConfig(tau=args.tau, gamma=args.gamma, scale_M=args.scale_m)
    rep = admissible(model, rcfg)
    if not rep.admissible:
        print(
            f"warning: frequency fails the {rep.worst.set_name} resonance test at "
            f"k={rep.worst.k} (margin {rep.worst.margin:.3e}); continuing",
            file=sys.stderr,
        )

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    try:
        result = iterate(model, cfg)
    except DivergenceError as exc:
        dump = out_dir / "divergence.json"
        with open(dump, "w") as fh:
            json.dump(
                {
                    "error": str(exc),
                    "history": [vars(rec) for rec in exc.history],
                },
                fh,
                indent=1,
                default=str,
            )
        print(f"divergence: {exc} (diagnostics in {dump})", file=sys.stderr)
        return EXIT_DIVERGED
    except SingularOperatorError as exc:
        print(f"singular operator: {exc}", file=sys.stderr)
        return EXIT_DIVERGED

    meta = _config_dict(model, cfg, {"resonance_admissible": rep.admissible})
    info = {
        "converged": result.converged,
        "stopped_by": result.stopped_by,
        "iterations": result.iterations,
        "final_norm_F": result.final_norm_F,
    }
    save_solution(out_dir / "solution.json", model, result.omega_star, result.zhat_star, info, meta)
    cols, rows = convergence_rows(result.history)
    write_csv(out_dir / "convergence.csv", cols, rows, meta)
    cols, rows = conditions_rows(result.conditions, model.m)
    write_csv(out_dir / "conditions.csv", cols, rows, meta)
    print(
        f"{'converged' if result.converged else 'not converged'} "
        f"({result.stopped_by}) after {result.iterations} iterations, "
        f"final residual {result.final_norm_F:.3e}; omega_T* = "
        + ",".join(f"{w:.12g}" for w in np.asarray(result.omega_star))
    )
    if args.plot:
        from .evaluate import synthesize, to_real_coords
        from .report import plot_convergence, plot_phase_portraits

        times = np.linspace(0.0, 20.0, 2001)
        traj = to_real_coords(synthesize(result.zhat_star, result.omega_star, times))
        plot_phase_portraits(traj, out_dir / "trajectory.png", title=model.name)
        plot_convergence(result.history, out_dir / "convergence.png", title=model.name)
    return EXIT_OK if result.converged else EXIT_DIVERGED


def cmd_trajectory(args) -> int:
    import numpy as np

    from .evaluate import ode_residual, synthesize, to_real_coords
    from .io import load_solution, trajectory_rows, write_csv

    sol = load_solution(args.solution)
    model = sol["model"]
    times = np.linspace(0.0, args.t_end, args.points)
    traj = to_real_coords(synthesize(sol["zhat"], sol["omega_T_star"], times))
    res = ode_residual(model, sol["zhat"], sol["omega_T_star"], times)
    cols, rows = trajectory_rows(traj, res["per_time"])
    meta = {"solution": str(args.solution), "t_end": args.t_end, "points": args.points, "model": model.name}
    out = Path(args.out)
    if out.is_dir():
        out = out / "trajectory.csv"
    write_csv(out, cols, rows, meta)
    print(f"wrote {out} (max residual {res['max']:.3e})")
    if args.plot:
        from .report import plot_phase_portraits

        plot_phase_portraits(traj, out.with_suffix(".png"), title=model.name)
    return EXIT_OK


def cmd_resonance(args) -> int:
    import numpy as np

    from .io import write_csv
    from .resonance import ResonanceConfig, admissible_frequency, measure_estimate

    cfg = ResonanceConfig(tau=args.tau, gamma=args.gamma, scale_M=args.scale_m)
    omega_n = np.asarray(_parse_floats(args.omega_n), dtype=float) if args.omega_n else np.array([])
    meta = {
        "tau": args.tau,
        "gamma": args.gamma,
        "scale_M": args.scale_m,
        "omega_N": args.omega_n or "",
        "seed": args.seed,
    }
    rows = []
    if args.grid:
        axes = []
        for part in args.grid.split(";"):
            lo, hi, count = part.split(":")
            axes.append(np.linspace(float(lo), float(hi), int(count)))
        mesh = np.meshgrid(*axes, indexing="ij")
        points = np.stack([g.ravel() for g in mesh], axis=-1)
    elif args.samples:
        domain = [tuple(float(v) for v in pair.split(",")) for pair in args.domain.split(";")]
        rng = np.random.Generator(np.random.Philox(key=args.seed))
        points = rng.uniform(
            [d[0] for d in domain], [d[1] for d in domain], size=(args.samples, len(domain))
        )
        est = measure_estimate(np.asarray(domain), omega_n, cfg, samples=args.samples, seed=args.seed)
        meta["fraction"] = f"{est['fraction']:.17g}"
        meta["ci95"] = f"{est['ci95']:.17g}"
    else:
        raise ConfigError("resonance needs either --grid or --samples")
    m = points.shape[1]
    for pt in points:
        rep = admissible_frequency(pt, omega_n, cfg)
        worst = rep.worst
        rows.append(
            [*pt, rep.admissible, worst.set_name if worst else "", worst.margin if worst else ""]
        )
    cols = [f"omega_T{i+1}" for i in range(m)] + ["admissible", "worst_set", "worst_margin"]
    write_csv(args.out, cols, rows, meta)
    print(f"wrote {args.out} ({len(rows)} frequencies)")
    return EXIT_OK


def cmd_glue_check(args) -> int:
    from .io import load_solution
    from .msa import GlueConfig, glue_inverse
    from .vectorfield import split_qp

    sol = load_solution(args.model_state)
    model = sol["model"]
    _, zp = split_qp(sol["zhat"], model)
    out = glue_inverse(
        model,
        zp,
        sol["omega_T_star"],
        N=args.N,
        cfg=GlueConfig(K=args.K),
    )
    payload = {
        "N": args.N,
        "K": args.K,
        "dim": out["dim"],
        "residual_max": out["residual"],
        "max_rel_error_vs_dense": out["max_rel_error"],
        "glue_seconds": out["glue_seconds"],
        "dense_seconds": out["dense_seconds"],
    }
    text = json.dumps(payload, indent=1)
    if args.out:
        Path(args.out).write_text(text + "\n")
    print(text)
    return EXIT_OK


def cmd_verify(args) -> int:
    import numpy as np

    from .evaluate import compare_trajectory, ode_residual, reference_integrate, synthesize
    from .io import load_solution

    sol = load_solution(args.solution)
    model = sol["model"]
    times = np.linspace(0.0, args.t_end, args.points)
    res = ode_residual(model, sol["zhat"], sol["omega_T_star"], times)
    print(f"max Hamilton-equation residual on [0, {args.t_end:g}] ({args.points} points): {res['max']:.6e}")
    if args.rk4:
        z0 = synthesize(sol["zhat"], sol["omega_T_star"], np.array([0.0])).states[0]
        ref = reference_integrate(model, z0, args.rk4_t_end, args.dt)
        synth = synthesize(sol["zhat"], sol["omega_T_star"], ref.times)
        err = compare_trajectory(synth, ref)
        print(
            f"max deviation from RK4 reference on [0, {args.rk4_t_end:g}] (dt={args.dt:g}): {err.max():.6e}"
        )
    return EXIT_OK


def cmd_models(args) -> int:
    import numpy as np

    from .hamiltonian import fpu_beta, henon_heiles

    hh = henon_heiles()
    print("henon: n=2, omega=(1, sqrt2), cubic coupling, default eps=0.5, default a=(1,0)")
    print(f"       monomials={len(hh.H1.monomials)}, degree={hh.degree}")
    fpu = fpu_beta(3, 1.0)
    print("fpu:   quartic chain, --n modes (default 3), Dirichlet ends, default eps=1.0")
    print(f"       n=3 frequencies: {np.array2string(fpu.omega, precision=6)}, degree={fpu.degree}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="qptori", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    def add_model_args(sp):
        sp.add_argument("--model", choices=["henon", "fpu"])
        sp.add_argument("--model-file", help="custom model JSON")
        sp.add_argument("--n", type=int, help="mode count (fpu)")
        sp.add_argument("--epsilon", type=float)
        sp.add_argument("--amplitudes", help="comma list over all modes; nonzero = excited")

    sp = sub.add_parser("solve", help="run the alternating scheme, write solution + tables")
    add_model_args(sp)
    sp.add_argument("--schedule", help="comma list of box radii")
    sp.add_argument("--rmax", type=int)
    sp.add_argument("--tol", type=float, help="residual stop threshold")
    sp.add_argument("--b-variant", choices=["damped", "chain_rule"])
    sp.add_argument("--linear-solver", choices=["dense_lu", "dense_qr"])
    sp.add_argument("--no-conditions", action="store_true", help="skip per-step inverse checks")
    sp.add_argument("--tau", type=float, default=2.0)
    sp.add_argument("--gamma", type=float, default=0.05)
    sp.add_argument("--scale-m", type=int, default=10)
    sp.add_argument("--out", required=True)
    sp.add_argument("--plot", action="store_true", help="also render PNG figures")
    sp.set_defaults(func=cmd_solve)

    sp = sub.add_parser("trajectory", help="synthesize a trajectory CSV from a solution")
    sp.add_argument("--solution", required=True)
    sp.add_argument("--t-end", type=float, default=20.0)
    sp.add_argument("--points", type=int, default=2001)
    sp.add_argument("--out", required=True)
    sp.add_argument("--plot", action="store_true")
    sp.set_defaults(func=cmd_trajectory)

    sp = sub.add_parser("resonance", help="scan frequencies for admissibility")
    sp.add_argument("--omega-n", help="comma list of normal frequencies")
    sp.add_argument("--tau", type=float, default=2.0)
    sp.add_argument("--gamma", type=float, default=0.05)
    sp.add_argument("--scale-m", type=int, default=10)
    sp.add_argument("--grid", help="lo:hi:count per dimension, ';'-separated")
    sp.add_argument("--samples", type=int, help="Monte Carlo sample count")
    sp.add_argument("--domain", default="0.5,1.5", help="lo,hi per dim, ';'-separated")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_resonance)

    sp = sub.add_parser("glue-check", help="compare glued inverse against the dense inverse")
    sp.add_argument("--model-state", required=True, help="solution.json from solve")
    sp.add_argument("--N", type=int, required=True)
    sp.add_argument("--K", type=int, required=True)
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_glue_check)

    sp = sub.add_parser("verify", help="dynamics residual of a stored solution")
    sp.add_argument("--solution", required=True)
    sp.add_argument("--t-end", type=float, default=20.0)
    sp.add_argument("--points", type=int, default=2001)
    sp.add_argument("--rk4", action="store_true", help="also integrate an RK4 reference")
    sp.add_argument("--rk4-t-end", type=float, default=10.0)
    sp.add_argument("--dt", type=float, default=1e-4)
    sp.set_defaults(func=cmd_verify)

    sp = sub.add_parser("models", help="list built-in models")
    sp.set_defaults(func=cmd_models)
    return p


def main(argv=None) -> int:
    _apply_thread_cap()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ValueError, KeyError, FileNotFoundError) as exc:
        from .hamiltonian import ModelError

        if isinstance(exc, (ModelError, ValueError, KeyError, FileNotFoundError)):
            print(f"configuration error: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        raise


if __name__ == "__main__":
    sys.exit(main())
