"""Command-line front end: ``kernelnmf {synth,unmix,eval,probe,gradcheck,sweep}``.

Exit codes: 0 success, 2 usage or unsupported configuration, 3 numeric
failure, 4 I/O failure.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from pathlib import Path

import numpy as np

from . import dataio, diagnostics, metrics
from . import factorization as F
from .kernels import KernelSpec
from .regularizers import RegularizerSet

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4
GRADCHECK_TOL = 1e-5
DENSITY_THRESHOLD = 0.01
SWEEP_PARAMS = ("c", "sigma", "mu", "omega", "rho", "gamma", "lambda")


class UsageError(Exception):
    pass


def _echo(name, config):
    print(json.dumps({"command": name, "config": config}, sort_keys=True), file=sys.stderr)


def _floats(text):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


# -- shared flag groups ----------------------------------------------------------

def _add_kernel_flags(p, default="linear"):
    p.add_argument("--kernel", choices=("linear", "poly", "gauss"), default=default)
    p.add_argument("--degree", type=int, default=2, help="polynomial degree (default 2)")
    p.add_argument("--c", type=float, default=0.44, help="polynomial offset (default 0.44)")
    p.add_argument("--sigma", type=float, default=2.5, help="Gaussian bandwidth (default 2.5)")


def _kernel(args, kind=None) -> KernelSpec:
    kind = kind or args.kernel
    if kind == "poly":
        return KernelSpec.polynomial(args.degree, args.c)
    if kind == "gauss":
        return KernelSpec.gaussian(args.sigma)
    return KernelSpec.linear()


def _add_solver_flags(p):
    _add_kernel_flags(p)
    p.add_argument("--in", dest="input", required=True, help="input cube (binary or CSV)")
    p.add_argument("--scheme", choices=("add", "mult"), default="mult")
    p.add_argument("--iters", type=int, default=200)
    p.add_argument("--rank", type=int, required=True)
    p.add_argument("--sum-to-one", action="store_true")
    p.add_argument("--normalize-at-end", action="store_true",
                   help="with --sum-to-one, normalize once after the last iteration")
    p.add_argument("--semi-nmf", action="store_true")
    p.add_argument("--step-a", type=float, default=1e-3)
    p.add_argument("--step-e", type=float, default=1e-3)
    p.add_argument("--backtracking", action="store_true")
    for flag in ("lambda", "lambda-h", "gamma", "rho", "alpha", "mu", "alpha-spatial"):
        p.add_argument(f"--{flag}", type=float, default=0.0)
    p.add_argument("--omega", type=float, default=0.0, help="sets all four spatial weights")
    for side in "lrud":
        p.add_argument(f"--omega-{side}", type=float, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--init", choices=("data", "random"), default="data")
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--truth", help="ground-truth endmember CSV for spectral angles")


def _regularizers(args) -> RegularizerSet:
    omega = {s: (getattr(args, f"omega_{s}") if getattr(args, f"omega_{s}") is not None else args.omega)
             for s in "lrud"}
    return RegularizerSet(
        lam=args.__dict__["lambda"], lam_h=args.lambda_h, gamma=args.gamma, rho=args.rho,
        alpha=args.alpha, mu=args.mu, omega_l=omega["l"], omega_r=omega["r"],
        omega_u=omega["u"], omega_d=omega["d"], alpha_spatial=args.alpha_spatial,
    )


def _solver_config(args) -> F.SolverConfig:
    return F.SolverConfig(
        rank=args.rank, kernel=_kernel(args), scheme=args.scheme, iterations=args.iters,
        step_a=args.step_a, step_e=args.step_e, backtracking=args.backtracking,
        sum_to_one=args.sum_to_one, normalize_every_iteration=not args.normalize_at_end,
        semi_nmf=args.semi_nmf, regularizers=_regularizers(args), init=args.init,
        seed=args.seed, threads=args.threads,
    )


def _unmix(cube, config, truth=None):
    result = F.run(config, cube)
    evaluation = metrics.evaluate(cube.X, result.E, result.A, config.kernel, truth)
    evaluation.extra["density"] = float(np.mean(result.A > DENSITY_THRESHOLD))
    return result, evaluation


# -- subcommands -------------------------------------------------------------------

def cmd_synth(args):
    spec = dataio.SceneSpec(
        bands=args.bands, height=args.height, width=args.width, rank=args.rank,
        concentration=args.concentration, blur_passes=args.blur, mixing=args.mixing,
        beta=args.beta, snr_db=args.snr, seed=args.seed,
    )
    _echo("synth", spec.as_dict())
    cube, E, A = dataio.synth_scene(spec)
    out = Path(args.out)
    cube_path = out.with_name(out.name + (".csv" if args.csv else ".hsi"))
    dataio.write_cube(cube_path, cube)
    dataio.write_endmembers(out.with_name(out.name + "_endmembers.csv"), E)
    dataio.write_matrix(out.with_name(out.name + "_abundances.csv"), A)
    print(json.dumps({"cube": str(cube_path), "endmembers": str(out.with_name(out.name + "_endmembers.csv")),
                      "abundances": str(out.with_name(out.name + "_abundances.csv"))}))
    return EXIT_OK


def cmd_unmix(args):
    config = _solver_config(args)
    _echo("unmix", config.as_dict())
    cube = dataio.read_cube(args.input)
    truth = dataio.read_matrix(args.truth) if args.truth else None
    result, evaluation = _unmix(cube, config, truth)
    dataio.write_report(args.out, result, evaluation, cube.shape)
    summary = {"re": result.re, "re_phi": result.re_phi, "final_cost": float(result.cost_trace[-1])}
    if evaluation.sam_per_endmember is not None:
        summary["mean_sam_degrees"] = evaluation.mean_sam
    print(json.dumps(summary))
    print(f"wall time {result.wall_time:.3f} s", file=sys.stderr)
    return EXIT_OK


def cmd_eval(args):
    cube = dataio.read_cube(args.input)
    E = dataio.read_matrix(args.endmembers)
    A = dataio.read_matrix(args.abundances)
    truth = dataio.read_matrix(args.truth) if args.truth else None
    kinds = args.kernel or ["linear"]
    _echo("eval", {"kernels": [_kernel(args, k).as_dict() for k in kinds]})
    if E.shape[0] != cube.bands or A.shape != (E.shape[1], cube.pixels):
        raise UsageError(f"shape mismatch: cube {cube.X.shape}, endmembers {E.shape}, abundances {A.shape}")
    out = {"re": metrics.reconstruction_error(cube.X, E, A), "re_phi": {}}
    for kind in kinds:
        kernel = _kernel(args, kind)
        out["re_phi"][str(kernel)] = metrics.feature_reconstruction_error(cube.X, E, A, kernel)
    if truth is not None:
        matching, angles = metrics.spectral_angle_match(E, truth)
        out["matching"] = list(matching)
        out["sam_degrees"] = [float(a) for a in angles]
        out["mean_sam_degrees"] = float(np.mean(angles))
    print(json.dumps(out))
    return EXIT_OK


def cmd_probe(args):
    kernel = _kernel(args)
    _echo("probe", {"kernel": kernel.as_dict(), "budget": args.budget, "seed": args.seed})
    report = diagnostics.probe_nonconvexity(kernel, args.budget, args.seed)
    print(json.dumps(report.as_dict()))
    return EXIT_OK


def cmd_gradcheck(args):
    kinds = [args.kernel] if args.kernel else ["linear", "poly", "gauss"]
    kernels = [_kernel(args, k) for k in kinds]
    _echo("gradcheck", {"kernels": [k.as_dict() for k in kernels], "seed": args.seed,
                        "inject_bug": args.inject_bug})
    errors = diagnostics.gradient_suite(kernels, args.seed, args.inject_bug)
    worst = max(errors.values())
    for name, err in errors.items():
        print(f"{name:32s} {err:.3e} {'ok' if err <= GRADCHECK_TOL else 'FAIL'}")
    print(f"max relative error {worst:.3e} (tolerance {GRADCHECK_TOL:g})")
    return EXIT_OK if worst <= GRADCHECK_TOL else EXIT_NUMERIC


def _with_param(args, name, value):
    ns = argparse.Namespace(**vars(args))
    if name == "omega":
        ns.omega = value
        for s in "lrud":
            setattr(ns, f"omega_{s}", None)
    elif name == "lambda":
        setattr(ns, "lambda", value)
    else:
        setattr(ns, name, value)
    return ns


def cmd_sweep(args):
    if args.param not in SWEEP_PARAMS:
        raise UsageError(f"unknown sweep parameter {args.param!r}; choose from {', '.join(SWEEP_PARAMS)}")
    configs = [(v, _solver_config(_with_param(args, args.param, v))) for v in args.values]
    _echo("sweep", {"param": args.param, "values": args.values, "base": configs[0][1].as_dict()})
    cube = dataio.read_cube(args.input)
    truth = dataio.read_matrix(args.truth) if args.truth else None
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow([args.param, "re", "re_phi", "final_cost", "density"])
    for value, config in configs:
        result, evaluation = _unmix(cube, config, truth)
        writer.writerow([repr(value), repr(result.re), repr(result.re_phi),
                         repr(float(result.cost_trace[-1])), repr(evaluation.extra["density"])])
    if args.out:
        Path(args.out).write_text(buf.getvalue())
    else:
        sys.stdout.write(buf.getvalue())
    return EXIT_OK


# -- parser ------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="kernelnmf", description="Kernel NMF for hyperspectral unmixing.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic scene with ground truth")
    p.add_argument("--bands", type=int, default=50)
    p.add_argument("--width", type=int, default=20)
    p.add_argument("--height", type=int, default=20)
    p.add_argument("--rank", type=int, default=3)
    p.add_argument("--mixing", choices=("linear", "bilinear"), default="linear")
    p.add_argument("--beta", type=float, default=0.0)
    p.add_argument("--snr", type=float, default=None, help="noise level in dB (noiseless if omitted)")
    p.add_argument("--concentration", type=float, default=1.0)
    p.add_argument("--blur", type=int, default=0, help="3x3 smoothing passes over the abundance maps")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--csv", action="store_true", help="write the cube as CSV instead of binary")
    p.add_argument("--out", required=True, help="output prefix")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("unmix", help="factorize a cube")
    _add_solver_flags(p)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_unmix)

    p = sub.add_parser("eval", help="evaluate estimated factors against a cube")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--endmembers", required=True)
    p.add_argument("--abundances", required=True)
    p.add_argument("--truth")
    p.add_argument("--kernel", choices=("linear", "poly", "gauss"), action="append",
                   help="kernel for the feature-space error; repeatable")
    p.add_argument("--degree", type=int, default=2)
    p.add_argument("--c", type=float, default=0.44)
    p.add_argument("--sigma", type=float, default=2.5)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("probe", help="search for negative Hessian diagonal entries")
    _add_kernel_flags(p, default="poly")
    p.add_argument("--budget", type=int, default=10_000)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_probe)

    p = sub.add_parser("gradcheck", help="finite-difference check of every analytic gradient")
    _add_kernel_flags(p, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--inject-bug", action="store_true", help="perturb the endmember gradient (self-test)")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("sweep", help="rerun unmix over a list of values of one parameter")
    _add_solver_flags(p)
    p.add_argument("--param", required=True)
    p.add_argument("--values", type=_floats, required=True)
    p.add_argument("--out", help="CSV path (stdout if omitted)")
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (UsageError, F.UnsupportedConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (F.SolverError, diagnostics.NumericError, FloatingPointError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (OSError, dataio.CubeFormatError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
