"""Command-line interface.

Exit codes: 0 success, 1 usage or malformed input, 2 invariant/validation
failure, 3 undecided verification. Diagnostics go to stderr; data goes to
``--output`` or stdout.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys

import numpy as np

from . import io
from .darkspace import (
    DARK_TOL,
    DELTA_TOL,
    Counterexample,
    DarkProjection,
    VerificationUndecided,
    detect_dark,
    verify_dark,
)
from .diagnostics import (
    PLATEAU_MARGIN,
    classify_series,
    dichotomy_report,
    ensemble_mean_purity,
)
from .instrument import (
    AncillaSpec,
    KrausInstrument,
    block_permutation_instrument,
    from_ancilla_unitary,
    from_von_neumann,
    random_instrument,
    tensor_dark_instrument,
    validate,
)
from .linalg import InvariantError, as_density, random_unitary
from .trajectory import TrajectoryConfig, maximally_mixed, run_ensemble, simulate

EXIT_OK, EXIT_USAGE, EXIT_INVALID, EXIT_UNDECIDED = 0, 1, 2, 3
MAX_STEPS = 10**6
MAX_TRAJ = 10**6
GENERATORS = ("von-neumann", "ancilla-unitary", "block-permutation", "tensor-dark", "random")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _default_seed() -> int:
    raw = os.environ.get("QTRAJ_SEED")
    if raw is None:
        return 0
    try:
        return int(raw)
    except ValueError:
        raise UsageError(f"QTRAJ_SEED must be an integer, got {raw!r}") from None


def _generator_args(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("generator options")
    g.add_argument("--d", type=int, default=2, help="system dimension")
    g.add_argument("--k", type=int, default=2, help="number of outcomes")
    g.add_argument("--l", type=int, default=2, help="number of blocks (block-permutation)")
    g.add_argument("--e", type=int, default=2, help="block dimension (block-permutation)")
    g.add_argument("--D", type=int, default=2, help="second factor dimension (tensor-dark)")
    g.add_argument("--pi", help="row-stochastic matrix as JSON (block-permutation)")
    g.add_argument("--ranks", help="comma-separated projection ranks (von-neumann)")
    g.add_argument("--gen-seed", type=int, help="generator seed (defaults to --seed)")


def _run_args(p: argparse.ArgumentParser, traj: bool = True, ensemble: bool = False) -> None:
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--instrument", help="instrument JSON file")
    src.add_argument("--gen", choices=GENERATORS, help="generate the instrument instead")
    _generator_args(p)
    p.add_argument("--seed", type=int, help="base seed (default: $QTRAJ_SEED or 0)")
    p.add_argument("-o", "--output", help="output file (default: stdout)")
    if traj:
        p.add_argument("--n-steps", type=int, default=2000)
        p.add_argument("--initial", default="mixed",
                       help="'mixed' (1/d), 'basis:<j>' or a JSON file holding a matrix")
    if ensemble:
        p.add_argument("--n-traj", type=int, default=100)
        p.add_argument("--workers", type=int, help="threads (default: CPU count)")


def _tolerance_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--dark-tol", type=float, default=DARK_TOL)
    p.add_argument("--delta-tol", type=float, default=DELTA_TOL)
    p.add_argument("--plateau-margin", type=float, default=PLATEAU_MARGIN)
    p.add_argument("--max-closure", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="qtraj", description="Quantum trajectories of repeated perfect measurement.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("validate", help="check completeness of an instrument")
    _run_args(p, traj=False)

    p = sub.add_parser("simulate", help="sample one trajectory")
    _run_args(p)
    p.add_argument("--format", choices=("jsonl", "csv", "json"), default="jsonl")
    p.add_argument("--dump-states", action="store_true")

    p = sub.add_parser("ensemble", help="sample trajectories with seeds seed..seed+n_traj-1")
    _run_args(p, ensemble=True)
    p.add_argument("--format", choices=("jsonl", "csv", "json"), default="jsonl")

    p = sub.add_parser("dichotomy", help="purification vs dark subspaces")
    _run_args(p, ensemble=True)
    _tolerance_args(p)

    p = sub.add_parser("detect-dark", help="search for a dark projection")
    _run_args(p, ensemble=True)
    _tolerance_args(p)

    p = sub.add_parser("verify-dark", help="verify that a projection is dark")
    _run_args(p, traj=False)
    p.add_argument("--projection", required=True, help="JSON file holding a matrix or {'p': matrix}")
    p.add_argument("--method", choices=("auto", "closure", "word-span"), default="auto")
    p.add_argument("--dark-tol", type=float, default=DARK_TOL)
    p.add_argument("--max-closure", type=int)

    p = sub.add_parser("gen-example", help="write a generated instrument as JSON")
    p.add_argument("--name", choices=GENERATORS, required=True)
    _generator_args(p)
    p.add_argument("--seed", type=int, help="generator seed (default: $QTRAJ_SEED or 0)")
    p.add_argument("-o", "--output", help="output file (default: stdout)")
    return parser


# -- instruments --------------------------------------------------------------

def load_instrument(path) -> KrausInstrument:
    """Load and validate; ``SchemaError`` on layout problems, ``InvariantError`` on completeness."""
    ins = io.load_instrument_unchecked(path)
    report = validate(ins)
    if not report.ok:
        raise InvariantError(f"{path}: {report.message}")
    return KrausInstrument(ins.operators, name=ins.name)


def generate(name: str, args, seed: int) -> KrausInstrument:
    rng = np.random.default_rng(seed)
    if name == "random":
        return random_instrument(args.d, args.k, seed)
    if name == "von-neumann":
        ranks = [int(r) for r in args.ranks.split(",")] if args.ranks else [1] * args.d
        d = sum(ranks)
        projections, start = [], 0
        for r in ranks:
            p = np.zeros((d, d), dtype=complex)
            p[start:start + r, start:start + r] = np.eye(r)
            projections.append(p)
            start += r
        return from_von_neumann(projections)
    if name == "ancilla-unitary":
        beta = rng.standard_normal(args.k) + 1j * rng.standard_normal(args.k)
        spec = AncillaSpec(beta / np.linalg.norm(beta), random_unitary(args.k * args.d, rng))
        return from_ancilla_unitary(spec, name=f"ancilla-unitary-d{args.d}-k{args.k}-s{seed}")
    if name == "block-permutation":
        if args.pi:
            try:
                pi = np.array(json.loads(args.pi), dtype=float)
            except (json.JSONDecodeError, TypeError, ValueError) as exc:
                raise UsageError(f"--pi is not a JSON matrix: {exc}") from None
        else:
            pi = rng.dirichlet(np.ones(args.l), size=args.l)
            pi = pi / pi.sum(axis=1, keepdims=True)
        return block_permutation_instrument(args.l, args.e, pi, seed)
    if name == "tensor-dark":
        b = random_instrument(2, args.k, seed)
        us = [random_unitary(args.D, rng) for _ in range(args.k)]
        ins = tensor_dark_instrument(b, us)
        return KrausInstrument(ins.operators, name=f"tensor-dark-D{args.D}-k{args.k}-s{seed}")
    raise UsageError(f"unknown generator {name!r}")


def _instrument(args, seed: int) -> KrausInstrument:
    if args.instrument:
        return load_instrument(args.instrument)
    return generate(args.gen, args, seed if args.gen_seed is None else args.gen_seed)


def _initial_state(spec: str, d: int) -> np.ndarray:
    if spec == "mixed":
        return maximally_mixed(d)
    if spec.startswith("basis:"):
        j = int(spec.split(":", 1)[1])
        if not 0 <= j < d:
            raise UsageError(f"basis index {j} out of range for d={d}")
        theta = np.zeros((d, d), dtype=complex)
        theta[j, j] = 1.0
        return theta
    theta = _read_matrix(spec)
    if theta.shape != (d, d):
        raise UsageError(f"initial state has shape {theta.shape}, expected ({d}, {d})")
    return as_density(theta)


def _read_matrix(path) -> np.ndarray:
    try:
        with open(path) as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise io.SchemaError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
    except OSError as exc:
        raise UsageError(str(exc)) from None
    if isinstance(data, dict):
        if "p" not in data:
            raise io.SchemaError(f"{path}: expected a matrix or an object with key 'p'")
        data = data["p"]
    return io.matrix_from_json(data)


def _check_budgets(args) -> None:
    if hasattr(args, "n_steps") and not 0 <= args.n_steps <= MAX_STEPS:
        raise UsageError(f"--n-steps must be in [0, {MAX_STEPS}]")
    if hasattr(args, "n_traj") and not 1 <= args.n_traj <= MAX_TRAJ:
        raise UsageError(f"--n-traj must be in [1, {MAX_TRAJ}]")
    if getattr(args, "workers", None) is not None and args.workers < 1:
        raise UsageError("--workers must be positive")


def _emit(text: str, output) -> None:
    if output:
        with open(output, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


# -- subcommands --------------------------------------------------------------

def cmd_validate(args, seed):
    ins = io.load_instrument_unchecked(args.instrument) if args.instrument else generate(
        args.gen, args, seed if args.gen_seed is None else args.gen_seed)
    out = io.validation_to_dict(ins)
    print(f"completeness residual {out['residual']:.3e}", file=sys.stderr)
    _emit(io.dumps(out), args.output)
    return EXIT_OK if out["ok"] else EXIT_INVALID


def cmd_simulate(args, seed):
    ins = _instrument(args, seed)
    cfg = TrajectoryConfig(args.n_steps, seed, _initial_state(args.initial, ins.d))
    path = simulate(ins, cfg)
    if args.format == "jsonl":
        text = io.path_to_jsonl(path, include_states=args.dump_states)
    elif args.format == "csv":
        text = io.moments_to_csv(path.moment_series())
    else:
        label, n_reached = classify_series(path.purities)
        text = io.dumps({
            "instrument": ins.name,
            "seed": seed,
            "n_steps": path.n_steps,
            "word": list(path.word),
            "step_probs": [float(x) for x in path.step_probs],
            "purity": [float(x) for x in path.purities],
            "classification": label,
            "n_reached": n_reached,
        })
    _emit(text, args.output)
    return EXIT_OK


def _summary_dict(s) -> dict:
    label, n_reached = classify_series(s.purity)
    return {
        "seed": s.seed,
        "n_steps": s.n_steps,
        "final_purity": s.final_purity,
        "final_moments": list(s.final_moments),
        "classification": label,
        "n_reached": n_reached,
    }


def cmd_ensemble(args, seed):
    ins = _instrument(args, seed)
    theta0 = _initial_state(args.initial, ins.d)
    ensemble = run_ensemble(ins, theta0, args.n_steps, args.n_traj, seed, workers=args.workers)
    if args.format == "csv":
        text = io.moments_to_csv(ensemble_mean_purity(ensemble)[:, None], ["mean_purity"])
    elif args.format == "json":
        text = io.dumps([_summary_dict(s) for s in ensemble])
    else:
        text = "".join(json.dumps(_summary_dict(s)) + "\n" for s in ensemble)
    _emit(text, args.output)
    return EXIT_OK


def _detect_kwargs(args) -> dict:
    return {
        "tol": args.dark_tol,
        "delta_tol": args.delta_tol,
        "plateau_margin": args.plateau_margin,
        "max_closure": args.max_closure,
    }


def cmd_dichotomy(args, seed):
    ins = _instrument(args, seed)
    theta0 = _initial_state(args.initial, ins.d)
    report = dichotomy_report(ins, theta0, args.n_steps, args.n_traj, seed,
                              workers=args.workers, **_detect_kwargs(args))
    print(f"alternative {report.alternative}: {report.counts}", file=sys.stderr)
    _emit(io.dumps(report.to_dict()), args.output)
    return EXIT_UNDECIDED if report.alternative == "undecided" else EXIT_OK


def cmd_detect_dark(args, seed):
    ins = _instrument(args, seed)
    theta0 = _initial_state(args.initial, ins.d)
    found = detect_dark(ins, theta0, args.n_traj, args.n_steps, seed,
                        workers=args.workers, **_detect_kwargs(args))
    print(f"detect-dark: {found.reason}", file=sys.stderr)
    _emit(io.dumps(found.to_dict()), args.output)
    return EXIT_OK


def cmd_verify_dark(args, seed):
    ins = _instrument(args, seed)
    p = _read_matrix(args.projection)
    if p.shape != (ins.d, ins.d):
        raise UsageError(f"projection has shape {p.shape}, expected ({ins.d}, {ins.d})")
    result = verify_dark(ins, p, max_closure=args.max_closure, tol=args.dark_tol, method=args.method)
    if isinstance(result, DarkProjection):
        out, code = {"status": "verified", "dark_projection": result.to_dict()}, EXIT_OK
    elif isinstance(result, Counterexample):
        out, code = {"status": "counterexample", "counterexample": result.to_dict()}, EXIT_INVALID
    else:
        assert isinstance(result, VerificationUndecided)
        out, code = {"status": "undecided", "undecided": result.to_dict()}, EXIT_UNDECIDED
    print(f"verify-dark: {out['status']}", file=sys.stderr)
    _emit(io.dumps(out), args.output)
    return code


def cmd_gen_example(args, seed):
    gen_seed = seed if args.gen_seed is None else args.gen_seed
    _emit(io.instrument_to_json(generate(args.name, args, gen_seed)), args.output)
    return EXIT_OK


COMMANDS = {
    "validate": cmd_validate,
    "simulate": cmd_simulate,
    "ensemble": cmd_ensemble,
    "dichotomy": cmd_dichotomy,
    "detect-dark": cmd_detect_dark,
    "verify-dark": cmd_verify_dark,
    "gen-example": cmd_gen_example,
}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
        seed = args.seed if args.seed is not None else _default_seed()
        _check_budgets(args)
        return COMMANDS[args.command](args, seed)
    except UsageError as exc:
        print(f"qtraj: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except io.SchemaError as exc:
        print(f"qtraj: malformed input: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"qtraj: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except InvariantError as exc:
        print(f"qtraj: invariant violated: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except ValueError as exc:
        print(f"qtraj: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
