"""Command-line entry points.

Three subcommands cover the round trip:

* ``simulate``    draw measurement records from a model file
* ``tomography``  reconstruct initial states from a record archive
* ``validate``    run the built-in consistency suites and file cross-checks

Exit codes: 0 success, 1 validation failure, 2 unreadable or malformed
input, 3 numerical failure during reconstruction.  Given the same
inputs, output files are reproduced byte for byte.
"""
from __future__ import annotations

import argparse
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import io as tio
from .config import DEFAULT
from .confidence import build_r_matrix
from .continuous import (
    SMEModel,
    adjoint_cp_map_continuous,
    backward_continuous_batch,
    cp_map_continuous,
    forward_filter,
    forward_filter_batch,
    simulate_sme,
)
from .errors import (
    DegenerateLikelihood,
    DegenerateTrace,
    DimensionMismatch,
    EffectiveSampleSizeTooLow,
    IncompletePOVM,
    InvalidProjector,
    StepSizeTooLarge,
    Unidentifiable,
    UnknownOutcome,
    ZeroProbability,
)
from .filtering import (
    DiscreteRecord,
    backward_run,
    backward_sweep_batch,
    forward_batch,
    forward_run,
    sample_records,
)
from .maxlike import SolveOptions, solve_maxlike
from .models import number_operator, povm_family
from .operators import KrausFamily, apply_adjoint_cp_map, apply_cp_map, frobenius
from .qubit import PAULIS, effects_to_bloch, to_bloch, variance_bloch

__all__ = ["main"]

_VALIDATION_ERRORS = (UnknownOutcome, DimensionMismatch, IncompletePOVM, InvalidProjector)
_NUMERICAL_ERRORS = (
    ZeroProbability,
    StepSizeTooLarge,
    DegenerateLikelihood,
    DegenerateTrace,
    EffectiveSampleSizeTooLow,
    Unidentifiable,
)


def _resolve_threads(value: int | None) -> int:
    """Thread count: flag beats TRAJTOMO_THREADS beats 1."""
    if value is not None:
        if value < 1:
            raise ValueError("--threads must be at least 1")
        return value
    env = os.environ.get("TRAJTOMO_THREADS", "").strip()
    if env:
        try:
            n = int(env)
        except ValueError:
            raise ValueError(f"TRAJTOMO_THREADS must be an integer, got {env!r}")
        if n < 1:
            raise ValueError("TRAJTOMO_THREADS must be at least 1")
        return n
    return 1


def _parse_start_times(arg: str) -> list[int]:
    try:
        starts = [int(tok) for tok in arg.split(",") if tok.strip()]
    except ValueError:
        raise ValueError(f"--start-times must be comma-separated integers, got {arg!r}")
    if not starts:
        raise ValueError("--start-times is empty")
    if any(s < 0 for s in starts):
        raise ValueError("start times must be nonnegative")
    return starts


def _parse_observables(arg: str | None, dim: int) -> list[tuple[str, np.ndarray]]:
    """Named observables: x/y/z (qubit), n (photon number), p<k> (population),
    or @file.json for a custom Hermitian matrix.

    An explicitly empty argument means no observables: tomography then
    emits state-only diagnostic rows.
    """
    if arg is None:
        names = ["x", "y", "z"] if dim == 2 else ["n"]
    else:
        names = [tok.strip() for tok in arg.split(",") if tok.strip()]
    paulis = dict(zip("xyz", PAULIS))
    out = []
    for name in names:
        if name in paulis:
            if dim != 2:
                raise ValueError(f"observable {name!r} needs a qubit model")
            out.append((name, paulis[name]))
        elif name == "n":
            out.append((name, number_operator(dim)))
        elif name.startswith("p") and name[1:].isdigit():
            k = int(name[1:])
            if k >= dim:
                raise ValueError(f"population {name!r} exceeds dimension {dim}")
            proj = np.zeros((dim, dim), dtype=complex)
            proj[k, k] = 1.0
            out.append((name, proj))
        elif name.startswith("@"):
            with open(name[1:]) as fh:
                obj = json.load(fh)
            if isinstance(obj, dict) and "matrix" in obj:
                label = str(obj.get("label", Path(name[1:]).stem))
                mat = tio.matrix_from_json(obj["matrix"])
            else:
                label = Path(name[1:]).stem
                mat = tio.matrix_from_json(obj)
            if mat.shape != (dim, dim):
                raise ValueError(
                    f"observable file {name[1:]} has shape {mat.shape}; the "
                    f"model dimension is {dim}"
                )
            if not np.allclose(mat, mat.conj().T, atol=1e-12):
                raise ValueError(f"observable file {name[1:]} is not Hermitian")
            out.append((label, mat))
        else:
            raise ValueError(f"unknown observable {name!r}")
    return out


def _cmd_simulate(args) -> int:
    desc = tio.load_model(args.model)
    model = tio.instantiate_model(desc)
    rho0 = tio.initial_state(desc, model)
    if isinstance(model, KrausFamily):
        interventions = tio.interventions_from_description(desc, model)
        records = sample_records(
            model,
            rho0,
            args.n_trajectories,
            args.seed,
            interventions=interventions or None,
        )
    else:
        records = simulate_sme(model, rho0, args.n_trajectories, args.seed)
    tio.write_records(
        args.records, records, model_description=desc, metadata={"seed": args.seed}
    )
    print(f"wrote {len(records)} records to {args.records}")
    return 0


def _random_state(rng: np.random.Generator, dim: int) -> np.ndarray:
    g = rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))
    rho = g @ g.conj().T
    return rho / rho.trace().real


def _check_adjoint_identity(model, rng: np.random.Generator) -> float:
    """Worst |<K(A), B> - <A, K*(B)>| / (|A| |B|) over random operator pairs."""
    dim = model.dim
    worst = 0.0
    for _ in range(5):
        a = _random_state(rng, dim) * rng.uniform(0.5, 2.0)
        b = rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))
        b = b + b.conj().T
        if isinstance(model, KrausFamily):
            for outcome in model.outcomes(0):
                lhs = frobenius(apply_cp_map(model, 0, outcome, a), b)
                rhs = frobenius(a, apply_adjoint_cp_map(model, 0, outcome, b))
                worst = max(
                    worst,
                    abs(lhs - rhs)
                    / (np.linalg.norm(a) * np.linalg.norm(b)),
                )
        else:
            dy = rng.normal(0.0, math.sqrt(model.dt), size=len(model.monitored))
            lhs = frobenius(cp_map_continuous(model, dy, a), b)
            rhs = frobenius(a, adjoint_cp_map_continuous(model, dy, b))
            worst = max(
                worst,
                abs(lhs - rhs) / (np.linalg.norm(a) * np.linalg.norm(b)),
            )
    return float(worst)


def _check_duality(model, records, rng: np.random.Generator) -> float:
    """Worst forward/backward likelihood gap over records and random states."""
    worst = 0.0
    sample = records[: min(len(records), 20)]
    if isinstance(model, KrausFamily):
        adjoints = [backward_run(model, r) for r in sample]
        for rec, adj in zip(sample, adjoints):
            for _ in range(5):
                rho = _random_state(rng, model.dim)
                fwd = forward_run(model, rec, rho).log_prob
                bwd = adj.log_c + math.log(
                    float(np.einsum("ij,ji->", rho, adj.effect.matrix).real)
                )
                worst = max(worst, abs(fwd - bwd))
    else:
        adjoints = backward_continuous_batch(model, sample, start_indices=(0,))[0]
        for rec, adj in zip(sample, adjoints):
            for _ in range(5):
                rho = _random_state(rng, model.dim)
                fwd = forward_filter(model, rec, rho).log_prob
                bwd = adj.log_c + math.log(
                    float(np.einsum("ij,ji->", rho, adj.effect.matrix).real)
                )
                worst = max(worst, abs(fwd - bwd))
    return float(worst)


def _binomial_suite() -> tuple[float, float]:
    """(variance gap vs the classical Fisher bound, KKT residual over threshold)
    for a held-out two-outcome counting instance."""
    ground = np.diag([1.0, 0.0]).astype(complex)
    excited = np.diag([0.0, 1.0]).astype(complex)
    family = povm_family({"g": ground, "e": excited})
    records = [DiscreteRecord(i, ("g",)) for i in range(30)]
    records += [DiscreteRecord(30 + i, ("e",)) for i in range(70)]
    effects = [backward_run(family, r).effect for r in records]
    result = solve_maxlike(effects)
    p = float(result.rho.matrix[1, 1].real)
    fisher = 4.0 * p * (1.0 - p) / len(records)
    sigma2 = build_r_matrix(result.rho, effects).variance(PAULIS[2])
    gap = abs(sigma2 - fisher) / fisher
    return float(gap), float(result.kkt.residual / result.kkt.threshold)


def _fastpath_suite(rng: np.random.Generator) -> float:
    """Relative gap between the generic and the qubit variance paths."""
    effects = np.stack([_random_state(rng, 2) for _ in range(60)])
    result = solve_maxlike(effects)
    generic = build_r_matrix(result.rho, effects).variance(PAULIS[0])
    fast = variance_bloch(
        to_bloch(result.rho.matrix),
        effects_to_bloch(effects),
        np.array([1.0, 0.0, 0.0]),
    )
    return float(abs(generic - fast) / max(generic, fast))


def _cmd_validate(args) -> int:
    desc = tio.load_model(args.model)
    model = tio.instantiate_model(desc)
    rng = np.random.default_rng(20_260_815)
    checks: list[dict] = []

    def add(name: str, measured: float, threshold: float, detail: str = "") -> None:
        entry = {
            "name": name,
            "measured": measured,
            "threshold": threshold,
            "passed": bool(measured <= threshold),
        }
        if detail:
            entry["detail"] = detail
        checks.append(entry)

    add(
        "adjoint_identity",
        _check_adjoint_identity(model, rng),
        1e-11,
        "inner-product match of each one-step map against its adjoint",
    )
    records = None
    if args.records is not None:
        meta, records = tio.read_records(args.records)
        problems = tio.validate_records(desc, model, meta, records)
        add(
            "records_consistent",
            float(len(problems)),
            0.0,
            "; ".join(problems) if problems else
            f"{len(records)} records match kind={desc['kind']}",
        )
        if not problems and records:
            add(
                "forward_backward_duality",
                _check_duality(model, records, rng),
                1e-8,
                "likelihood of sampled records from both sweep directions",
            )
    fisher_gap, kkt_ratio = _binomial_suite()
    add(
        "kkt_certificate",
        kkt_ratio,
        1.0,
        "solver residual over its certification threshold",
    )
    add(
        "binomial_fisher",
        fisher_gap,
        0.05,
        "counting-statistics variance against the classical Fisher bound",
    )
    add(
        "qubit_fastpath",
        _fastpath_suite(rng),
        1e-8,
        "dedicated qubit variance against the generic path",
    )

    all_passed = all(c["passed"] for c in checks)
    for c in checks:
        status = "pass" if c["passed"] else "FAIL"
        print(
            f"{status}  {c['name']}: measured {c['measured']:.3e} "
            f"(threshold {c['threshold']:.3e})"
        )
    report = {
        "format": "trajtomo-validate",
        "version": tio.FORMAT_VERSION,
        "model_hash": tio.model_hash(desc),
        "n_records": len(records) if records is not None else 0,
        "checks": checks,
        "passed": all_passed,
    }
    if args.out is not None:
        tio.write_json(args.out, report)
        print(f"report written to {args.out}")
    return 0 if all_passed else 1


def _ensemble_rows(model, desc, records, starts, observables) -> list[dict]:
    rho0 = tio.initial_state(desc, model)
    if isinstance(model, KrausFamily):
        filtered = forward_batch(model, records, rho0, starts)
    else:
        filtered = forward_filter_batch(model, records, rho0, starts)
    rows = []
    for t in starts:
        states = filtered[t]
        n = states.shape[0]
        for name, op in observables:
            vals = np.einsum("nij,ji->n", states, op).real
            mean = float(vals.mean())
            sem = float(vals.std(ddof=1) / math.sqrt(n)) if n > 1 else float("nan")
            rows.append(
                {
                    "t": t,
                    "observable": f"ensemble:{name}",
                    "mean": mean,
                    "sigma": sem,
                    "lo95": mean - 2.0 * sem,
                    "hi95": mean + 2.0 * sem,
                    "rank": float("nan"),
                    "lambda": float("nan"),
                    "kkt_residual": float("nan"),
                }
            )
    return rows


def _cmd_tomography(args) -> int:
    desc = tio.load_model(args.model)
    model = tio.instantiate_model(desc)
    meta, records = tio.read_records(args.records)
    problems = tio.validate_records(desc, model, meta, records)
    starts = _parse_start_times(args.start_times)
    span = min(len(r) for r in records)
    for s in starts:
        if s >= span:
            problems.append(
                f"start time {s} is beyond the end of the shortest record "
                f"({span} steps)"
            )
    if problems:
        for p in problems:
            print(f"problem: {p}", file=sys.stderr)
        return 1
    observables = _parse_observables(args.observables, model.dim)
    threads = _resolve_threads(args.threads)
    tol = DEFAULT if args.kkt_tol is None else DEFAULT.with_(kkt=args.kkt_tol)
    options = SolveOptions(max_iterations=args.max_iterations, keep_history=False)
    if isinstance(model, KrausFamily):
        effects_by_start = backward_sweep_batch(
            model, records, starts, threads=threads
        )
    else:
        effects_by_start = backward_continuous_batch(
            model, records, start_indices=starts
        )
    rows: list[dict] = []
    sidecar_states: dict[str, dict] = {}
    for t in starts:
        effects = effects_by_start[t]
        result = solve_maxlike(effects, options=options, tol=tol)
        if not result.certified:
            print(
                f"warning: t={t} stopped after {result.n_iterations} iterations "
                f"with residual {result.kkt.residual:.3e} (threshold "
                f"{result.kkt.threshold:.3e})",
                file=sys.stderr,
            )
        r_matrix = build_r_matrix(result.rho, effects, tol=tol)
        diag = {
            "rank": result.rank,
            "lambda": result.lagrange_multiplier,
            "kkt_residual": result.kkt.residual,
        }
        if not observables:
            rows.append(
                {
                    "t": t,
                    "observable": "",
                    "mean": float("nan"),
                    "sigma": float("nan"),
                    "lo95": float("nan"),
                    "hi95": float("nan"),
                    **diag,
                }
            )
        for name, op in observables:
            try:
                iv = r_matrix.interval(op, label=name)
                mean, sigma = iv.mean, iv.sigma
                lo, hi = iv.lo95, iv.hi95
            except Unidentifiable as exc:
                print(f"warning: t={t} observable {name}: {exc}", file=sys.stderr)
                mean = float(np.einsum("ij,ji->", op, result.rho.matrix).real)
                sigma = lo = hi = float("nan")
            rows.append(
                {
                    "t": t,
                    "observable": name,
                    "mean": mean,
                    "sigma": sigma,
                    "lo95": lo,
                    "hi95": hi,
                    **diag,
                }
            )
        sidecar_states[str(t)] = {
            "rho": tio.matrix_to_json(result.rho.matrix),
            "log_likelihood": result.log_likelihood,
            "certified": result.certified,
            "rank": result.rank,
            "lagrange_multiplier": result.lagrange_multiplier,
            "kkt_residual": result.kkt.residual,
            "n_iterations": result.n_iterations,
        }
        print(
            f"t={t}: rank {result.rank}, log-likelihood {result.log_likelihood:.6f}, "
            f"certified {result.certified}"
        )
    if args.report_ensemble_average:
        rows.extend(_ensemble_rows(model, desc, records, starts, observables))
    tio.write_results_csv(args.out, rows)
    sidecar = Path(args.out).with_suffix(".state.json")
    tio.write_json(
        sidecar,
        {
            "format": "trajtomo-tomography",
            "version": tio.FORMAT_VERSION,
            "model_hash": tio.model_hash(desc),
            "start_times": starts,
            "states": sidecar_states,
        },
    )
    print(f"wrote {len(rows)} rows to {args.out} (states in {sidecar})")
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="trajtomo",
        description="Initial-state tomography from measurement trajectories.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="draw records from a model file")
    sim.add_argument("--model", required=True, help="model description JSON")
    sim.add_argument("--records", required=True, help="output record archive (JSONL)")
    sim.add_argument("--seed", type=int, default=0, help="RNG seed (default 0)")
    sim.add_argument(
        "--n-trajectories", type=int, default=100,
        help="number of records to draw (default 100)",
    )
    sim.set_defaults(func=_cmd_simulate)

    tom = sub.add_parser("tomography", help="reconstruct states from records")
    tom.add_argument("--model", required=True, help="model description JSON")
    tom.add_argument("--records", required=True, help="input record archive (JSONL)")
    tom.add_argument("--out", required=True, help="output results CSV")
    tom.add_argument(
        "--start-times", default="0",
        help="comma-separated step indices to reconstruct at (default 0)",
    )
    tom.add_argument(
        "--observables", default=None,
        help="comma-separated observable names: x,y,z for qubits, n and p<k> "
        "for photon-number models (default depends on dimension)",
    )
    tom.add_argument(
        "--threads", type=int, default=None,
        help="worker threads for mixed-length batches; overrides TRAJTOMO_THREADS",
    )
    tom.add_argument(
        "--report-ensemble-average", action="store_true",
        help="also report forward-filtered ensemble averages as ensemble:<name> rows",
    )
    tom.add_argument(
        "--kkt-tol", type=float, default=None,
        help="override the per-record optimality tolerance (default 1e-7)",
    )
    tom.add_argument(
        "--max-iterations", type=int, default=SolveOptions().max_iterations,
        help="iteration cap for the likelihood solver",
    )
    tom.set_defaults(func=_cmd_tomography)

    val = sub.add_parser(
        "validate",
        help="run consistency suites against a model file and optional records",
    )
    val.add_argument("--model", required=True, help="model description JSON")
    val.add_argument("--records", default=None, help="record archive to cross-check")
    val.add_argument("--out", default=None, help="write the JSON check report here")
    val.set_defaults(func=_cmd_validate)
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return args.func(args)
    except _VALIDATION_ERRORS as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return 1
    except _NUMERICAL_ERRORS as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return 3
    except (OSError, json.JSONDecodeError, ValueError, KeyError, TypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
