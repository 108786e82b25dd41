"""Maximum-likelihood state reconstruction over compressed records.

With every record n reduced to a pair (log c_n, E_n), the log likelihood

    f(rho) = sum_n [log c_n + log tr(rho E_n)]

is concave on the state set, and its gradient is G = sum_n E_n / tr(rho E_n).
The optimizer climbs f with projected gradient steps and stops once the
first-order optimality conditions hold to a scaled tolerance:

    [rho, G] = 0,    G <= lambda * I,    G = lambda * I on the support,

with lambda = tr(rho G), which equals the record count at any state.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .config import DEFAULT, Tolerances
from .errors import DegenerateLikelihood, DegenerateTrace
from .filtering import stack_effects
from .operators import DensityMatrix, HermitianOperator, as_matrix, project_to_density

__all__ = [
    "SolveOptions",
    "KKTReport",
    "TomographyResult",
    "gradient",
    "kkt_certificate",
    "solve_maxlike",
]


@dataclass(frozen=True)
class SolveOptions:
    """Knobs for the projected gradient ascent.

    max_iterations   hard cap on outer iterations
    armijo_c1        sufficient-increase fraction for the backtracking search
    armijo_shrink    step multiplier applied on each backtrack
    max_backtracks   backtracks per iteration before giving up on the step
    keep_history     record f after every iteration (cheap, handy for demos)
    """

    max_iterations: int = 10_000
    armijo_c1: float = 1e-4
    armijo_shrink: float = 0.5
    max_backtracks: int = 60
    keep_history: bool = True

    def with_(self, **kwargs) -> "SolveOptions":
        return replace(self, **kwargs)


@dataclass(frozen=True)
class KKTReport:
    """Stationarity diagnostics at a candidate state.

    residual is the worst of three numbers, all zero at an exact optimum:
    the Frobenius norm of [rho, G], how far the top of G pokes above
    lambda, and how far G dips below lambda on the support of rho.
    """

    residual: float
    commutator_norm: float
    ascent_excess: float
    support_deficit: float
    lagrange_multiplier: float
    rank: int
    threshold: float
    satisfied: bool


@dataclass(frozen=True)
class TomographyResult:
    rho: DensityMatrix
    log_likelihood: float
    gradient: HermitianOperator
    kkt: KKTReport
    n_records: int
    n_iterations: int
    certified: bool
    f_history: tuple[float, ...]

    @property
    def rank(self) -> int:
        return self.kkt.rank

    @property
    def lagrange_multiplier(self) -> float:
        return self.kkt.lagrange_multiplier


def _f_and_traces(mat: np.ndarray, e: np.ndarray, logc_sum: float):
    traces = np.einsum("nij,ji->n", e, mat).real
    if traces.min() <= 0.0:
        return -math.inf, traces
    return float(logc_sum + np.log(traces).sum()), traces


def _grad_matrix(e: np.ndarray, traces: np.ndarray) -> np.ndarray:
    g = np.einsum("n,nij->ij", 1.0 / traces, e)
    return (g + g.conj().T) / 2.0


def gradient(rho, effects) -> HermitianOperator:
    """Likelihood gradient sum_n E_n / tr(rho E_n) at the given state."""
    e, _ = stack_effects(effects)
    mat = as_matrix(rho)
    traces = np.einsum("nij,ji->n", e, mat).real
    if traces.min() <= 0.0:
        raise DegenerateTrace("state assigns zero probability to some record")
    return HermitianOperator(_grad_matrix(e, traces))


def kkt_certificate(rho, effects, *, tol: Tolerances = DEFAULT) -> KKTReport:
    """Check first-order optimality of a state for the given effects."""
    e, _ = stack_effects(effects)
    mat = as_matrix(rho)
    traces = np.einsum("nij,ji->n", e, mat).real
    if traces.min() <= 0.0:
        raise DegenerateTrace("state assigns zero probability to some record")
    return _certificate(mat, _grad_matrix(e, traces), e.shape[0], tol)


def _certificate(
    mat: np.ndarray, g: np.ndarray, n_records: int, tol: Tolerances
) -> KKTReport:
    lam = float(np.einsum("ij,ji->", mat, g).real)
    comm = mat @ g - g @ mat
    comm_norm = float(np.linalg.norm(comm))
    g_eigs = np.linalg.eigvalsh(g)
    ascent = max(0.0, float(g_eigs[-1]) - lam)
    w, v = np.linalg.eigh(mat)
    eps_rank = tol.rank_rel * max(w[-1], 0.0)
    support = w > eps_rank
    rank = int(support.sum())
    if rank == 0:
        support_deficit = math.inf
    else:
        vr = v[:, support]
        inner = np.linalg.eigvalsh(vr.conj().T @ g @ vr)
        support_deficit = max(0.0, lam - float(inner[0]))
    residual = max(comm_norm, ascent, support_deficit)
    threshold = tol.kkt * max(n_records, 1)
    return KKTReport(
        residual=residual,
        commutator_norm=comm_norm,
        ascent_excess=ascent,
        support_deficit=support_deficit,
        lagrange_multiplier=lam,
        rank=rank,
        threshold=threshold,
        satisfied=residual <= threshold,
    )


def solve_maxlike(
    effects,
    *,
    rho0=None,
    options: SolveOptions = SolveOptions(),
    tol: Tolerances = DEFAULT,
) -> TomographyResult:
    """Find the state maximizing the compressed-record likelihood.

    Projected gradient ascent with a Barzilai-Borwein step proposal and a
    monotone backtracking line search.  Iterations stop as soon as the
    stationarity certificate passes; hitting the iteration cap returns the
    best state found with ``certified=False``.
    """
    e, logc = stack_effects(effects)
    n = e.shape[0]
    if n == 0:
        raise ValueError("no effects given")
    dim = e.shape[1]
    eye = np.eye(dim)
    if float(np.abs(e - eye / dim).max()) <= 1e-12:
        raise DegenerateLikelihood(
            "every effect is maximally mixed; the likelihood does not depend "
            "on the state"
        )
    logc_sum = float(logc.sum())
    if rho0 is None:
        mat = eye.astype(complex) / dim
    else:
        mat = as_matrix(rho0).astype(complex)
        DensityMatrix(mat, tol=tol)
    f, traces = _f_and_traces(mat, e, logc_sum)
    if not math.isfinite(f):
        # the interior start is safe; a user-supplied boundary start may not be
        mat = eye.astype(complex) / dim
        f, traces = _f_and_traces(mat, e, logc_sum)
    g = _grad_matrix(e, traces)
    history = [f] if options.keep_history else None
    alpha = 1.0 / max(n, 1)
    report = _certificate(mat, g, n, tol)
    iters = 0
    while iters < options.max_iterations and not report.satisfied:
        iters += 1
        accepted = False
        step = alpha
        for _ in range(options.max_backtracks):
            cand = project_to_density(mat + step * g, tol=tol).matrix
            delta = cand - mat
            gain = float(np.einsum("ij,ji->", g, delta).real)
            f_new, traces_new = _f_and_traces(cand, e, logc_sum)
            if math.isfinite(f_new) and f_new >= f + options.armijo_c1 * gain:
                accepted = True
                break
            step *= options.armijo_shrink
        if not accepted:
            break
        g_new = _grad_matrix(e, traces_new)
        s = delta.reshape(-1)
        y = (g - g_new).reshape(-1)
        sy = float(np.vdot(s, y).real)
        if sy > 0.0:
            alpha = min(max(float(np.vdot(s, s).real) / sy, 1e-18), 1e18)
        else:
            alpha = min(step * 2.0, 1e18)
        mat, f, g = cand, f_new, g_new
        if options.keep_history:
            history.append(f)
        report = _certificate(mat, g, n, tol)
    rho = DensityMatrix(mat, tol=tol)
    return TomographyResult(
        rho=rho,
        log_likelihood=f,
        gradient=HermitianOperator(g),
        kkt=report,
        n_records=n,
        n_iterations=iters,
        certified=report.satisfied,
        f_history=tuple(history) if history is not None else (),
    )
