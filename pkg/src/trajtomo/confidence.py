"""Error bars for reconstructed states.

The reconstruction is a constrained maximum-likelihood problem, so the
usual inverse-Hessian rule needs two amendments: curvature is measured
only along directions that keep the state Hermitian, trace-one and
positive (the tangent space of the rank-r stratum), and sitting on the
boundary contributes extra stiffness through the curvature of the
positivity constraint itself.  Both effects are packaged into a single
positive semidefinite form R on the tangent space:

    R(X) = sum_n tr(X E_n) / tr(rho E_n)^2 * E_par,n
         + D X rho_pinv + rho_pinv X D,        D = Q (lambda I - G) Q,

where E_par,n is the tangent projection of E_n, G is the likelihood
gradient, lambda = tr(rho G), Q projects off the support of rho, and
rho_pinv is the pseudoinverse on the support.  The first sum is exactly
the negative Hessian of the log likelihood restricted to the tangent
space; the second piece is the boundary stiffness.  The variance of an
observable A is then <A_par, R^{-1} A_par>, and a 95% interval is two
standard deviations.

An independent Monte Carlo estimate of the same posterior variance (flat
or Bures-like prior, importance sampling over the full state set) is
provided for cross-checking in low dimension.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .config import DEFAULT, Tolerances
from .errors import DegenerateTrace, EffectiveSampleSizeTooLow, Unidentifiable
from .filtering import stack_effects
from .operators import (
    DensityMatrix,
    HermitianOperator,
    as_matrix,
    hermitian_basis,
    tangent_project,
)

__all__ = [
    "tangent_basis",
    "RMatrix",
    "build_r_matrix",
    "ObservableInterval",
    "MCEstimate",
    "posterior_variance_mc",
]

_NULL_OVERLAP = 1e-6  # relative weight along unconstrained directions that we tolerate


def _support(mat: np.ndarray, tol: Tolerances):
    """Eigendecomposition split into support and kernel of a state."""
    w, v = np.linalg.eigh(mat)
    eps = tol.rank_rel * max(float(w[-1]), 0.0)
    keep = w > eps
    return w, v, keep


def tangent_basis(rho, *, tol: Tolerances = DEFAULT) -> tuple[HermitianOperator, ...]:
    """Orthonormal Hermitian basis of the feasible directions at a state.

    A direction X is feasible when it is traceless and has no component in
    the kernel-kernel block of rho.  For an n-dimensional state of rank r
    there are n^2 - (n - r)^2 - 1 of them.
    """
    mat = as_matrix(rho)
    n = mat.shape[0]
    w, v, keep = _support(mat, tol)
    rank = int(keep.sum())
    p = v[:, keep] @ v[:, keep].conj().T
    p = (p + p.conj().T) / 2.0
    expected = n * n - (n - rank) ** 2 - 1
    out: list[np.ndarray] = []
    for b in hermitian_basis(n).elements[1:]:
        cand = tangent_project(b, p, tol=tol).matrix
        for _ in range(2):
            for prev in out:
                cand = cand - np.einsum("ij,ji->", prev, cand).real * prev
        norm = float(np.linalg.norm(cand))
        if norm > tol.basis_drop:
            out.append(cand / norm)
    if len(out) != expected:
        raise RuntimeError(
            f"tangent basis has {len(out)} elements, expected {expected}; "
            "the support split is numerically ambiguous"
        )
    return tuple(HermitianOperator(b) for b in out)


@dataclass(frozen=True)
class ObservableInterval:
    """Point estimate and spread for one observable.

    half_width_95 is two standard deviations, matching a 95% normal
    interval for the asymptotic posterior.
    """

    label: str
    mean: float
    variance: float

    @property
    def sigma(self) -> float:
        return math.sqrt(self.variance)

    @property
    def half_width_95(self) -> float:
        return 2.0 * self.sigma

    @property
    def lo95(self) -> float:
        return self.mean - self.half_width_95

    @property
    def hi95(self) -> float:
        return self.mean + self.half_width_95


class RMatrix:
    """The stiffness form R in an orthonormal tangent basis, ready to invert.

    Built once per reconstruction; each observable then costs one small
    matrix-vector solve.
    """

    def __init__(self, rho: DensityMatrix, basis, matrix: np.ndarray, lam: float):
        self.rho = rho
        self.basis = tuple(basis)
        self.matrix = np.asarray(matrix, dtype=float)
        self.lagrange_multiplier = float(lam)
        w, u = np.linalg.eigh(self.matrix)
        self._eigvals = w
        self._eigvecs = u

    @property
    def tangent_dim(self) -> int:
        return len(self.basis)

    def _coefficients(self, observable) -> np.ndarray:
        a = as_matrix(observable)
        return np.array(
            [np.einsum("ij,ji->", b.matrix, a).real for b in self.basis]
        )

    def variance(self, observable) -> float:
        """Squared error bar <A_par, R^{-1} A_par> for tr(rho A).

        Raises Unidentifiable when A has tangent weight along directions
        the records leave unconstrained (zero modes of R).
        """
        a = self._coefficients(observable)
        norm = float(np.linalg.norm(a))
        if norm == 0.0:
            return 0.0
        w = self._eigvals
        cut = DEFAULT.singular_rel * max(float(w[-1]), 0.0)
        live = w > cut
        proj = self._eigvecs.T @ a
        dead = float(np.linalg.norm(proj[~live]))
        if dead > _NULL_OVERLAP * norm:
            raise Unidentifiable(
                "observable has relative weight "
                f"{dead / norm:.2e} along directions the records do not "
                "constrain; its error bar is unbounded"
            )
        return float(np.sum(proj[live] ** 2 / w[live]))

    def interval(self, observable, label: str = "") -> ObservableInterval:
        mean = float(
            np.einsum("ij,ji->", as_matrix(observable), self.rho.matrix).real
        )
        return ObservableInterval(label, mean, self.variance(observable))


def build_r_matrix(rho, effects, *, tol: Tolerances = DEFAULT) -> RMatrix:
    """Assemble the stiffness form at a reconstructed state.

    The boundary piece uses D projected onto the kernel of rho: at an
    exact optimum the gradient already equals lambda on the support, so
    this changes nothing analytically but stops optimizer residue from
    being amplified by the pseudoinverse.
    """
    state = rho if isinstance(rho, DensityMatrix) else DensityMatrix(rho, tol=tol)
    mat = state.matrix
    e, _ = stack_effects(effects)
    if e.shape[0] == 0:
        raise ValueError("no effects given")
    traces = np.einsum("nij,ji->n", e, mat).real
    if traces.min() <= 0.0:
        raise DegenerateTrace("state assigns zero probability to some record")
    g = np.einsum("n,nij->ij", 1.0 / traces, e)
    g = (g + g.conj().T) / 2.0
    lam = float(np.einsum("ij,ji->", mat, g).real)
    basis = tangent_basis(state, tol=tol)
    bmats = np.stack([b.matrix for b in basis])
    # curvature of the data term: sum_n (c_n c_n^T) / t_n^2 with c_n,i = tr(B_i E_n)
    c = np.einsum("mij,nji->mn", bmats, e).real / traces[None, :]
    r = c @ c.T
    # boundary stiffness through the kernel block
    w, v, keep = _support(mat, tol)
    if not keep.all():
        vq = v[:, ~keep]
        d_q = vq @ (vq.conj().T @ (lam * np.eye(mat.shape[0]) - g) @ vq) @ vq.conj().T
        d_q = (d_q + d_q.conj().T) / 2.0
        vp = v[:, keep]
        pinv = (vp / w[keep]) @ vp.conj().T
        moved = d_q @ bmats @ pinv
        moved = moved + moved.conj().transpose(0, 2, 1)
        r = r + np.einsum("mij,kji->mk", bmats, moved).real
    r = (r + r.T) / 2.0
    return RMatrix(state, basis, r, lam)


# ---------------------------------------------------------------------------
# Monte Carlo cross-check
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MCEstimate:
    """Importance-sampling estimate of the posterior law of tr(rho A).

    mean and variance are the posterior mean and central variance;
    stderr is the Monte Carlo standard error of the mean, so the
    sampling noise itself can be judged against any observed offset.
    """

    mean: float
    variance: float
    stderr: float
    ess: float
    n_samples: int
    n_valid: int


def _log_prior(kind, samples_flat: np.ndarray, dim: int) -> np.ndarray:
    if callable(kind):
        return np.asarray(kind(samples_flat.reshape(-1, dim, dim)), dtype=float)
    if kind == "flat":
        return np.zeros(samples_flat.shape[0])
    if kind == "bures-like":
        mats = samples_flat.reshape(-1, dim, dim)
        w = np.linalg.eigvalsh(mats)
        out = np.full(w.shape[0], -np.inf)
        ok = w[:, 0] > 0.0
        out[ok] = -0.5 * np.log(w[ok]).sum(axis=1)
        return out
    raise ValueError(f"unknown prior {kind!r}")


def posterior_variance_mc(
    effects,
    observable,
    center,
    *,
    n_samples: int = 200_000,
    seed: int = 0,
    prior="flat",
    ess_min: float = 100.0,
    tol: Tolerances = DEFAULT,
) -> MCEstimate:
    """Posterior spread of tr(rho A) by importance sampling over states.

    The proposal is a defensive mixture centered at the reconstructed
    state: 90% a Gaussian shaped by the stiffness form (flat directions
    get widths set by the linear decay rate of the likelihood, capped at
    the state-set diameter) and 10% a uniform ball large enough to cover
    the whole state set.  Draws landing outside the positive cone are
    discarded; the rest are reweighted by prior * likelihood / proposal.

    Exact up to sampling noise, hence the cross-check role.  Supported
    for dimension <= 3, where the acceptance rate of the ball component
    stays workable.

    Raises EffectiveSampleSizeTooLow when the weights degenerate.
    """
    if n_samples < 10_000:
        raise ValueError("need at least 10000 samples for a usable estimate")
    e, logc = stack_effects(effects)
    n = e.shape[0]
    dim = e.shape[1] if n else as_matrix(center).shape[0]
    if n == 0:
        e = np.zeros((0, dim, dim), dtype=complex)
    if dim > 3:
        raise ValueError("Monte Carlo cross-check supports dimension <= 3")
    center_mat = as_matrix(center)
    DensityMatrix(center_mat, tol=tol)
    basis = hermitian_basis(dim)
    traceless = np.stack([b.matrix for b in basis.elements[1:]])
    m = traceless.shape[0]
    x0 = np.einsum("kij,ji->k", traceless, center_mat).real

    # shape the Gaussian component from the stiffness form in full
    # coordinates; with no effects the likelihood is flat and the
    # posterior is the bare prior, so the form degenerates to zero and
    # every direction falls back to the prior-scale width below
    traces0 = np.einsum("nij,ji->n", e, center_mat).real
    if n and traces0.min() <= 0.0:
        raise DegenerateTrace("center assigns zero probability to some record")
    g = np.einsum("n,nij->ij", 1.0 / traces0, e) if n else np.zeros((dim, dim))
    g = (g + g.conj().T) / 2.0
    lam = float(np.einsum("ij,ji->", center_mat, g).real)
    c = np.einsum("mij,nji->mn", traceless, e).real / traces0[None, :]
    r_full = c @ c.T
    w, v, keep = _support(center_mat, tol)
    if not keep.all():
        vq = v[:, ~keep]
        d_q = vq @ (vq.conj().T @ (lam * np.eye(dim) - g) @ vq) @ vq.conj().T
        d_q = (d_q + d_q.conj().T) / 2.0
        vp = v[:, keep]
        pinv = (vp / w[keep]) @ vp.conj().T
        moved = d_q @ traceless @ pinv
        moved = moved + moved.conj().transpose(0, 2, 1)
        r_full = r_full + np.einsum("mij,kji->mk", traceless, moved).real
    r_full = (r_full + r_full.T) / 2.0
    h, u = np.linalg.eigh(r_full)

    r_state = math.sqrt((dim - 1) / dim)
    ball_radius = r_state + float(np.linalg.norm(x0))
    h_floor = 1e-10 * max(float(h[-1]), 1.0)
    g_coeff = np.einsum("kij,ji->k", traceless, g).real
    sigmas = np.empty(m)
    for k in range(m):
        if h[k] > h_floor:
            sigmas[k] = math.sqrt(2.0 / h[k])
        else:
            kappa = abs(float(u[:, k] @ g_coeff))
            sigmas[k] = min(4.0 / kappa, r_state) if kappa > 0 else r_state
        sigmas[k] = min(sigmas[k], ball_radius)

    rng = np.random.default_rng(seed)
    pick_ball = rng.random(n_samples) < 0.1
    z = rng.standard_normal((n_samples, m))
    xs = np.empty((n_samples, m))
    gauss = ~pick_ball
    xs[gauss] = x0 + (z[gauss] * sigmas) @ u.T
    n_ball = int(pick_ball.sum())
    if n_ball:
        dirs = rng.standard_normal((n_ball, m))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        radii = ball_radius * rng.random(n_ball) ** (1.0 / m)
        xs[pick_ball] = x0 + dirs * radii[:, None]

    mats = np.einsum("sk,kij->sij", xs, traceless) + np.eye(dim) / dim
    eigs = np.linalg.eigvalsh(mats)
    valid = eigs[:, 0] >= 0.0
    xs, mats = xs[valid], mats[valid]
    n_valid = int(valid.sum())
    if n_valid == 0:
        raise EffectiveSampleSizeTooLow("no proposal draw landed in the state set")

    # mixture log density, needed exactly for unbiased reweighting; every
    # state lies within ball_radius of the center, so the ball term is
    # always active and the density never underflows to zero
    diffs = (xs - x0) @ u
    log_gauss = (
        -0.5 * np.sum((diffs / sigmas) ** 2, axis=1)
        - np.log(sigmas).sum()
        - 0.5 * m * math.log(2.0 * math.pi)
    )
    log_ball_vol = (
        0.5 * m * math.log(math.pi)
        - math.lgamma(0.5 * m + 1.0)
        + m * math.log(ball_radius)
    )
    log_q = np.log(0.9 * np.exp(log_gauss) + 0.1 * math.exp(-log_ball_vol))

    a = as_matrix(observable)
    phi = np.einsum("sij,ji->s", mats, a).real

    log_like = np.zeros(n_valid)
    if n:
        e_flat = np.concatenate(
            [
                e.transpose(0, 2, 1).reshape(n, -1).real,
                -e.transpose(0, 2, 1).reshape(n, -1).imag,
            ],
            axis=1,
        )
        s_flat = np.concatenate(
            [mats.reshape(n_valid, -1).real, mats.reshape(n_valid, -1).imag],
            axis=1,
        )
        chunk = max(1, int(1.6e8 / (8 * n)))
        for lo in range(0, n_valid, chunk):
            hi = min(lo + chunk, n_valid)
            t = s_flat[lo:hi] @ e_flat.T
            bad = t.min(axis=1) <= 0.0
            with np.errstate(divide="ignore", invalid="ignore"):
                ll = np.log(np.maximum(t, 1e-300)).sum(axis=1)
            ll[bad] = -np.inf
            log_like[lo:hi] = ll

    log_w = log_like + _log_prior(prior, mats.reshape(n_valid, -1), dim) - log_q
    finite = np.isfinite(log_w)
    if not finite.any():
        raise EffectiveSampleSizeTooLow("all importance weights vanished")
    log_w = log_w - log_w[finite].max()
    weights = np.where(finite, np.exp(log_w), 0.0)
    total = float(weights.sum())
    ess = total**2 / float((weights**2).sum())
    if ess < ess_min:
        raise EffectiveSampleSizeTooLow(
            f"effective sample size {ess:.1f} below the floor {ess_min:g}", ess=ess
        )
    norm_w = weights / total
    mean = float(norm_w @ phi)
    variance = float(norm_w @ (phi - mean) ** 2)
    stderr = math.sqrt(float(norm_w**2 @ (phi - mean) ** 2))
    return MCEstimate(
        mean=mean,
        variance=variance,
        stderr=stderr,
        ess=ess,
        n_samples=n_samples,
        n_valid=n_valid,
    )
