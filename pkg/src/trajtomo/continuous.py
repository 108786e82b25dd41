"""Diffusive continuous monitoring, discretized to first order in dt.

One time step of a diffusively monitored system with Hamiltonian H and
channels L_nu (efficiency eta_nu) is the completely positive map

    K_dy(rho) = M_dy rho M_dy^dag + sum_nu (1 - eta_nu) L_nu rho L_nu^dag dt,
    M_dy = exp(-i H dt) (I - dt sum_nu L_nu^dag L_nu)^(1/2)
             + sum_{monitored nu} sqrt(eta_nu) dy_nu L_nu,

whose deterministic factor equals I + (-i H - 1/2 sum L^dag L) dt to
first order in dt but keeps the step channel exactly trace preserving,

where dy_nu is the measured signal increment over the step.  The model
assigns the increments the probability density tr(K_dy(rho)) N(dy; 0, dt),
a Gaussian tilted by a nonnegative quadratic in dy; to first order in dt
this is dy_nu = sqrt(eta_nu) tr((L_nu + L_nu^dag) rho) dt + dW with dW of
variance dt.  simulate_sme draws from the exact tilted law so that the
simulator and the filter describe the same process at any step size.
tr(K_dy(rho)) is the likelihood density of the increment relative to pure
noise, so records compress to (effect, log scale) pairs exactly as in the
discrete-outcome case, and the same reconstruction stack applies
downstream.

Because K_dy is built from Kraus-style operators it preserves positivity
by construction; only the unconditional Euler propagator in
lindblad_evolve can step slightly outside the cone, and it carries a
clip-or-fail policy for that.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from scipy.linalg import expm
from scipy.special import ndtr

from .config import DEFAULT, Tolerances
from .errors import StepSizeTooLarge, ZeroProbability
from .filtering import AdjointResult, FilterTrace
from .operators import DensityMatrix, EffectMatrix, as_matrix, _wrap_trusted

__all__ = [
    "Channel",
    "SMEModel",
    "ContinuousRecord",
    "build_m",
    "cp_map_continuous",
    "adjoint_cp_map_continuous",
    "simulate_sme",
    "forward_filter",
    "forward_filter_batch",
    "backward_continuous",
    "backward_continuous_batch",
    "lindblad_evolve",
]

_TRACE_BAND = 0.5  # |step trace - 1| beyond this means dt cannot resolve the dynamics


@dataclass(frozen=True)
class Channel:
    """One dissipation channel: jump operator and detection efficiency."""

    operator: np.ndarray
    efficiency: float = 0.0

    def __post_init__(self):
        op = np.array(self.operator, dtype=complex)
        if op.ndim != 2 or op.shape[0] != op.shape[1]:
            raise ValueError("channel operator must be a square matrix")
        op.flags.writeable = False
        object.__setattr__(self, "operator", op)
        eta = float(self.efficiency)
        if not 0.0 <= eta <= 1.0:
            raise ValueError(f"efficiency {eta} outside [0, 1]")
        object.__setattr__(self, "efficiency", eta)


@dataclass(frozen=True)
class SMEModel:
    """Hamiltonian, channels and time grid of a diffusive monitoring run."""

    hamiltonian: np.ndarray
    channels: tuple[Channel, ...]
    dt: float
    n_steps: int

    def __post_init__(self):
        h = np.array(self.hamiltonian, dtype=complex)
        if h.ndim != 2 or h.shape[0] != h.shape[1]:
            raise ValueError("hamiltonian must be a square matrix")
        if float(np.abs(h - h.conj().T).max()) > 1e-12 * max(
            1.0, float(np.abs(h).max())
        ):
            raise ValueError("hamiltonian must be Hermitian")
        h.flags.writeable = False
        object.__setattr__(self, "hamiltonian", h)
        chans = tuple(self.channels)
        for c in chans:
            if not isinstance(c, Channel):
                raise TypeError("channels must be Channel instances")
            if c.operator.shape != h.shape:
                raise ValueError("channel dimension does not match hamiltonian")
        object.__setattr__(self, "channels", chans)
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        object.__setattr__(self, "dt", float(self.dt))
        if int(self.n_steps) < 1:
            raise ValueError("need at least one step")
        object.__setattr__(self, "n_steps", int(self.n_steps))
        gen = -1j * h - 0.5 * self._damping()
        speed = float(np.linalg.norm(gen, 2)) * self.dt
        if speed > 0.1:
            warnings.warn(
                f"dt resolves the dynamics poorly (generator norm * dt = "
                f"{speed:.3f}); first-order stepping will be inaccurate",
                RuntimeWarning,
                stacklevel=2,
            )

    def _damping(self) -> np.ndarray:
        d = self.hamiltonian.shape[0]
        out = np.zeros((d, d), dtype=complex)
        for c in self.channels:
            out += c.operator.conj().T @ c.operator
        return out

    @property
    def dim(self) -> int:
        return self.hamiltonian.shape[0]

    @property
    def monitored(self) -> tuple[int, ...]:
        return tuple(
            i for i, c in enumerate(self.channels) if c.efficiency > 0.0
        )

    @property
    def duration(self) -> float:
        return self.dt * self.n_steps


@dataclass(frozen=True)
class ContinuousRecord:
    """Measured signal increments over a time grid.

    increments has shape (n_steps, n_monitored_channels); row t holds the
    integrals of each monitored signal over [t dt, (t+1) dt].
    """

    id: int
    dt: float
    increments: np.ndarray

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        object.__setattr__(self, "dt", float(self.dt))
        sig = np.array(self.increments, dtype=float)
        if sig.ndim != 2:
            raise ValueError("increments must be a 2-d array (steps, channels)")
        if sig.shape[0] < 1:
            raise ValueError("a record needs at least one step")
        sig.flags.writeable = False
        object.__setattr__(self, "increments", sig)

    def __len__(self) -> int:
        return self.increments.shape[0]


def _step_ops(model: SMEModel):
    """(deterministic part of M, stacked sqrt(eta) L for monitored channels,
    Kraus operators of the undetected residue).

    The deterministic part is exp(-i H dt) (I - dt sum L^dag L)^(1/2),
    which agrees with I + (-i H - 1/2 sum L^dag L) dt to first order but
    makes the one-step channel trace preserving exactly, so the signal
    densities integrate to one for every state.  Without that, maximum
    likelihood over long records drifts toward states whose leftover
    normalization defect is largest.
    """
    d = model.dim
    damp = model._damping()
    vals, vecs = np.linalg.eigh(damp)
    scaled = 1.0 - model.dt * vals
    if scaled.min() < 0.0:
        raise StepSizeTooLarge(
            "dt exceeds the inverse damping rate; the one-step Kraus "
            "factor is not defined"
        )
    root = (vecs * np.sqrt(scaled)) @ vecs.conj().T
    base = expm(-1j * model.dt * model.hamiltonian) @ root
    mon = model.monitored
    if mon:
        stack = np.stack(
            [math.sqrt(model.channels[i].efficiency) * model.channels[i].operator
             for i in mon]
        )
    else:
        stack = np.zeros((0, d, d), dtype=complex)
    resid = [
        math.sqrt((1.0 - c.efficiency) * model.dt) * c.operator
        for c in model.channels
        if c.efficiency < 1.0
    ]
    return base, stack, resid


def _check_record(model: SMEModel, record: ContinuousRecord) -> None:
    sig = record.increments
    if not math.isclose(record.dt, model.dt, rel_tol=1e-9, abs_tol=0.0):
        raise ValueError(
            f"record {record.id} was taken on a {record.dt} s grid but the "
            f"model steps by {model.dt} s"
        )
    if sig.shape[1] != len(model.monitored):
        raise ValueError(
            f"record {record.id} carries {sig.shape[1]} signal channels but "
            f"the model monitors {len(model.monitored)}"
        )
    if sig.shape[0] > model.n_steps:
        raise ValueError(
            f"record {record.id} has {sig.shape[0]} steps but the model "
            f"defines {model.n_steps}"
        )


def build_m(model: SMEModel, dy) -> np.ndarray:
    """The stochastic Kraus operator M for one step with increments dy."""
    dy = np.asarray(dy, dtype=float)
    base, stack, _ = _step_ops(model)
    if dy.shape != (stack.shape[0],):
        raise ValueError(f"expected {stack.shape[0]} signal increments")
    if stack.shape[0]:
        return base + np.einsum("v,vij->ij", dy, stack)
    return base


def cp_map_continuous(model: SMEModel, dy, rho) -> np.ndarray:
    """Unnormalized one-step update K_dy(rho)."""
    m = build_m(model, dy)
    x = as_matrix(rho)
    out = m @ x @ m.conj().T
    _, _, resid = _step_ops(model)
    for k in resid:
        out += k @ x @ k.conj().T
    return out


def adjoint_cp_map_continuous(model: SMEModel, dy, effect) -> np.ndarray:
    """Unnormalized adjoint update K_dy^*(E)."""
    m = build_m(model, dy)
    x = as_matrix(effect)
    out = m.conj().T @ x @ m
    _, _, resid = _step_ops(model)
    for k in resid:
        out += k.conj().T @ x @ k
    return out


def _band_check(traces: np.ndarray, t: int) -> None:
    worst = float(np.abs(traces - 1.0).max())
    if worst > _TRACE_BAND:
        raise StepSizeTooLarge(
            f"step {t} changed the trace by {worst:.3f}; dt is too large for "
            "this model or the record does not belong to it"
        )


_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def _tilted_normal_ppf(u, a, b, c):
    """Quantiles of the density (a + b x + c x^2) phi(x) / (a + c).

    phi is the standard normal density, a and c are nonnegative and the
    quadratic is nonnegative wherever phi carries mass, so the CDF

        F(x) = [a Phi(x) - b phi(x) + c (Phi(x) - x phi(x))] / (a + c)

    is monotone and available in closed form.  Inverted by bracketed
    Newton iteration, vectorized over the batch.
    """
    u = np.clip(u, 1e-16, 1.0 - 1e-16)
    norm = a + c
    lo = np.full(u.shape, -9.0)
    hi = np.full(u.shape, 9.0)
    x = np.zeros(u.shape)
    for _ in range(60):
        phi = _INV_SQRT_2PI * np.exp(-0.5 * x * x)
        gauss = ndtr(x)
        err = (a * gauss - b * phi + c * (gauss - x * phi)) / norm - u
        hi = np.where(err > 0.0, np.minimum(hi, x), hi)
        lo = np.where(err <= 0.0, np.maximum(lo, x), lo)
        dens = (a + (b + c * x) * x) * phi / norm
        step = np.divide(
            err, dens, out=np.zeros_like(err), where=dens > 1e-300
        )
        trial = x - step
        stuck = (trial <= lo) | (trial >= hi) | ~np.isfinite(trial)
        x = np.where(stuck, 0.5 * (lo + hi), trial)
    return x


def _signal_quadratics(base, stack, resid):
    """Operators whose rho-traces give the outcome density coefficients.

    The one-step density of the increments is
    (a + b . dy + dy^T C dy) N(dy; 0, dt I) with a = tr(rho T0),
    b_v = tr(rho T1_v) and C_vw = tr(rho T2_vw) for the operators
    returned here.
    """
    t0 = base.conj().T @ base
    for k in resid:
        t0 = t0 + k.conj().T @ k
    t1 = np.stack([2.0 * base.conj().T @ s for s in stack]) if len(stack) \
        else np.zeros((0,) + base.shape, complex)
    t2 = np.einsum("wji,vjk->vwik", stack.conj(), stack) if len(stack) \
        else np.zeros((0, 0) + base.shape, complex)
    return t0, t1, t2


def _draw_increments(rng, states, t0, t1, t2, dt):
    """Sample signal increments from the exact one-step outcome law.

    The density is a Gaussian N(0, dt I) tilted by the nonnegative
    quadratic tr(K_dy rho); rotating to the eigenbasis of its quadratic
    part makes the coordinates conditionally one dimensional, each an
    analytic tilted-Gaussian quantile.  Consumes exactly one uniform per
    coordinate per record, so the draw is reproducible by seed.
    """
    n = states.shape[0]
    k = t1.shape[0]
    a = np.einsum("ij,nji->n", t0, states).real
    b = np.einsum("vij,nji->nv", t1, states).real
    quad = np.einsum("vwij,nji->nvw", t2, states).real
    quad = 0.5 * (quad + quad.transpose(0, 2, 1))
    eigs, rot = np.linalg.eigh(quad)
    eigs = np.clip(eigs, 0.0, None)
    # unit-variance coordinates x, dy = sqrt(dt) rot x
    blin = np.einsum("nvk,nv->nk", rot, b) * math.sqrt(dt)
    bquad = eigs * dt
    acc = a
    coords = np.empty((n, k))
    for i in range(k):
        tail = bquad[:, i + 1:].sum(axis=1)
        xi = _tilted_normal_ppf(
            rng.random(n), acc + tail, blin[:, i], bquad[:, i]
        )
        coords[:, i] = xi
        acc = acc + (blin[:, i] + bquad[:, i] * xi) * xi
    return math.sqrt(dt) * np.einsum("nvk,nk->nv", rot, coords)


def simulate_sme(
    model: SMEModel,
    rho0,
    n_records: int,
    rng_seed: int,
    *,
    keep_mean: bool = False,
    tol: Tolerances = DEFAULT,
):
    """Draw signal records from the model's exact outcome law.

    Each step samples the increments from the tilted-Gaussian density
    tr(K_dy rho) N(dy; 0, dt) and conditions the state on the draw, so
    the records are distributed exactly as the filter assumes at the
    model's own step size.  Returns the records; with keep_mean also the
    ensemble average of the conditional states after each step, shape
    (n_steps + 1, dim, dim), which converges to the unconditional
    master-equation solution.
    """
    if n_records < 1:
        raise ValueError("need at least one record")
    rho = as_matrix(rho0)
    DensityMatrix(rho, tol=tol)
    base, stack, resid = _step_ops(model)
    n_mon = stack.shape[0]
    t0, t1, t2 = _signal_quadratics(base, stack, resid)
    rng = np.random.default_rng(rng_seed)
    states = np.tile(rho, (n_records, 1, 1)).astype(complex)
    signals = np.empty((n_records, model.n_steps, n_mon))
    means = [states.mean(axis=0)] if keep_mean else None
    for t in range(model.n_steps):
        dy = _draw_increments(rng, states, t0, t1, t2, model.dt) if n_mon \
            else np.zeros((n_records, 0))
        signals[:, t, :] = dy
        m = base + np.einsum("nv,vij->nij", dy, stack)
        new = m @ states @ m.conj().transpose(0, 2, 1)
        for k in resid:
            new += k @ states @ k.conj().T
        traces = np.einsum("nii->n", new).real
        _band_check(traces, t)
        states = new / traces[:, None, None]
        if keep_mean:
            means.append(states.mean(axis=0))
    records = [
        ContinuousRecord(i, model.dt, signals[i]) for i in range(n_records)
    ]
    if keep_mean:
        return records, np.stack(means)
    return records


def forward_filter(
    model: SMEModel,
    record: ContinuousRecord,
    rho0,
    *,
    tol: Tolerances = DEFAULT,
) -> FilterTrace:
    """Condition an initial state on a measured record, step by step.

    log_prob is the log density of the record relative to pure noise;
    only differences between candidate initial states are meaningful.
    """
    _check_record(model, record)
    rho = rho0 if isinstance(rho0, DensityMatrix) else DensityMatrix(rho0, tol=tol)
    base, stack, resid = _step_ops(model)
    states = [rho]
    probs = []
    log_prob = 0.0
    mat = rho.matrix
    for t in range(record.increments.shape[0]):
        m = base + np.einsum("v,vij->ij", record.increments[t], stack) \
            if stack.shape[0] else base
        new = m @ mat @ m.conj().T
        for k in resid:
            new += k @ mat @ k.conj().T
        p = float(new.trace().real)
        _band_check(np.array([p]), t)
        if p <= tol.prob_floor:
            raise ZeroProbability(
                f"record {record.id} has zero density at step {t}",
                step=t,
                record_id=record.id,
            )
        mat = new / p
        states.append(DensityMatrix(mat, tol=tol))
        probs.append(p)
        log_prob += math.log(p)
    return FilterTrace(tuple(states), tuple(probs), log_prob)


def forward_filter_batch(
    model: SMEModel,
    records: Sequence[ContinuousRecord],
    rho0,
    at: Sequence[int],
    *,
    tol: Tolerances = DEFAULT,
) -> dict[int, np.ndarray]:
    """Conditional states of many records at selected times, batched.

    ``at`` holds step counts (0 is the initial state).  Records must
    share a common length.  Returns (n_records, dim, dim) arrays.
    """
    records = list(records)
    if not records:
        return {int(k): np.zeros((0, model.dim, model.dim)) for k in at}
    lengths = {len(r) for r in records}
    if len(lengths) != 1:
        raise ValueError("batched filtering needs records of a common length")
    n_steps = lengths.pop()
    for r in records:
        _check_record(model, r)
    wanted = frozenset(int(k) for k in at)
    for k in wanted:
        if not 0 <= k <= n_steps:
            raise ValueError(f"time index {k} outside the record span [0, {n_steps}]")
    rho = as_matrix(rho0)
    DensityMatrix(rho, tol=tol)
    n = len(records)
    base, stack, resid = _step_ops(model)
    sig = np.stack([r.increments for r in records])
    states = np.tile(rho, (n, 1, 1)).astype(complex)
    out: dict[int, np.ndarray] = {}
    if 0 in wanted:
        out[0] = states.copy()
    for t in range(n_steps):
        if stack.shape[0]:
            m = base + np.einsum("nv,vij->nij", sig[:, t, :], stack)
            new = m @ states @ m.conj().transpose(0, 2, 1)
        else:
            new = base @ states @ base.conj().T
        for k in resid:
            new += k @ states @ k.conj().T
        traces = np.einsum("nii->n", new).real
        _band_check(traces, t)
        if traces.min() <= tol.prob_floor:
            bad = int(np.argmin(traces))
            raise ZeroProbability(
                f"record {records[bad].id} has zero density at step {t}",
                step=t,
                record_id=records[bad].id,
            )
        states = new / traces[:, None, None]
        if t + 1 in wanted:
            out[t + 1] = states.copy()
    return out


def backward_continuous(
    model: SMEModel,
    record: ContinuousRecord,
    *,
    tol: Tolerances = DEFAULT,
) -> AdjointResult:
    """Compress one signal record into (effect, log scale)."""
    return backward_continuous_batch(model, [record], tol=tol)[0][0]


def backward_continuous_batch(
    model: SMEModel,
    records: Sequence[ContinuousRecord],
    *,
    start_indices: Sequence[int] = (0,),
    tol: Tolerances = DEFAULT,
) -> dict[int, list[AdjointResult]]:
    """Adjoint effects for a batch of records, optionally at several
    suffix start times in one backward pass.

    All records must share a common length.  Results preserve record
    order within each start index.
    """
    records = list(records)
    if not records:
        return {int(s): [] for s in start_indices}
    lengths = {len(r) for r in records}
    if len(lengths) != 1:
        out: dict[int, list[AdjointResult]] = {int(s): [] for s in start_indices}
        for rec in records:
            usable = [s for s in start_indices if s < len(rec)]
            res = backward_continuous_batch(
                model, [rec], start_indices=usable, tol=tol
            )
            for s, adjs in res.items():
                out[s].extend(adjs)
        return out
    n_steps = lengths.pop()
    for r in records:
        _check_record(model, r)
    wanted = frozenset(int(s) for s in start_indices)
    for s in wanted:
        if not 0 <= s < n_steps:
            raise ValueError(f"start index {s} outside the record span [0, {n_steps})")
    d = model.dim
    n = len(records)
    base, stack, resid = _step_ops(model)
    base_h = base.conj().T
    resid_h = [k.conj().T for k in resid]
    sig = np.stack([r.increments for r in records])
    effects = np.tile(np.eye(d, dtype=complex) / d, (n, 1, 1))
    logc = np.full(n, math.log(d))
    snapshots: dict[int, tuple[np.ndarray, np.ndarray]] = {}
    for t in range(n_steps - 1, -1, -1):
        if stack.shape[0]:
            m = base + np.einsum("nv,vij->nij", sig[:, t, :], stack)
            mh = m.conj().transpose(0, 2, 1)
            new = mh @ effects @ m
        else:
            new = base_h @ effects @ base
        for k, kh in zip(resid, resid_h):
            new += kh @ effects @ k
        traces = np.einsum("nii->n", new).real
        _band_check(traces, t)
        if traces.min() <= tol.prob_floor:
            bad = int(np.argmin(traces))
            raise ZeroProbability(
                f"record {records[bad].id} has zero density at step {t}",
                step=t,
                record_id=records[bad].id,
            )
        effects = new / traces[:, None, None]
        logc += np.log(traces)
        if t in wanted:
            snapshots[t] = (effects.copy(), logc.copy())
    out = {}
    for s, (effs, lc) in snapshots.items():
        effs = (effs + effs.conj().transpose(0, 2, 1)) / 2.0
        w = np.linalg.eigvalsh(effs)
        if w[:, 0].min() < -tol.psd:
            bad = int(np.argmin(w[:, 0]))
            raise ValueError(
                f"effect of record {records[bad].id} lost positivity "
                f"(min eigenvalue {w[bad, 0]:.3e})"
            )
        out[s] = [
            AdjointResult(_wrap_trusted(EffectMatrix, e), float(c))
            for e, c in zip(effs, lc)
        ]
    return out


def lindblad_evolve(
    model: SMEModel,
    rho0,
    n_steps: int | None = None,
    *,
    tol: Tolerances = DEFAULT,
) -> np.ndarray:
    """Unconditional first-order evolution, shape (n_steps + 1, dim, dim).

    Each step adds dt * (-i[H, rho] + sum_nu (L rho L^dag
    - 1/2 {L^dag L, rho})).  The increment is traceless, so the trace is
    preserved identically; positivity only holds to O(dt^2), so slightly
    negative eigenvalues are clipped and a violation beyond the clip
    window raises StepSizeTooLarge.
    """
    total = model.n_steps if n_steps is None else int(n_steps)
    if not 1 <= total:
        raise ValueError("need at least one step")
    mat = as_matrix(rho0).astype(complex)
    DensityMatrix(mat, tol=tol)
    h = model.hamiltonian
    ops = [c.operator for c in model.channels]
    damp = model._damping()
    out = [mat]
    for t in range(total):
        inc = -1j * (h @ mat - mat @ h)
        for l in ops:
            inc += l @ mat @ l.conj().T
        inc -= 0.5 * (damp @ mat + mat @ damp)
        mat = mat + model.dt * inc
        mat = (mat + mat.conj().T) / 2.0
        w, v = np.linalg.eigh(mat)
        if w[0] < -tol.eig_clip:
            raise StepSizeTooLarge(
                f"unconditional step {t} produced eigenvalue {w[0]:.3e}; "
                "reduce dt"
            )
        if w[0] < -tol.psd:
            w = np.clip(w, 0.0, None)
            w = w / w.sum()
            mat = (v * w) @ v.conj().T
        out.append(mat)
    return np.stack(out)
