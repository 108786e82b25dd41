"""Ready-made measurement models.

Two concrete setups are packaged here, matching the regimes the rest of
the library is exercised on:

* a superconducting qubit whose spontaneous emission is monitored by
  heterodyne detection (two noisy quadrature signals plus undetected
  dephasing), built as an SMEModel;
* a microwave cavity probed by a stream of dispersive atoms that read
  out the photon number without exchanging energy, interleaved with
  thermal relaxation, built as a discrete KrausFamily.

Plus small utilities: POVM shots as single-step families, exact
thermal-relaxation Kraus decompositions, and a photon-injection channel
for jump-detection studies.
"""
from __future__ import annotations

import math

import numpy as np
from scipy.linalg import expm

from .config import DEFAULT, Tolerances
from .continuous import Channel, ContinuousRecord, SMEModel
from .errors import IncompletePOVM
from .operators import DensityMatrix, KrausFamily
from .qubit import SIGMA_X, SIGMA_Y, SIGMA_Z

__all__ = [
    "build_fluorescence_model",
    "quadrature_estimates",
    "povm_family",
    "pauli_povm",
    "number_operator",
    "thermal_state",
    "mean_photon",
    "thermal_relaxation_kraus",
    "kraus_to_superop",
    "injection_channel",
    "thermal_decay_curve",
    "build_qnd_family",
]


# ---------------------------------------------------------------------------
# heterodyne fluorescence monitoring of a qubit
# ---------------------------------------------------------------------------


def build_fluorescence_model(
    *,
    t1: float = 4.15e-6,
    tphi: float = 35e-6,
    dt: float = 200e-9,
    n_steps: int = 46,
    efficiency: float = 0.24,
) -> SMEModel:
    """Heterodyne monitoring of qubit fluorescence.

    Basis index 0 is the excited state (sz = +1), so relaxation pulls the
    z component toward -1 at rate 1/t1 and shrinks the transverse
    components at rate 1/(2 t1) + 1/tphi.  The emission line is split
    into two quadrature channels L and iL, each detected with the given
    efficiency; pure dephasing is never detected.  There is no drive, so
    the Hamiltonian is zero in the rotating frame.

    An unbiased estimate of x (resp. y) from the records is
    sqrt(2 t1 / efficiency) * mean(dy_1) / dt (resp. dy_2).
    """
    lower = math.sqrt(1.0 / (2.0 * t1)) * (SIGMA_X - 1j * SIGMA_Y) / 2.0
    dephase = math.sqrt(1.0 / (2.0 * tphi)) * SIGMA_Z
    return SMEModel(
        hamiltonian=np.zeros((2, 2)),
        channels=(
            Channel(lower, efficiency),
            Channel(1j * lower, efficiency),
            Channel(dephase, 0.0),
        ),
        dt=dt,
        n_steps=n_steps,
    )


def quadrature_estimates(
    records: list[ContinuousRecord], *, t1: float, efficiency: float, dt: float
) -> np.ndarray:
    """Raw-signal estimate of (x, y) from fluorescence records."""
    sig = np.concatenate([r.increments for r in records], axis=0)
    return math.sqrt(2.0 * t1 / efficiency) * sig.mean(axis=0) / dt


# ---------------------------------------------------------------------------
# POVM shots
# ---------------------------------------------------------------------------


def povm_family(
    elements: dict[str, np.ndarray],
    *,
    n_steps: int = 1,
    tol: Tolerances = DEFAULT,
) -> KrausFamily:
    """A measurement family from POVM elements, one shot per step.

    Each element F must be positive semidefinite and the set must resolve
    the identity; the Kraus operator used per outcome is the positive
    square root of F.
    """
    mats = {y: np.asarray(f, dtype=complex) for y, f in elements.items()}
    dims = {f.shape for f in mats.values()}
    if len(dims) != 1 or any(len(s) != 2 or s[0] != s[1] for s in dims):
        raise ValueError("POVM elements must be square matrices of equal size")
    d = next(iter(dims))[0]
    total = sum(mats.values())
    if float(np.abs(total - np.eye(d)).max()) > tol.kraus_trace:
        raise IncompletePOVM(
            "POVM elements do not resolve the identity "
            f"(worst deviation {float(np.abs(total - np.eye(d)).max()):.3e})"
        )
    step = {}
    for y, f in mats.items():
        f = (f + f.conj().T) / 2.0
        w, v = np.linalg.eigh(f)
        if w[0] < -tol.psd:
            raise ValueError(f"POVM element {y!r} has eigenvalue {w[0]:.3e}")
        step[y] = [(v * np.sqrt(np.clip(w, 0.0, None))) @ v.conj().T]
    return KrausFamily.repeated(d, step, n_steps, tol=tol)


def pauli_povm() -> dict[str, np.ndarray]:
    """Six-outcome qubit POVM: each Pauli eigenprojector with weight 1/3."""
    out = {}
    for name, s in (("x", SIGMA_X), ("y", SIGMA_Y), ("z", SIGMA_Z)):
        out[f"{name}+"] = (np.eye(2) + s) / 6.0
        out[f"{name}-"] = (np.eye(2) - s) / 6.0
    return out


# ---------------------------------------------------------------------------
# cavity photon counting by dispersive probe atoms
# ---------------------------------------------------------------------------


def number_operator(dim: int) -> np.ndarray:
    return np.diag(np.arange(dim, dtype=float)).astype(complex)


def thermal_state(dim: int, n_bar: float, *, tol: Tolerances = DEFAULT) -> DensityMatrix:
    """Truncated thermal state with untruncated mean occupation n_bar."""
    if n_bar < 0:
        raise ValueError("mean occupation must be nonnegative")
    if n_bar == 0:
        p = np.zeros(dim)
        p[0] = 1.0
    else:
        ratio = n_bar / (1.0 + n_bar)
        p = ratio ** np.arange(dim)
        p /= p.sum()
    return DensityMatrix(np.diag(p), tol=tol)


def mean_photon(rho) -> float:
    mat = np.asarray(getattr(rho, "matrix", rho))
    return float(np.einsum("ii,i->", mat, np.arange(mat.shape[0])).real)


def _lowering(dim: int) -> np.ndarray:
    a = np.zeros((dim, dim), dtype=complex)
    n = np.arange(1, dim)
    a[n - 1, n] = np.sqrt(n)
    return a


def _lindblad_superop(dim: int, ops) -> np.ndarray:
    eye = np.eye(dim)
    s = np.zeros((dim * dim, dim * dim), dtype=complex)
    for l in ops:
        ll = l.conj().T @ l
        s += np.kron(l, l.conj())
        s -= 0.5 * (np.kron(ll, eye) + np.kron(eye, ll.T))
    return s


def kraus_to_superop(ops) -> np.ndarray:
    """Row-major superoperator of rho -> sum_k K rho K^dag."""
    mats = [np.asarray(k, dtype=complex) for k in ops]
    return sum(np.kron(k, k.conj()) for k in mats)


def _superop_to_kraus(sup: np.ndarray, dim: int, *, tol: Tolerances) -> list[np.ndarray]:
    """Kraus decomposition of a completely positive superoperator."""
    choi = sup.reshape(dim, dim, dim, dim).transpose(0, 2, 1, 3).reshape(
        dim * dim, dim * dim
    )
    choi = (choi + choi.conj().T) / 2.0
    w, v = np.linalg.eigh(choi)
    cut = 1e-12 * max(float(w[-1]), 0.0)
    ops = [
        math.sqrt(float(mu)) * v[:, k].reshape(dim, dim)
        for k, mu in enumerate(w)
        if mu > cut
    ]
    total = sum(k.conj().T @ k for k in ops)
    if float(np.abs(total - np.eye(dim)).max()) > tol.kraus_trace:
        raise ValueError("Kraus decomposition failed to preserve the trace")
    return ops


def thermal_relaxation_kraus(
    dim: int,
    duration: float,
    *,
    t_cavity: float,
    n_bath: float,
    tol: Tolerances = DEFAULT,
) -> list[np.ndarray]:
    """Exact Kraus operators of thermal contact for the given duration.

    Photons leak out at rate (1 + n_bath)/t_cavity and in at rate
    n_bath/t_cavity, both truncated at the space dimension.  The channel
    is the exact exponential of this generator, so the decomposition is
    trace preserving to machine precision regardless of duration.
    """
    a = _lowering(dim)
    ops = [
        math.sqrt((1.0 + n_bath) / t_cavity) * a,
        math.sqrt(n_bath / t_cavity) * a.conj().T,
    ]
    sup = expm(_lindblad_superop(dim, ops) * duration)
    return _superop_to_kraus(sup, dim, tol=tol)


def injection_channel(
    dim: int,
    *,
    n_hot: float = 4.0,
    strength: float = 0.3133,
    tol: Tolerances = DEFAULT,
) -> np.ndarray:
    """Superoperator of a short hot-bath pulse that injects photons.

    Contact with a bath of mean occupation n_hot for dimensionless
    duration ``strength`` pulls the mean photon number toward n_hot:
    starting near vacuum the defaults land at about 1.1 photons.  Being a
    fixed completely positive trace-preserving map, it commutes with
    ensemble averaging, so reference curves stay exact.
    """
    a = _lowering(dim)
    ops = [
        math.sqrt(1.0 + n_hot) * a,
        math.sqrt(n_hot) * a.conj().T,
    ]
    sup = expm(_lindblad_superop(dim, ops) * strength)
    _superop_to_kraus(sup, dim, tol=tol)  # validates complete positivity + trace
    return sup


def thermal_decay_curve(
    n_start: float, times, *, t_cavity: float, n_bath: float
) -> np.ndarray:
    """Mean photon number n_bath + (n_start - n_bath) exp(-t / t_cavity)."""
    t = np.asarray(times, dtype=float)
    return n_bath + (n_start - n_bath) * np.exp(-t / t_cavity)


def build_qnd_family(
    n_steps: int,
    *,
    n_max: int = 7,
    t_cavity: float = 65e-3,
    n_bath: float = 0.06,
    step_time: float = 86e-6,
    phase_per_photon: float = math.pi / 4,
    phase_offsets: tuple[float, ...] = (
        0.0,
        math.pi / 4,
        math.pi / 2,
        3 * math.pi / 4,
    ),
    readout_error: float = 0.05,
    detection_efficiency: float = 0.4,
    tol: Tolerances = DEFAULT,
) -> KrausFamily:
    """Photon-number readout by a stream of dispersive probe atoms.

    Each step first lets the cavity relax thermally for step_time, then
    sends one probe atom.  With probability detection_efficiency the atom
    is detected in 'g' or 'e'; the ground probability given n photons is

        P_g(n) = (1 - readout_error) * c + readout_error * (1 - c),
        c = (1 + cos(offset + n * phase_per_photon)) / 2,

    with the interferometer offset cycling through phase_offsets so that
    all photon numbers up to n_max become distinguishable.  Undetected
    atoms produce the outcome 'no' and leave the cavity untouched beyond
    the thermal relaxation.
    """
    if n_steps < 1:
        raise ValueError("need at least one step")
    if not 0.0 < detection_efficiency <= 1.0:
        raise ValueError("detection_efficiency must lie in (0, 1]")
    if not 0.0 <= readout_error <= 0.5:
        raise ValueError("readout_error must lie in [0, 0.5]")
    dim = n_max + 1
    relax = thermal_relaxation_kraus(
        dim, step_time, t_cavity=t_cavity, n_bath=n_bath, tol=tol
    )
    n = np.arange(dim)
    steps = []
    for offset in phase_offsets:
        c = 0.5 * (1.0 + np.cos(offset + n * phase_per_photon))
        p_g = (1.0 - readout_error) * c + readout_error * (1.0 - c)
        m_g = np.diag(np.sqrt(detection_efficiency * p_g)).astype(complex)
        m_e = np.diag(np.sqrt(detection_efficiency * (1.0 - p_g))).astype(complex)
        m_no = math.sqrt(1.0 - detection_efficiency) * np.eye(dim, dtype=complex)
        steps.append(
            {
                "g": [m_g @ k for k in relax],
                "e": [m_e @ k for k in relax],
                "no": [m_no @ k for k in relax],
            }
        )
    sequence = [steps[t % len(steps)] for t in range(n_steps)]
    return KrausFamily(dim, sequence, tol=tol)
