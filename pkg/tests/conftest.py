"""Shared random-instance builders for the test suites.

Everything is seeded explicitly at the call site so failures reproduce.
"""
import numpy as np

from trajtomo import KrausFamily


def random_density(rng, dim):
    """Full-rank random state (normalized Wishart draw)."""
    g = rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))
    rho = g @ g.conj().T
    return rho / rho.trace().real


def random_pure(rng, dim):
    psi = rng.standard_normal(dim) + 1j * rng.standard_normal(dim)
    psi /= np.linalg.norm(psi)
    return np.outer(psi, psi.conj())


def random_hermitian(rng, dim):
    a = rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))
    return (a + a.conj().T) / 2.0


def random_traceless(rng, dim):
    h = random_hermitian(rng, dim)
    return h - np.trace(h).real / dim * np.eye(dim)


def random_step(rng, dim, n_outcomes=2, ops_per_outcome=1):
    """A random trace-preserving step.

    Raw Gaussian Kraus pieces are whitened by the inverse square root of
    their completeness sum, which enforces sum M*M = I exactly.
    """
    raw = {
        f"y{k}": [
            rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))
            for _ in range(ops_per_outcome)
        ]
        for k in range(n_outcomes)
    }
    total = sum(m.conj().T @ m for ops in raw.values() for m in ops)
    w, v = np.linalg.eigh(total)
    whiten = (v / np.sqrt(w)) @ v.conj().T
    return {y: [m @ whiten for m in ops] for y, ops in raw.items()}


def random_family(rng, dim, n_steps, n_outcomes=2, ops_per_outcome=1):
    return KrausFamily(
        dim,
        [random_step(rng, dim, n_outcomes, ops_per_outcome) for _ in range(n_steps)],
    )
