"""Likelihood maximization: gradients, optima, certificates, oracles."""
import math

import numpy as np
import pytest

from conftest import random_density, random_traceless
from trajtomo import (
    DegenerateLikelihood,
    DegenerateTrace,
    SolveOptions,
    gradient,
    kkt_certificate,
    solve_maxlike,
)

GROUND = np.diag([1.0, 0.0]).astype(complex)
EXCITED = np.diag([0.0, 1.0]).astype(complex)
SX = np.array([[0, 1], [1, 0]], dtype=complex)
SY = np.array([[0, -1j], [1j, 0]], dtype=complex)
SZ = np.array([[1, 0], [0, -1]], dtype=complex)
PAULI_POVM = [(np.eye(2) + s * sign) / 6.0 for s in (SX, SY, SZ) for sign in (1, -1)]


def log_likelihood_at(mat, effects):
    traces = np.einsum("nij,ji->n", effects, mat).real
    return float(np.log(traces).sum())


def rrr_fixed_point(effects, dim, iters=20000, tol=1e-13):
    """Classical iterative solver: rho <- R rho R / tr, R = sum E / tr(rho E)."""
    rho = np.eye(dim, dtype=complex) / dim
    for _ in range(iters):
        traces = np.einsum("nij,ji->n", effects, rho).real
        r = np.einsum("n,nij->ij", 1.0 / traces, effects)
        new = r @ rho @ r
        new /= np.trace(new).real
        if np.abs(new - rho).max() < tol:
            return new
        rho = new
    return rho


def bloch_grid_argmax(bloch_effects, levels=4, pts=21):
    """Exhaustive likelihood search over the qubit state set, refined in stages."""
    e = np.asarray(bloch_effects, dtype=float)
    center = np.zeros(3)
    span = 1.0
    for _ in range(levels):
        axes = [np.linspace(center[k] - span, center[k] + span, pts) for k in range(3)]
        grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)
        grid = grid[np.linalg.norm(grid, axis=1) <= 1.0]
        denom = 1.0 + grid @ e.T
        vals = np.where(
            denom.min(axis=1) > 0.0,
            np.log(np.maximum(denom, 1e-300)).sum(axis=1),
            -np.inf,
        )
        center = grid[int(np.argmax(vals))]
        span = 2.0 * span / (pts - 1)
    return center


def counts_to_effects(povm, counts):
    out = []
    for element, n in zip(povm, counts):
        e = element / np.trace(element).real
        out.extend([e] * int(n))
    return np.stack(out)


def test_gradient_matches_finite_differences():
    rng = np.random.default_rng(201)
    h = 1e-5
    for dim in (2, 3):
        effects = np.stack([random_density(rng, dim) for _ in range(40)])
        rho = random_density(rng, dim)
        g = gradient(rho, effects).matrix
        for _ in range(8):
            b = random_traceless(rng, dim)
            b /= np.linalg.norm(b)
            fd = (
                log_likelihood_at(rho + h * b, effects)
                - log_likelihood_at(rho - h * b, effects)
            ) / (2.0 * h)
            directional = np.trace(g @ b).real
            assert fd == pytest.approx(directional, rel=1e-6, abs=1e-8)


def test_gradient_degenerate_trace():
    with pytest.raises(DegenerateTrace):
        gradient(EXCITED, [GROUND])


def test_binomial_instance_reaches_closed_form():
    effects = [GROUND] * 30 + [EXCITED] * 70
    result = solve_maxlike(effects)
    assert np.abs(result.rho.matrix - np.diag([0.3, 0.7])).max() < 1e-6
    assert result.certified
    assert result.lagrange_multiplier == pytest.approx(100.0, abs=1e-4)
    assert result.kkt.residual <= 1e-7 * 100.0
    assert result.rank == 2


def test_pure_instance_reaches_boundary():
    n = 50
    result = solve_maxlike([GROUND] * n)
    assert np.abs(result.rho.matrix - GROUND).max() < 1e-7
    assert result.rank == 1
    assert result.lagrange_multiplier == pytest.approx(n, abs=1e-6 * n)
    g = gradient(result.rho, [GROUND] * n).matrix
    assert np.abs(g - n * GROUND).max() < 1e-5


def test_solver_matches_grid_search():
    rng = np.random.default_rng(202)
    true_v = np.array([0.6, 0.0, 0.3])
    rho_true = (np.eye(2) + true_v[0] * SX + true_v[1] * SY + true_v[2] * SZ) / 2.0
    probs = np.array([np.trace(rho_true @ e).real for e in PAULI_POVM])
    counts = rng.multinomial(400, probs)
    effects = counts_to_effects(PAULI_POVM, counts)
    result = solve_maxlike(effects)
    got_v = np.array([np.trace(result.rho.matrix @ s).real for s in (SX, SY, SZ)])
    want_v = bloch_grid_argmax(
        np.stack([[np.trace(e / np.trace(e).real @ s).real for s in (SX, SY, SZ)]
                  for e in effects])
    )
    assert np.abs(got_v - want_v).max() < 2e-3


def test_solver_matches_rrr_oracle_on_povm_counts():
    rng = np.random.default_rng(203)
    for trial in range(5):
        counts = rng.multinomial(300, np.full(6, 1 / 6)) + 1
        effects = counts_to_effects(PAULI_POVM, counts)
        result = solve_maxlike(effects)
        want = rrr_fixed_point(effects, 2)
        assert np.linalg.norm(result.rho.matrix - want) < 1e-6


def test_ascent_is_monotone():
    rng = np.random.default_rng(204)
    effects = np.stack([random_density(rng, 3) for _ in range(60)])
    result = solve_maxlike(effects)
    hist = np.asarray(result.f_history)
    assert hist.size >= 1
    assert np.all(np.diff(hist) >= -1e-9 * np.abs(hist[:-1]))
    assert result.log_likelihood == pytest.approx(hist[-1])


def test_effect_scaling_leaves_optimum_unchanged():
    rng = np.random.default_rng(205)
    effects = np.stack([random_density(rng, 2) for _ in range(50)])
    base = solve_maxlike(effects)
    scaled = solve_maxlike(3.7 * effects)
    assert np.abs(base.rho.matrix - scaled.rho.matrix).max() < 1e-8
    assert scaled.lagrange_multiplier == pytest.approx(50.0, abs=1e-4)


def test_certificate_rejects_perturbed_optimum():
    n = 80
    effects = [GROUND] * n
    result = solve_maxlike(effects)
    nudged = 0.99 * result.rho.matrix + 0.01 * np.eye(2) / 2.0
    report = kkt_certificate(nudged, effects)
    assert not report.satisfied
    assert report.residual > 1e-3 * n


def test_certificate_fields_at_interior_optimum():
    effects = [GROUND] * 40 + [EXCITED] * 60
    result = solve_maxlike(effects)
    report = kkt_certificate(result.rho, effects)
    assert report.satisfied
    assert report.rank == 2
    assert report.commutator_norm < 1e-7 * 100
    assert report.ascent_excess < 1e-7 * 100
    assert report.support_deficit < 1e-7 * 100
    assert report.lagrange_multiplier == pytest.approx(100.0, abs=1e-5)


def test_degenerate_likelihood_raises():
    with pytest.raises(DegenerateLikelihood):
        solve_maxlike([np.eye(2) / 2.0] * 10)


def test_iteration_cap_returns_uncertified():
    rng = np.random.default_rng(206)
    effects = np.stack([random_density(rng, 3) for _ in range(50)])
    result = solve_maxlike(effects, options=SolveOptions(max_iterations=1))
    assert not result.certified
    assert result.n_iterations == 1
    assert result.kkt.residual > 0.0


def test_bad_start_state_recovers():
    # a start assigning zero likelihood must not wedge the solver
    result = solve_maxlike([GROUND] * 30, rho0=EXCITED)
    assert np.abs(result.rho.matrix - GROUND).max() < 1e-7
    assert result.certified


def test_solutions_cover_both_ranks():
    rng = np.random.default_rng(207)
    mixed = np.stack([random_density(rng, 2) for _ in range(60)])
    interior = solve_maxlike(mixed)
    boundary = solve_maxlike([GROUND] * 25)
    assert interior.rank == 2
    assert boundary.rank == 1
    for res, n in ((interior, 60), (boundary, 25)):
        assert res.n_records == n
        assert res.kkt.residual <= 1e-7 * n
        assert abs(res.lagrange_multiplier - n) <= 1e-6 * n
