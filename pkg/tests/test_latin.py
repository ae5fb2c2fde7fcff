import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.linalg import subspace_angles

from stolatin.errors import DegenerateTripletError, IllPosedInputError, LinearlyDependentDirectionError
from stolatin.latin import (
    LatinConfig,
    _Context,
    expectation,
    global_stage,
    local_stage,
    orthonormalize,
    solution_error,
    solve,
    split_rank1,
    triplet_error,
)
from stolatin.meshfe import ElasticTensor, apply_dirichlet, assemble_component_stiffness, strain_from_displacement
from stolatin.problem import TimeGrid
from stolatin.randfield import SampleSet

from problems import M_E, NU, box_problem, samples_for

TIME = TimeGrid.from_profile([[0, 0], [0.5, 1], [1, 0]], 11)
RNG = np.random.default_rng(3)


def deterministic(n_s=1, **kw):
    p = box_problem(e_std=0.0, sy_std=0.0, **kw)
    return p, SampleSet(np.zeros((n_s, 0)), None, ())


def elastic_reference(problem):
    """u(t) = m(t) K^-1 f for a homogeneous deterministic material."""
    K = assemble_component_stiffness(problem.mesh, ElasticTensor.from_young(M_E, NU))
    u1 = apply_dirichlet(K, problem.f_ext, problem.mesh.dirichlet_dofs).solve()
    return u1, K


def free_direction(p):
    d = np.zeros(p.mesh.n_dofs)
    d[p.mesh.free_dofs] = RNG.normal(size=len(p.mesh.free_dofs))
    return orthonormalize(d)


# -- small algebra ---------------------------------------------------------

def test_expectation_examples():
    assert np.all(expectation(np.full(4, 2.5)) == 2.5)
    assert expectation(np.array([1.0, 2, 3])) == 2.0
    lam, xi = np.array([1.0, 1.0]), np.array([2.0, 4.0])
    assert expectation(lam**2 * xi) == 3.0


def test_solution_error_examples():
    assert solution_error(RNG.normal(size=(1, 7))) == 1.0
    lam = np.array([[3.0, 3, -3, -3], [1.0, -1, 1, -1]])
    assert np.isclose(solution_error(lam), 0.1, rtol=1e-14)
    row = RNG.normal(size=9)
    assert solution_error(np.vstack([row, row])) == 0.0
    # one sample: the covariance has rank one for every k
    one = np.array([[0.7], [-1e-3], [2e-6]])
    assert [solution_error(one[:j]) for j in (1, 2, 3)] == [1.0, 0.0, 0.0]


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.integers(2, 6))
def test_solution_error_non_increasing(seed, k):
    lam = np.random.default_rng(seed).normal(size=(k, 12))
    vals = [solution_error(lam[:j]) for j in range(1, k + 1)]
    assert np.all(np.diff(vals) <= 1e-14)


def test_triplet_error_examples():
    d = np.array([0.6, 0.8, 0.0])
    assert triplet_error(d, d) == pytest.approx(0.0, abs=1e-15)
    assert triplet_error(np.array([0, 0, 1.0]), d) == 2.0
    assert triplet_error(-d, d) == pytest.approx(4.0)


def test_orthonormalize_examples():
    d = np.array([3.0, 4.0])
    assert np.allclose(orthonormalize(d), [0.6, 0.8])
    D = np.linalg.qr(RNG.normal(size=(100, 10)))[0].T
    with pytest.raises(LinearlyDependentDirectionError):
        orthonormalize(D.T @ RNG.normal(size=10), D)


def test_orthonormalize_against_qr():
    A = RNG.normal(size=(100, 11))
    Q = np.linalg.qr(A)[0]
    D = Q[:, :10].T
    e = orthonormalize(A[:, 10], D)
    assert np.abs(D @ D.T - np.eye(10)).max() <= 1e-12
    assert np.abs(D @ e).max() <= 1e-12
    assert np.isclose(np.linalg.norm(e), 1.0, rtol=1e-14)
    assert np.isclose(abs(e @ Q[:, 10]), 1.0, rtol=1e-12)


def test_split_rank1_planted():
    lam0 = RNG.normal(size=15)
    g0 = TIME.multipliers / TIME.norm(TIME.multipliers)
    lam, g = split_rank1(np.outer(lam0, g0), TIME)
    assert np.abs(g - g0).max() <= 1e-12
    assert np.abs(lam - lam0).max() <= 1e-12 * np.abs(lam0).max()
    assert np.isclose(TIME.norm(g), 1.0, rtol=1e-14)


def test_split_rank1_rank2_residual():
    U = np.linalg.qr(RNG.normal(size=(8, 2)))[0]
    V = np.linalg.qr(RNG.normal(size=(TIME.n_t, 2)))[0]
    H = U @ np.diag([1.0, 0.1]) @ V.T
    lam, g = split_rank1(H, TIME)
    r = H - np.outer(lam, g)
    assert np.isclose(np.sum(r**2) / np.sum(H**2), 0.01 / 1.01, rtol=1e-12)


def test_split_rank1_zero():
    with pytest.raises(DegenerateTripletError):
        split_rank1(np.zeros((4, TIME.n_t)), TIME)


# -- stages ----------------------------------------------------------------

def test_global_stage_elastic_direct_solve():
    p, s = deterministic()
    u1, _ = elastic_reference(p)
    ctx = _Context(p, s)
    g = p.time.multipliers / p.time.norm(p.time.multipliers)
    d = global_stage(ctx, np.ones(1), g, None)
    expect = np.dot(p.time.nodal_weights(g), p.time.multipliers) * u1
    assert np.linalg.norm(d - expect) <= 1e-10 * np.linalg.norm(expect)


def test_global_stage_vanishes_at_exact_solution():
    p, s = deterministic(quantile=1e-6)  # far below yield
    u1, _ = elastic_reference(p)
    ctx = _Context(p, s)
    g = p.time.multipliers / p.time.norm(p.time.multipliers)
    d1 = global_stage(ctx, np.ones(1), g, None)
    # exact u(t) = m(t) u1 = lam g d with lam = |m|, d = u1
    u_hist = np.outer(p.time.multipliers, u1)
    stress = (strain_from_displacement(p.mesh, u_hist) @ ElasticTensor.from_young(M_E, NU).matrix.T)[None]
    d = global_stage(ctx, np.ones(1), g, stress)
    assert np.linalg.norm(d) <= 1e-8 * np.linalg.norm(d1)


def test_global_stage_zero_lambda():
    p, s = deterministic()
    with pytest.raises(IllPosedInputError):
        global_stage(_Context(p, s), np.zeros(1), p.time.multipliers, None)


def test_local_stage_scalar_oracle():
    p = box_problem(quantile=1e-6)
    s = samples_for(p, 3, 1)
    ctx = _Context(p, s)
    d = free_direction(p)
    empty = (np.zeros((0, 3)), np.zeros((0, p.time.n_t)), np.zeros((0, p.mesh.n_dofs)))
    H, iters = local_stage(ctx, empty, d, LatinConfig())
    E = p.material.realize(s).kappa[:, 0] * 3 * (1 - 2 * NU)
    for j in range(3):
        K = assemble_component_stiffness(p.mesh, ElasticTensor.from_young(E[j], NU))
        a, b = d @ (K @ d), d @ p.f_ext
        assert np.allclose(H[j], p.time.multipliers * b / a, rtol=1e-10, atol=1e-14 * abs(b / a))


def test_local_stage_zero_load():
    p = box_problem(traction=(0, 0, 0))
    s = samples_for(p, 2, 0)
    d = free_direction(p)
    empty = (np.zeros((0, 2)), np.zeros((0, p.time.n_t)), np.zeros((0, p.mesh.n_dofs)))
    H, iters = local_stage(_Context(p, s), empty, d, LatinConfig())
    assert np.all(H == 0) and np.all(iters == 1)


# -- full solves -----------------------------------------------------------

@pytest.fixture(scope="module")
def plastic_run():
    p = box_problem()
    s = samples_for(p, 20, 0)
    return p, s, solve(p, s, LatinConfig(eps_u=1e-8))


def test_solve_converges(plastic_run):
    p, s, state = plastic_run
    assert state.status == "converged"
    assert 1 <= state.k <= 30
    assert state.log[-1]["indicator"] <= 1e-8
    eps_u = [r["eps_u"] for r in state.log]
    assert np.all(np.diff(eps_u) <= 0)
    assert np.abs(state.d @ state.d.T - np.eye(state.k)).max() <= 1e-10
    assert np.any(state.eps_p != 0)


def test_solve_zero_variance_is_deterministic():
    p, _ = deterministic()
    s = SampleSet(np.zeros((5, 0)), None, ())
    state = solve(p, s)
    cov = state.lam.std(axis=1) / np.abs(state.lam.mean(axis=1))
    assert np.all(cov <= 1e-10)


def test_zero_load_status():
    p = box_problem(traction=(0, 0, 0))
    state = solve(p, samples_for(p, 4, 0))
    assert state.status == "zero-load" and state.k == 0


def test_restart_appends(plastic_run):
    p, s, _ = plastic_run
    first = solve(p, s, LatinConfig(eps_u=1e-3))
    lam, g, d = first.lam.copy(), first.g.copy(), first.d.copy()
    k0 = first.k
    more = solve(p, s, LatinConfig(eps_u=1e-10), state=first)
    assert more.k > k0
    assert np.array_equal(more.lam[:k0], lam)
    assert np.array_equal(more.g[:k0], g)
    assert np.array_equal(more.d[:k0], d)
    assert more.status == "converged"
    assert more.log[-1]["indicator"] <= 1e-10


def test_restart_rejects_other_samples(plastic_run):
    p, s, state = plastic_run
    with pytest.raises(ValueError):
        solve(p, samples_for(p, 20, 99), state=state)


def test_doubling_samples_keeps_subspace(plastic_run):
    p, s, state = plastic_run
    big = solve(p, samples_for(p, 40, 0))
    k = min(state.k, big.k)
    ang = subspace_angles(state.d[:k].T, big.d[:k].T)
    assert ang.max() <= 0.2


def test_config_validation():
    with pytest.raises(ValueError):
        LatinConfig(eps_u=-1.0)
    with pytest.raises(ValueError):
        LatinConfig(max_terms=0)
