import csv

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import norm

from stolatin.latin import solve
from stolatin.meshfe import ElasticTensor, strain_from_displacement
from stolatin.post import (
    l2_error,
    pdf_estimate,
    stress_recovery,
    summarize,
    write_errors_csv,
    write_histories_csv,
    write_pdf_csv,
)

from oracles import radial_return, strain_matrix, stress_vector
from problems import NU, box_problem, samples_for

RNG = np.random.default_rng(17)


def test_l2_examples():
    a = RNG.normal(size=20)
    assert l2_error(a, a) == 0.0
    assert np.isclose(l2_error(a, 2 * a), 1.0)
    assert np.isclose(l2_error([3.0, 4.0], [0.0, 0.0]), 1.0)
    assert np.isclose(l2_error([3.0, 4.0], [3.0, 0.0]), 0.8)


def test_l2_zero_reference_is_nan():
    assert np.isnan(l2_error([0.0, 0.0], [1.0, 0.0]))
    out = l2_error(np.array([[0.0, 0.0], [3.0, 4.0]]), np.zeros((2, 2)))
    assert np.isnan(out[0]) and out[1] == 1.0
    with pytest.raises(ValueError):
        l2_error([1.0, 2.0], [1.0])


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.floats(1e-6, 1e-2))
def test_l2_homogeneous_in_perturbation(seed, t):
    rng = np.random.default_rng(seed)
    a, d = rng.normal(size=15), rng.normal(size=15)
    e1 = l2_error(a, a + t * d)
    e2 = l2_error(a, a - 2 * t * d)
    assert np.isclose(e2, 2 * e1, rtol=1e-9)


def test_pdf_standard_normal():
    x = np.random.default_rng(0).standard_normal(10_000)
    p = pdf_estimate(x, np.linspace(-4, 4, 401))
    assert np.abs(p.density - norm.pdf(p.grid)).max() <= 0.05
    assert p.n == 10_000 and p.bandwidth > 0


def test_pdf_normalized_and_positive():
    p = pdf_estimate(RNG.gamma(2.0, size=500))
    assert np.all(p.density >= 0)
    assert abs(np.trapezoid(p.density, p.grid) - 1.0) <= 1e-3


def test_pdf_half_sample_stability():
    x = np.random.default_rng(4).normal(size=1000)
    grid = np.linspace(-4, 4, 200)
    a = pdf_estimate(x[:500], grid).density
    b = pdf_estimate(x[500:], grid).density
    assert np.abs(a - b).max() <= 0.1


def test_pdf_errors():
    with pytest.raises(ValueError):
        pdf_estimate(np.full(100, 3.0))
    with pytest.raises(ValueError):
        pdf_estimate(np.arange(10.0))


def test_stress_recovery_elastic():
    p = box_problem(quantile=1e-6)
    s = samples_for(p, 2, 0)
    u = RNG.normal(scale=1e-6, size=(2, 3, p.mesh.n_dofs))
    sig = stress_recovery(p, s, u)
    mp = p.material.realize(s)
    for j in range(2):
        C = ElasticTensor(mp.kappa[j], mp.mu[j]).matrix  # (ne, 6, 6)
        eps = strain_from_displacement(p.mesh, u[j])
        assert np.allclose(sig[j], np.einsum("epq,teq->tep", C, eps), rtol=1e-12, atol=1e-12)


def test_stress_recovery_matches_solver_history():
    p = box_problem()
    s = samples_for(p, 20, 0)
    state = solve(p, s)
    sig = stress_recovery(p, s, state.displacement())
    assert np.abs(sig - state.stress).max() <= 1e-10 * np.abs(state.stress).max()


def test_stress_recovery_plastic_ramp():
    from stolatin.meshfe import Mesh
    from stolatin.problem import Problem, StochasticMaterial, TimeGrid
    from stolatin.randfield import AffineField, SampleSet

    nodes = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1.0]])
    mesh = Mesh(nodes, [[0, 1, 2, 3]])
    E, sy, H = 2.11e5, 245.0, 300.0
    p = Problem(mesh, StochasticMaterial(AffineField([E]), AffineField([sy]), NU, H),
                TimeGrid([0.0, 1.0], [0.0, 1.0]), (0, 0, 0))
    # node 1 pulled along x: uniaxial strain ramp eps_xx = u
    steps = np.linspace(0, 4e-3, 25)
    u = np.zeros((1, steps.size, 12))
    u[0, :, 3] = steps
    sig = stress_recovery(p, SampleSet(np.zeros((1, 0)), None, ()), u)[0, :, 0]
    ep, al = np.zeros((3, 3)), np.zeros((3, 3))
    for i, e in enumerate(steps):
        ref, ep, al = radial_return(E, NU, sy, H, strain_matrix([e, 0, 0, 0, 0, 0]), ep, al)
        assert np.abs(sig[i] - stress_vector(ref)).max() <= 1e-10 * max(np.abs(ref).max(), 1.0)
    assert np.any(al != 0)


def test_summarize():
    s = summarize([1.0, 2.0, 9.0])
    assert s == {"median": 2.0, "max": 9.0, "mean": 4.0}


def test_csv_writers(tmp_path):
    write_histories_csv(tmp_path / "h.csv", [0.0, 0.5], np.array([[1.0, 2.0], [3.0, 4.0]]), ["a", "b"])
    rows = list(csv.reader(open(tmp_path / "h.csv")))
    assert rows[0] == ["t", "a", "b"] and [float(v) for v in rows[2]] == [0.5, 2.0, 4.0]
    write_errors_csv(tmp_path / "e.csv", [0.1, 0.2], [0.3, 0.4])
    rows = list(csv.reader(open(tmp_path / "e.csv")))
    assert rows[0] == ["sample", "l2_update", "l2_without_update"] and float(rows[2][2]) == 0.4
    write_pdf_csv(tmp_path / "p.csv", [0.0, 1.0], [np.array([0.5, 0.6])], ["mcs"])
    rows = list(csv.reader(open(tmp_path / "p.csv")))
    assert rows[0] == ["x", "mcs"] and float(rows[1][1]) == 0.5
