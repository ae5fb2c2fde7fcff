"""
Per-sample Newton solves restricted to the span of the spatial modes.

Once the spatial modes D are frozen, each new sample costs k x k linear
solves only: the reduced tangent D^T K_T D and residual D^T (F - f_int) are
formed by projecting element quantities on D.
"""
from __future__ import annotations

import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import constitutive as cm
from .errors import ConvergenceError
from .problem import BasisKinematics, Problem
from .randfield import SampleSet

CHUNK = 16
RIDGE = 1e-12


@dataclass
class ReducedSolution:
    coeffs: np.ndarray  # (n_s, n_t, k)
    D: np.ndarray  # (k, n_dofs)
    converged: np.ndarray  # (n_s,)
    iterations: np.ndarray  # (n_s, n_t)

    def displacement(self, dofs=None):
        D = self.D if dofs is None else self.D[:, dofs]
        return self.coeffs @ D


def reduced_newton_step(kin: BasisKinematics, mp, coeffs, load, fD, state):
    """One Newton correction for coefficient vectors (n_s, k).

    Returns (delta, k_T, f_T). A singular reduced tangent gets a relative
    ridge of 1e-12 added with a warning.
    """
    sig, factors, _ = cm.evaluate(mp, kin.strains(coeffs), state)
    kT = kin.tangent(factors, mp.mu)
    fT = load * fD - kin.internal(sig)
    try:
        delta = np.linalg.solve(kT, fT[..., None])[..., 0]
    except np.linalg.LinAlgError:
        warnings.warn("singular reduced tangent; adding ridge", RuntimeWarning)
        scale = np.trace(kT, axis1=-2, axis2=-1)[..., None, None] / kT.shape[-1]
        kr = kT + RIDGE * np.abs(scale) * np.eye(kT.shape[-1])
        delta = np.linalg.solve(kr, fT[..., None])[..., 0]
    return delta, kT, fT


def _march(problem, kin, mp, tol, max_iter):
    ns = mp.kappa.shape[0]
    k = kin.k
    nt = problem.time.n_t
    fD = kin.vectors @ problem.f_ext
    coeffs = np.zeros((ns, nt, k))
    iters = np.zeros((ns, nt), dtype=np.int64)
    ok = np.ones(ns, dtype=bool)
    state = cm.PlasticState.zeros((ns, problem.mesh.n_elements))
    g = np.zeros((ns, k))
    scale = np.zeros(ns)
    for i, load in enumerate(problem.time.multipliers):
        active = ok.copy()
        for _ in range(max_iter):
            delta, _, _ = reduced_newton_step(kin, mp, g, load, fD, state)
            delta[~active] = 0.0
            g = g + delta
            iters[active, i] += 1
            bad = ~np.all(np.isfinite(g), axis=1)
            ok &= ~bad
            g[bad] = 0.0
            done = np.sum(delta**2, axis=1) <= tol * np.maximum(np.sum(g**2, axis=1), scale)
            active &= ~done & ok
            if not active.any():
                break
        else:
            ok &= ~active
        _, _, internals = cm.evaluate(mp, kin.strains(g), state, tangent=False)
        state = cm.commit(mp, internals, state)
        coeffs[:, i] = g
        scale = np.maximum(scale, np.sum(g**2, axis=1))
    return coeffs, ok, iters


def update_stage(problem: Problem, D, samples: SampleSet, tol=1e-10, max_iter=50,
                 threads=1, fail_fraction=0.01) -> ReducedSolution:
    """Reduced incremental Newton for every sample on span(D).

    Samples are split in fixed-size chunks; results are identical whatever
    the thread count. Raises ConvergenceError if more than ``fail_fraction``
    of the samples fail; otherwise failures are flagged in ``converged``.
    """
    D = np.atleast_2d(np.asarray(D, dtype=float))
    kin = problem.basis(D)
    mp = problem.material.realize(samples)
    ns = samples.n
    chunks = [np.arange(s, min(s + CHUNK, ns)) for s in range(0, ns, CHUNK)]

    def work(idx):
        sub = cm.MaterialPoint(mp.kappa[idx], mp.mu[idx], mp.sigma_y[idx], mp.hardening)
        return _march(problem, kin, sub, tol, max_iter)

    if threads > 1:
        with ThreadPoolExecutor(threads) as ex:
            parts = list(ex.map(work, chunks))
    else:
        parts = [work(c) for c in chunks]
    coeffs = np.concatenate([p[0] for p in parts])
    ok = np.concatenate([p[1] for p in parts])
    iters = np.concatenate([p[2] for p in parts])
    n_bad = int((~ok).sum())
    if n_bad > fail_fraction * ns:
        raise ConvergenceError(f"update stage failed for {n_bad} of {ns} samples")
    if n_bad:
        warnings.warn(f"update stage did not converge for {n_bad} samples", RuntimeWarning)
    return ReducedSolution(coeffs, D, ok, iters)
