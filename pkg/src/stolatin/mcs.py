"""
Full-order incremental Newton solver, run sample by sample (Monte Carlo).

This is the reference every reduced result is checked against: each sample
marches through the time grid with a full Newton loop on the free dofs, using
the consistent tangent of the constitutive module.
"""
from __future__ import annotations

import time as _time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import constitutive as cm
from .errors import ConvergenceError
from .meshfe import DEV_PROJECTOR, VOIGT_IDENTITY, assemble_internal_force, strain_from_displacement
from .randfield import SampleSet

CHUNK = 25
DENSE_LIMIT = 2500


@dataclass
class EnsembleResult:
    watch: np.ndarray  # (n_s, n_t, n_watch)
    final: np.ndarray  # (n_s, n_dofs)
    converged: np.ndarray
    iterations: np.ndarray  # (n_s, n_t)
    wall_time: np.ndarray
    watch_dofs: np.ndarray
    full: np.ndarray | None = None  # (n_s, n_t, n_dofs) when requested
    residuals: list = field(default_factory=list)


class _Assembler:
    """Batched tangent assembly restricted to the free dofs."""

    def __init__(self, mesh):
        self.mesh = mesh
        free = mesh.free_dofs
        self.nf = len(free)
        local = -np.ones(mesh.n_dofs, dtype=np.int64)
        local[free] = np.arange(self.nf)
        ld = local[mesh.element_dofs]  # (ne, 12)
        r = np.repeat(ld, 12, axis=1).ravel()
        c = np.tile(ld, (1, 12)).ravel()
        keep = (r >= 0) & (c >= 0)
        self.rows, self.cols, self.keep = r[keep], c[keep], keep
        B = mesh.B
        self.Bm = np.einsum("epi,p->ei", B, VOIGT_IDENTITY)
        self.BPB = np.einsum("epi,pq,eqj->eij", B, DEV_PROJECTOR, B)
        self.vol = mesh.volumes

    @cached_property
    def scatter(self):
        n_local = self.mesh.n_elements * 144
        src = np.flatnonzero(self.keep)
        return sp.csr_matrix(
            (np.ones(len(src)), (self.rows * self.nf + self.cols, src)),
            shape=(self.nf * self.nf, n_local),
        )

    def element_matrices(self, factors, mu):
        kappa, a, b, n = factors
        v = self.vol
        mm = self.Bm[:, :, None] * self.Bm[:, None, :]
        Ke = (kappa * v)[..., None, None] * mm + ((2 * np.asarray(mu) - a) * v)[..., None, None] * self.BPB
        if np.any(b):
            w = np.einsum("epi,...ep->...ei", self.mesh.B, n)
            Ke = Ke - (b * v)[..., None, None] * w[..., :, None] * w[..., None, :]
        return Ke

    def dense(self, factors, mu):
        Ke = self.element_matrices(factors, mu)
        flat = Ke.reshape(Ke.shape[0], -1)
        return (self.scatter @ flat.T).T.reshape(-1, self.nf, self.nf)

    def sparse(self, factors, mu):
        Ke = self.element_matrices(factors, mu)
        out = []
        for s in range(Ke.shape[0]):
            vals = Ke[s].ravel()[self.keep]
            out.append(sp.csc_matrix((vals, (self.rows, self.cols)), shape=(self.nf, self.nf)))
        return out


def _slice_mp(mp, idx):
    return cm.MaterialPoint(mp.kappa[idx], mp.mu[idx], mp.sigma_y[idx], mp.hardening)


def _newton_batch(problem, mp, tol=1e-10, max_iter=50, keep_full=False, record=False):
    mesh = problem.mesh
    asm = _Assembler(mesh)
    free = mesh.free_dofs
    ns = mp.kappa.shape[0]
    nt = problem.time.n_t
    f_ext = problem.f_ext[free]
    u = np.zeros((ns, mesh.n_dofs))
    state = cm.PlasticState.zeros((ns, mesh.n_elements))
    ok = np.ones(ns, dtype=bool)
    iters = np.zeros((ns, nt), dtype=np.int64)
    watch = np.zeros((ns, nt, len(problem.watch_dofs)))
    full = np.zeros((ns, nt, mesh.n_dofs)) if keep_full else None
    residuals = [[] for _ in range(ns)] if record else []
    scale = np.zeros(ns)
    for i, lam in enumerate(problem.time.multipliers):
        active = np.flatnonzero(ok)
        for it in range(max_iter + 1):
            if active.size == 0:
                break
            sub = _slice_mp(mp, active)
            st = cm.PlasticState(state.eps_p[active], state.beta[active])
            eps = strain_from_displacement(mesh, u[active])
            sig, factors, _ = cm.evaluate(sub, eps, st)
            r = lam * f_ext - assemble_internal_force(mesh, sig)[:, free]
            if record:
                for j, s in enumerate(active):
                    residuals[s].append((i, it, float(np.linalg.norm(r[j]))))
            if it == max_iter:
                ok[active] = False
                break
            if asm.nf <= DENSE_LIMIT:
                du = np.linalg.solve(asm.dense(factors, sub.mu), r[..., None])[..., 0]
            else:
                du = np.stack([spla.spsolve(K, rj) for K, rj in zip(asm.sparse(factors, sub.mu), r)])
            u[active[:, None], free] += du
            iters[active, i] += 1
            dn = np.linalg.norm(du, axis=1)
            un = np.maximum(np.linalg.norm(u[active][:, free], axis=1), scale[active])
            done = dn <= tol * un
            bad = ~np.isfinite(dn)
            ok[active[bad]] = False
            active = active[~done & ~bad]
        # commit internal variables at the converged displacements
        idx = np.flatnonzero(ok)
        if idx.size:
            sub = _slice_mp(mp, idx)
            st = cm.PlasticState(state.eps_p[idx], state.beta[idx])
            _, _, internals = cm.evaluate(sub, strain_from_displacement(mesh, u[idx]), st, tangent=False)
            new = cm.commit(sub, internals, st)
            state.eps_p[idx] = new.eps_p
            state.beta[idx] = new.beta
        scale = np.maximum(scale, np.linalg.norm(u[:, free], axis=1))
        watch[:, i] = u[:, problem.watch_dofs]
        if keep_full:
            full[:, i] = u
    return u, watch, full, ok, iters, residuals, state


def newton_solve_sample(problem, mp, tol=1e-10, max_iter=50, record=False):
    """Displacement history (n_t, n_dofs) for one material realization.

    ``mp`` holds per-element arrays of shape (n_elements,). Returns the history
    and a dict with convergence flag, iteration counts, the final plastic
    state and (if ``record``) residual norms per Newton iteration.
    """
    batch = cm.MaterialPoint(
        np.atleast_2d(mp.kappa), np.atleast_2d(mp.mu), np.atleast_2d(mp.sigma_y), mp.hardening
    )
    u, watch, full, ok, iters, res, state = _newton_batch(
        problem, batch, tol, max_iter, keep_full=True, record=record
    )
    info = {
        "converged": bool(ok[0]),
        "iterations": iters[0],
        "residuals": res[0] if record else [],
        "state": cm.PlasticState(state.eps_p[0], state.beta[0]),
    }
    return full[0], info


def run_mcs(problem, samples: SampleSet, tol=1e-10, max_iter=50, keep_full=False,
            threads=1, fail_fraction=0.01):
    """Independent Newton solves for every sample row.

    Samples are processed in fixed-size chunks so results do not depend on
    the thread count.
    """
    mp = problem.material.realize(samples)
    ns = samples.n
    chunks = [np.arange(s, min(s + CHUNK, ns)) for s in range(0, ns, CHUNK)]

    def work(idx):
        t0 = _time.perf_counter()
        out = _newton_batch(problem, _slice_mp(mp, idx), tol, max_iter, keep_full)
        return out, (_time.perf_counter() - t0) / len(idx)

    if threads > 1:
        with ThreadPoolExecutor(threads) as ex:
            results = list(ex.map(work, chunks))
    else:
        results = [work(c) for c in chunks]

    final = np.concatenate([r[0][0] for r in results])
    watch = np.concatenate([r[0][1] for r in results])
    full = np.concatenate([r[0][2] for r in results]) if keep_full else None
    ok = np.concatenate([r[0][3] for r in results])
    iters = np.concatenate([r[0][4] for r in results])
    wall = np.concatenate([np.full(len(c), r[1]) for c, r in zip(chunks, results)])
    n_bad = int((~ok).sum())
    if n_bad > fail_fraction * ns:
        raise ConvergenceError(f"{n_bad} of {ns} Monte Carlo samples failed to converge")
    return EnsembleResult(watch, final, ok, iters, wall, problem.watch_dofs.copy(), full)


def external_work(f_ext, multipliers, u_hist):
    """Trapezoidal external work along a displacement history (n_t, n_dofs)."""
    F = multipliers[:, None] * f_ext
    du = np.diff(u_hist, axis=0)
    return np.concatenate([[0.0], np.cumsum(0.5 * np.sum((F[1:] + F[:-1]) * du, axis=1))])


def stored_energy(mesh, mp, stress, beta):
    """Elastic plus hardening energy, per element stress (ne, 6) and back stress."""
    from .meshfe import deviator, tensor_norm

    p = stress[..., :3].sum(axis=-1) / 3.0
    s = tensor_norm(deviator(stress))
    e_el = p**2 / (2 * np.asarray(mp.kappa)) + s**2 / (4 * np.asarray(mp.mu))
    w = np.asarray(mp.hardening)
    e_h = np.where(w > 0, tensor_norm(beta) ** 2 / (2 * np.where(w > 0, w, 1.0)), 0.0)
    return np.sum(mesh.volumes * (e_el + e_h), axis=-1)
