"""
Greedy separated-representation solver for the stochastic incremental problem.

The displacement is built one triplet at a time,

    u_k(x, t, theta) = sum_{l<=k} lambda_l(theta) g_l(t) d_l(x),

alternating a global linear stage (one deterministic solve for the spatial
mode, with stiffness and right-hand side averaged over the sample set) and a
local nonlinear stage (a scalar Newton iteration per sample and time node for
the combined time/stochastic function), followed by a rank-1 split.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse.linalg as spla

from . import constitutive as cm
from .errors import (
    ConvergenceError,
    DegenerateTripletError,
    IllPosedInputError,
    LinearlyDependentDirectionError,
)
from .meshfe import assemble_internal_force
from .problem import Problem, constitutive_sweep
from .randfield import SampleSet

log = logging.getLogger(__name__)

# a new combined function this small relative to the current approximation
# is round-off, not a correction
ROUNDOFF = 1e-12


@dataclass
class LatinConfig:
    eps_d: float = 1e-3
    eps_u: float = 1e-8
    eps_g: float = 1e-10
    max_terms: int = 30
    max_inner: int = 20
    max_newton: int = 50
    fail_fraction: float = 0.01

    def __post_init__(self):
        for name in ("eps_d", "eps_u", "eps_g"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v > 0):
                raise ValueError(f"{name} must be a positive finite number")
        if self.max_terms < 1 or self.max_inner < 1 or self.max_newton < 1:
            raise ValueError("iteration caps must be at least 1")


@dataclass
class Triplet:
    lam: np.ndarray  # (n_s,)
    g: np.ndarray  # (n_t,)
    d: np.ndarray  # (n_dofs,)


@dataclass(eq=False)
class LatinState:
    """Reduced solution on the iteration sample set plus bookkeeping."""

    problem: Problem
    samples: SampleSet
    config: LatinConfig
    lam: np.ndarray  # (k, n_s)
    g: np.ndarray  # (k, n_t)
    d: np.ndarray  # (k, n_dofs)
    log: list = field(default_factory=list)
    global_solves: int = 0
    status: str = "running"
    stress: np.ndarray | None = None  # (n_s, n_t, n_e, 6) of the current u_k
    eps_p: np.ndarray | None = None
    beta: np.ndarray | None = None

    @property
    def k(self):
        return self.lam.shape[0]

    @property
    def triplets(self):
        return [Triplet(l, g, d) for l, g, d in zip(self.lam, self.g, self.d)]

    @property
    def indicator(self):
        return self.log[-1]["eps_u"] if self.log else np.inf

    def displacement(self, dofs=None):
        """u(theta_s, t_i) as (n_s, n_t, n_dofs), optionally restricted to dofs."""
        d = self.d if dofs is None else self.d[:, dofs]
        return np.einsum("ks,kt,kn->stn", self.lam, self.g, d)


def expectation(x, axis=0):
    """Sample mean over the iteration set."""
    return np.mean(x, axis=axis)


def solution_error(lam):
    """Smallest-to-total eigenvalue ratio of the empirical covariance of the
    stochastic modes, lam of shape (k, n_s)."""
    lam = np.atleast_2d(lam)
    if lam.shape[0] == 1:
        return 1.0
    cov = lam @ lam.T / lam.shape[1]
    z = np.linalg.eigvalsh(cov)
    # eigenvalues under the solver's accuracy are zero (rank-deficient samples)
    z = np.where(z <= len(z) * np.finfo(float).eps * z[-1], 0.0, z)
    tr = z.sum()
    return float(z[0] / tr) if tr > 0 else 0.0


def contribution_error(lam):
    """E{lam_k^2} relative to sum_l E{lam_l^2}."""
    lam = np.atleast_2d(lam)
    m2 = np.mean(lam**2, axis=1)
    tot = m2.sum()
    return float(m2[-1] / tot) if tot > 0 else 0.0


def triplet_error(d_new, d_old):
    return float(2.0 - 2.0 * np.dot(d_new, d_old))


def orthonormalize(d, D=None, tol=1e-12):
    """Unit vector along d with the components in span(D rows) removed.

    Two classical Gram-Schmidt passes keep the result orthogonal to working
    precision.
    """
    d = np.asarray(d, dtype=float).copy()
    nrm0 = np.linalg.norm(d)
    if not np.isfinite(nrm0):
        raise ValueError("non-finite direction")
    if D is not None and len(D):
        for _ in range(2):
            d -= D.T @ (D @ d)
    nrm = np.linalg.norm(d)
    if nrm0 == 0 or nrm <= tol * nrm0:
        raise LinearlyDependentDirectionError("direction lies in the span of previous modes")
    return d / nrm


def split_rank1(H, time):
    """Best rank-1 approximation lam g^T of H (n_s, n_t).

    g is scaled to unit temporal norm with its largest-magnitude entry
    positive; the magnitude and sign are carried by lam.
    """
    H = np.asarray(H, dtype=float)
    if not np.all(np.isfinite(H)):
        raise ValueError("non-finite samples in the time/stochastic function")
    U, S, Vt = np.linalg.svd(H, full_matrices=False)
    if S.size == 0 or S[0] == 0:
        raise DegenerateTripletError("time/stochastic function vanishes")
    v = Vt[0]
    vn = time.norm(v)
    if vn <= 1e-14 * np.linalg.norm(v):
        raise DegenerateTripletError("temporal mode has zero norm")
    g = v / vn
    lam = S[0] * U[:, 0] * vn
    if g[np.argmax(np.abs(g))] < 0:
        g, lam = -g, -lam
    return lam, g


class _Context:
    """Per-solve caches: realized material, reduced stiffness components."""

    def __init__(self, problem: Problem, samples: SampleSet):
        self.problem = problem
        self.samples = samples
        self.mp = problem.material.realize(samples)
        free = problem.mesh.free_dofs
        self.free = free
        self.components = [
            (col, K[free][:, free].tocsc()) for col, K in problem.stiffness_components
        ]
        mats = np.concatenate([self.mp.mu, self.mp.sigma_y], axis=1)
        self.n_distinct = len(np.unique(mats, axis=0))

    def z_weights(self, lam):
        xi = self.samples.values
        l2 = lam**2
        return [np.mean(l2) if col is None else np.mean(l2 * xi[:, col]) for col, _ in self.components]


def global_stage(ctx: _Context, lam, g, stress):
    """Spatial mode from the sample-averaged linear problem.

    lam (n_s,), g (n_t,): current time/stochastic guess; stress (n_s, n_t, n_e, 6)
    is the stress history of the previous approximation (None for zero).
    """
    p = ctx.problem
    lam = np.asarray(lam, dtype=float)
    if not np.any(lam) or not np.all(np.isfinite(lam)):
        raise IllPosedInputError("stochastic guess is zero or non-finite")
    z = ctx.z_weights(lam)
    K = sum(zi * Ki for zi, (_, Ki) in zip(z, ctx.components))
    w = p.time.nodal_weights(g)
    F = np.dot(w, p.time.multipliers) * expectation(lam) * p.f_ext
    if stress is not None:
        S = np.einsum("s,t,step->ep", lam, w, stress, optimize=True) / len(lam)
        F = F - assemble_internal_force(p.mesh, S)
    d = np.zeros(p.mesh.n_dofs)
    with warnings.catch_warnings():
        warnings.simplefilter("error", spla.MatrixRankWarning)
        try:
            d[ctx.free] = spla.spsolve(K, F[ctx.free])
        except (spla.MatrixRankWarning, RuntimeError) as exc:
            raise IllPosedInputError(f"averaged stiffness is singular: {exc}") from exc
    if not np.all(np.isfinite(d)):
        raise IllPosedInputError("averaged stiffness is singular")
    return d


def local_stage(ctx: _Context, base, d, config: LatinConfig):
    """Per-sample, per-time scalar Newton for the new combined function.

    base: (k, n_s), (k, n_t), (k, n_dofs) arrays of the previous triplets.
    Returns H (n_s, n_t) and the Newton iteration counts.
    """
    p = ctx.problem
    mp = ctx.mp
    ns = ctx.samples.n
    nt = p.time.n_t
    lam_b, g_b, d_b = base
    kin_d = p.basis(d)
    kin_b = p.basis(d_b) if len(d_b) else None
    fd = float(p.f_ext @ d)
    H = np.zeros((ns, nt))
    iters = np.zeros((ns, nt), dtype=np.int64)
    state = cm.PlasticState.zeros((ns, p.mesh.n_elements))
    ok = np.ones(ns, dtype=bool)
    h = np.zeros(ns)
    scale = np.zeros(ns)
    for i, m in enumerate(p.time.multipliers):
        c0 = (lam_b * g_b[:, i, None]).T
        eps0 = kin_b.strains(c0) if kin_b is not None else 0.0
        # the modes are orthonormal, so this is |u_{k-1}(t_i)|^2
        base2 = np.sum(c0**2, axis=1)
        active = ok.copy()
        for it in range(config.max_newton):
            eps = eps0 + h[:, None, None] * kin_d.E[:, 0]
            sig, factors, _ = cm.evaluate(mp, eps, state)
            a = kin_d.tangent(factors, mp.mu)[:, 0, 0]
            r = m * fd - kin_d.internal(sig)[:, 0]
            dh = np.where(active, r / a, 0.0)
            h = h + dh
            iters[active, i] += 1
            # increments are measured against the full displacement magnitude,
            # largest so far, so steps with a vanishing correction terminate
            done = dh**2 <= config.eps_g * np.maximum(h**2 + base2, scale)
            active &= ~done
            if not active.any():
                break
        else:
            ok &= ~active
        _, _, internals = cm.evaluate(mp, eps0 + h[:, None, None] * kin_d.E[:, 0], state, tangent=False)
        state = cm.commit(mp, internals, state)
        H[:, i] = h
        scale = np.maximum(scale, h**2 + base2)
    n_bad = int((~ok).sum())
    if n_bad > config.fail_fraction * ns:
        raise ConvergenceError(f"local Newton failed for {n_bad} of {ns} samples")
    if n_bad:
        warnings.warn(f"local Newton did not converge for {n_bad} samples", RuntimeWarning)
    return H, iters


def _history(ctx, lam, g, d, plastic=False):
    if len(lam) == 0:
        return None
    kin = ctx.problem.basis(d)
    coeffs = np.einsum("ks,kt->stk", lam, g)
    return constitutive_sweep(ctx.mp, kin.strains(coeffs), keep_plastic=plastic)


def _initial_guess(p, ns):
    g = p.time.multipliers.copy()
    n = p.time.norm(g)
    return np.ones(ns), (g / n if n > 0 else np.zeros_like(g))


def solve(problem: Problem, samples: SampleSet, config: LatinConfig | None = None,
          state: LatinState | None = None, keep_plastic=True) -> LatinState:
    """Run (or continue, when ``state`` is given) the greedy enrichment.

    Continuing keeps existing triplets untouched and appends new ones until
    the indicator drops below ``config.eps_u`` or ``config.max_terms`` is hit.

    Final status: "converged" (indicator reached), "exact" (the next
    correction is round-off), "stagnated" (new direction already spanned),
    "max-terms" or "zero-load".
    """
    config = config or LatinConfig()
    ctx = _Context(problem, samples)
    ns, nt, n = samples.n, problem.time.n_t, problem.mesh.n_dofs
    if state is None:
        state = LatinState(problem, samples, config, np.zeros((0, ns)), np.zeros((0, nt)), np.zeros((0, n)))
    else:
        if state.samples.n != ns or not np.array_equal(state.samples.values, samples.values):
            raise ValueError("restart needs the original iteration samples")
        state.config = config
        if state.status == "exact":
            return state
        state.status = "running"
    if np.linalg.norm(problem.f_ext) == 0 or not np.any(problem.time.multipliers):
        state.status = "zero-load"
        return state

    while state.k < config.max_terms:
        stress = _history(ctx, state.lam, state.g, state.d)
        lam_p, g_p = _initial_guess(problem, ns)
        d_prev = None
        record = {"k": state.k + 1, "eps_d": [], "newton": 0}
        try:
            for j in range(config.max_inner):
                d = orthonormalize(global_stage(ctx, lam_p, g_p, stress), state.d)
                state.global_solves += 1
                H, iters = local_stage(ctx, (state.lam, state.g, state.d), d, config)
                record["newton"] += int(iters.sum())
                # modes are orthonormal: |u_k|^2 = sum_l |lam_l|^2 |g_l|^2
                u2 = np.sum(np.sum(state.lam**2, axis=1) * np.sum(state.g**2, axis=1))
                if state.k and np.sum(H**2) <= ROUNDOFF**2 * u2:
                    raise DegenerateTripletError("correction at round-off level")
                lam_p, g_p = split_rank1(H, problem.time)
                if d_prev is not None:
                    e = triplet_error(d, d_prev)
                    record["eps_d"].append(e)
                    if e <= config.eps_d:
                        break
                d_prev = d
            else:
                warnings.warn(f"triplet {state.k + 1} accepted without meeting eps_d", RuntimeWarning)
        except DegenerateTripletError as exc:
            # nothing left to represent: the current approximation is exact
            log.info("enrichment stopped: %s", exc)
            state.status = "exact"
            break
        except LinearlyDependentDirectionError as exc:
            log.info("enrichment stopped: %s", exc)
            state.status = "stagnated"
            break
        state.lam = np.vstack([state.lam, lam_p])
        state.g = np.vstack([state.g, g_p])
        state.d = np.vstack([state.d, d])
        record["eps_u"] = solution_error(state.lam)
        record["contribution"] = contribution_error(state.lam)
        record["inner"] = j + 1
        # the covariance ratio loses meaning once k exceeds the number of
        # distinct realizations; fall back to the energy ratio there
        record["indicator"] = record["eps_u"] if state.k <= ctx.n_distinct else record["contribution"]
        state.log.append(record)
        log.info("triplet %d: eps_u=%.3e contribution=%.3e inner=%d",
                 state.k, record["eps_u"], record["contribution"], j + 1)
        if record["indicator"] <= config.eps_u:
            state.status = "converged"
            break
    else:
        state.status = "max-terms"

    hist = _history(ctx, state.lam, state.g, state.d, plastic=keep_plastic)
    if hist is not None:
        if keep_plastic:
            state.stress, state.eps_p, state.beta = hist
        else:
            state.stress = hist
    return state


def replay_coefficients(problem: Problem, state: LatinState, samples: SampleSet, config=None):
    """Stochastic coefficients for new samples with frozen time and space modes.

    For every stored triplet the local stage is rerun on the new samples and
    its result projected on g_l; nothing global is recomputed.
    """
    config = config or state.config
    ctx = _Context(problem, samples)
    lam = np.zeros((0, samples.n))
    for l in range(state.k):
        H, _ = local_stage(ctx, (lam, state.g[:l], state.d[:l]), state.d[l], config)
        gl = state.g[l]
        lam = np.vstack([lam, problem.time.inner(H, gl) / problem.time.inner(gl, gl)])
    return lam
