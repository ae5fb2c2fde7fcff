"""
Random and parametric material inputs.

Every uncertain input is an affine field over elements,

    value(e, theta) = mean(e) + sum_i xi_{c_i}(theta) * scale_i * field_i(e),

where xi_c are the columns of a :class:`SampleSet`. Gaussian inputs use
standard-normal columns (truncated from below), interval parameters and KL
coefficients use unit-variance uniforms on [-sqrt(3), sqrt(3)].
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import InfeasibleSpecError

SQRT3 = np.sqrt(3.0)


@dataclass(frozen=True)
class VariableSpec:
    """One standardized input variable.

    kind is ``"gaussian"`` (standard normal, optionally truncated to
    [lower, upper]) or ``"uniform"`` (on [-sqrt(3), sqrt(3)]).
    """

    kind: str
    lower: float = -np.inf
    upper: float = np.inf

    def __post_init__(self):
        if self.kind not in ("gaussian", "uniform"):
            raise ValueError(f"unknown variable kind {self.kind!r}")


@dataclass
class SampleSet:
    values: np.ndarray
    seed: int | None
    specs: tuple
    rejection_rule: str = ""

    @property
    def n(self):
        return self.values.shape[0]

    @property
    def dim(self):
        return self.values.shape[1]

    def subset(self, idx):
        return SampleSet(self.values[idx], self.seed, self.specs, self.rejection_rule)


@dataclass
class CovarianceSpec:
    """Separable exponential kernel (chi^2 / 3) exp(-sum_k |dx_k| / l_k).

    The 1/3 prefactor is kept as written, so the marginal variance of the
    field is chi^2 / 3.
    """

    chi: float
    lengths: tuple

    def __post_init__(self):
        if self.chi < 0:
            raise ValueError("chi must be non-negative")
        if len(self.lengths) != 3 or any(l <= 0 for l in self.lengths):
            raise ValueError("correlation lengths must be three positive numbers")

    def __call__(self, p, q):
        p = np.asarray(p, dtype=float)
        q = np.asarray(q, dtype=float)
        d = np.abs(p[:, None, :] - q[None, :, :]) / np.asarray(self.lengths, dtype=float)
        return self.chi**2 / 3.0 * np.exp(-d.sum(axis=-1))


@dataclass
class AffineField:
    mean: np.ndarray
    fields: np.ndarray = None
    scales: np.ndarray = None
    columns: np.ndarray = None
    eigenvalues: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        self.mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        ne = self.mean.shape[0]
        self.fields = np.zeros((0, ne)) if self.fields is None else np.asarray(self.fields, dtype=float).reshape(-1, ne)
        m = len(self.fields)
        self.scales = np.ones(m) if self.scales is None else np.asarray(self.scales, dtype=float).reshape(m)
        self.columns = np.arange(m) if self.columns is None else np.asarray(self.columns, dtype=np.int64).reshape(m)

    @property
    def m(self):
        return len(self.fields)

    @property
    def n_elements(self):
        return self.mean.shape[0]

    @classmethod
    def constant(cls, value, n_elements):
        return cls(np.full(n_elements, float(value)))

    @classmethod
    def random_variable(cls, mean, std, n_elements, column=0):
        """Spatially constant input mean + std * xi."""
        return cls(
            np.full(n_elements, float(mean)),
            np.ones((1, n_elements)),
            np.array([float(std)]),
            np.array([column]),
        )

    @classmethod
    def interval(cls, low, high, n_elements, column=0):
        """Uniform parameter on [low, high] driven by a unit-variance uniform."""
        mid, half = 0.5 * (low + high), 0.5 * (high - low)
        return cls.random_variable(mid, half / SQRT3, n_elements, column)

    def shifted(self, offset):
        """Same field reading its variables from columns + offset."""
        return AffineField(self.mean, self.fields, self.scales, self.columns + offset, self.eigenvalues)

    def components(self):
        """Affine parts as (column or None, per-element values)."""
        out = [(None, self.mean)]
        out += [(int(c), s * f) for c, s, f in zip(self.columns, self.scales, self.fields)]
        return out

    def variance(self, var_xi=1.0):
        return np.sum((self.scales[:, None] * self.fields) ** 2, axis=0) * var_xi


def evaluate_field(field_: AffineField, samples):
    """Per-sample, per-element values, shape (n_samples, n_elements)."""
    xi = samples.values if isinstance(samples, SampleSet) else np.asarray(samples, dtype=float)
    xi = np.atleast_2d(xi)
    if field_.m and (xi.shape[1] <= field_.columns.max()):
        raise ValueError("sample columns do not cover the field's variables")
    out = np.broadcast_to(field_.mean, (xi.shape[0], field_.n_elements)).copy()
    if field_.m:
        out += (xi[:, field_.columns] * field_.scales) @ field_.fields
    return out


def fredholm_eigenpairs(points, weights, kernel):
    """Nystrom solution of int k(x, y) phi(y) dy = lam phi(x).

    Returns eigenvalues (non-increasing) and eigenfunctions sampled at the
    points, orthonormal under the weights (columns of the second output).
    """
    w = np.asarray(weights, dtype=float)
    sw = np.sqrt(w)
    Kmat = kernel(points, points)
    A = sw[:, None] * Kmat * sw[None, :]
    A = 0.5 * (A + A.T)
    lam, V = np.linalg.eigh(A)
    order = np.argsort(lam)[::-1]
    lam, V = lam[order], V[:, order]
    if lam.size and lam[-1] < 0:
        neg = -lam[-1]
        if neg >= 1e-10 * max(lam[0], 0.0):
            raise np.linalg.LinAlgError("discretized covariance is indefinite")
        warnings.warn("clipping tiny negative covariance eigenvalues", RuntimeWarning)
        lam = np.maximum(lam, 0.0)
    # fix eigenvector signs so results are reproducible
    idx = np.argmax(np.abs(V), axis=0)
    V = V * np.sign(V[idx, np.arange(V.shape[1])])
    return lam, V / sw[:, None]


def truncation_error(eigenvalues, r):
    """kappa_r / sum_{i<=r} kappa_i."""
    lam = np.asarray(eigenvalues, dtype=float)
    if not 1 <= r <= lam.size:
        raise IndexError("truncation rank out of range")
    total = lam[:r].sum()
    return lam[r - 1] / total if total > 0 else 0.0


def kl_expand(mesh, cov: CovarianceSpec, trunc_tol, mean=0.0, first_column=0):
    """KL field over element centroids with volume weights.

    Keeps the smallest r whose truncation error is <= trunc_tol. The returned
    field carries unit-variance coefficients (one column per term) and the
    full retained eigenvalue list.
    """
    if not 0 < trunc_tol < 1:
        raise ValueError("trunc_tol must lie in (0, 1)")
    ne = mesh.n_elements
    mean_field = np.full(ne, float(mean)) if np.ndim(mean) == 0 else np.asarray(mean, dtype=float)
    if cov.chi == 0:
        return AffineField(mean_field, eigenvalues=np.zeros(0))
    lam, phi = fredholm_eigenpairs(mesh.centroids, mesh.volumes, cov)
    r = lam.size
    for i in range(1, lam.size + 1):
        if truncation_error(lam, i) <= trunc_tol:
            r = i
            break
    return AffineField(
        mean_field,
        phi[:, :r].T,
        np.sqrt(lam[:r]),
        first_column + np.arange(r),
        eigenvalues=lam[:r],
    )


def draw_samples(specs, n, seed, constraint=None, rule=""):
    """Draw ``n`` rows of independent standardized variables.

    Gaussian columns are redrawn while outside their truncation bounds; rows
    failing ``constraint`` (a callable on an (m, dim) block returning a boolean
    mask) are rejected as a whole. Raises InfeasibleSpecError when more than
    99% of draws get rejected.
    """
    specs = tuple(specs)
    if n < 1:
        raise ValueError("need at least one sample")
    rng = np.random.default_rng(seed)
    dim = len(specs)
    accepted = []
    n_ok = n_drawn = 0
    while n_ok < n:
        batch = max(2 * (n - n_ok), 16)
        block = np.empty((batch, dim))
        for j, s in enumerate(specs):
            if s.kind == "gaussian":
                block[:, j] = rng.standard_normal(batch)
            else:
                block[:, j] = rng.uniform(-SQRT3, SQRT3, batch)
        ok = np.ones(batch, dtype=bool)
        for j, s in enumerate(specs):
            ok &= (block[:, j] >= s.lower) & (block[:, j] <= s.upper)
        if constraint is not None and dim:
            ok &= np.asarray(constraint(block), dtype=bool)
        n_drawn += batch
        accepted.append(block[ok])
        n_ok += int(ok.sum())
        if n_drawn >= 1000 and n_ok < 0.01 * n_drawn:
            raise InfeasibleSpecError("rejection rate above 99%")
    values = np.concatenate(accepted)[:n] if dim else np.zeros((n, 0))
    return SampleSet(values, seed, specs, rule)
