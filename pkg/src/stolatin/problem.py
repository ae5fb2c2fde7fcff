"""Problem definition shared by the LATIN solver, the update stage and the MCS oracle."""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from . import constitutive as cm
from .meshfe import (
    DEV_PROJECTOR,
    VOIGT_IDENTITY,
    ElasticTensor,
    Mesh,
    assemble_component_stiffness,
    assemble_traction_force,
    strain_from_displacement,
)
from .randfield import AffineField, SampleSet, evaluate_field


@dataclass
class TimeGrid:
    """Pseudo-time nodes and the load multiplier at each node.

    Temporal integrals use the midpoint rule on the n_t - 1 intervals, with
    midpoint values taken as the average of the two adjacent nodal values.
    """

    times: np.ndarray
    multipliers: np.ndarray

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.multipliers = np.asarray(self.multipliers, dtype=float)
        if self.times.ndim != 1 or len(self.times) < 2:
            raise ValueError("need at least two time nodes")
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("times must be strictly increasing")
        if self.multipliers.shape != self.times.shape or not np.all(np.isfinite(self.multipliers)):
            raise ValueError("one finite multiplier per time node required")

    @classmethod
    def from_profile(cls, table, n_t):
        """Sample a piecewise-linear (time, multiplier) table at n_t even nodes."""
        table = np.asarray(table, dtype=float)
        t = np.linspace(table[0, 0], table[-1, 0], int(n_t))
        return cls(t, np.interp(t, table[:, 0], table[:, 1]))

    @property
    def n_t(self):
        return len(self.times)

    @property
    def dt(self):
        return np.diff(self.times)

    @property
    def midpoints(self):
        return 0.5 * (self.times[1:] + self.times[:-1])

    @staticmethod
    def at_midpoints(x, axis=-1):
        x = np.moveaxis(np.asarray(x, dtype=float), axis, -1)
        return np.moveaxis(0.5 * (x[..., 1:] + x[..., :-1]), -1, axis)

    def inner(self, a, b):
        return np.sum(self.at_midpoints(a) * self.at_midpoints(b) * self.dt, axis=-1)

    def norm(self, g):
        return np.sqrt(self.inner(g, g))

    def nodal_weights(self, g):
        """w with sum_i g*_i dt_i x*_i == w @ x for any nodal series x."""
        c = self.at_midpoints(g) * self.dt * 0.5
        w = np.zeros(np.shape(g))
        w[..., :-1] += c
        w[..., 1:] += c
        return w


@dataclass
class StochasticMaterial:
    """Young's modulus and yield stress as affine fields of shared variables.

    ``hardening`` is in MPa. Rows whose modulus or yield stress drop below
    ``floor_ratio`` times the respective mean anywhere are rejected.
    """

    youngs: AffineField
    yield_stress: AffineField
    nu: float = 0.29
    hardening: float = 0.01
    specs: tuple = ()
    floor_ratio: float = 0.1

    @property
    def dim(self):
        return len(self.specs)

    def realize(self, samples):
        E = evaluate_field(self.youngs, samples)
        sy = evaluate_field(self.yield_stress, samples)
        if np.any(E <= 0) or np.any(sy <= 0):
            raise ValueError("sample realizes a non-positive modulus or yield stress")
        return cm.MaterialPoint.from_young(E, self.nu, sy, self.hardening)

    def constraint(self, xi):
        E = evaluate_field(self.youngs, xi)
        sy = evaluate_field(self.yield_stress, xi)
        return np.all(E >= self.floor_ratio * self.youngs.mean, axis=1) & np.all(
            sy >= self.floor_ratio * self.yield_stress.mean, axis=1
        )

    @property
    def rejection_rule(self):
        return f"reject rows with E < {self.floor_ratio} mean(E) or sigma_Y < {self.floor_ratio} mean(sigma_Y)"

    def unit_tensor(self):
        return ElasticTensor.from_young(1.0, self.nu)


@dataclass(eq=False)
class Problem:
    mesh: Mesh
    material: StochasticMaterial
    time: TimeGrid
    traction: np.ndarray
    watch_dofs: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))

    def __post_init__(self):
        self.traction = np.asarray(self.traction, dtype=float).reshape(3)
        self.watch_dofs = np.asarray(self.watch_dofs, dtype=np.int64).reshape(-1)

    @cached_property
    def f_ext(self):
        return assemble_traction_force(self.mesh, self.traction)

    @cached_property
    def stiffness_components(self):
        """[(column or None, K_i)] so that K(theta) = sum xi_c K_i (xi_None = 1)."""
        unit = self.material.unit_tensor()
        out = []
        for col, values in self.material.youngs.components():
            C = ElasticTensor(unit.kappa * values, unit.mu * values)
            out.append((col, assemble_component_stiffness(self.mesh, C)))
        return out

    def basis(self, vectors):
        return BasisKinematics(self.mesh, np.atleast_2d(vectors))


class BasisKinematics:
    """Element strains of a few global vectors plus the contractions needed
    to project tangents and internal forces onto their span."""

    def __init__(self, mesh, vectors):
        self.mesh = mesh
        self.vectors = np.asarray(vectors, dtype=float)
        # (ne, k, 6)
        self.E = np.ascontiguousarray(
            np.transpose(strain_from_displacement(mesh, self.vectors), (1, 0, 2))
        )
        self.vol = mesh.volumes
        self.M = self.E @ VOIGT_IDENTITY
        self.Q = np.einsum("ekp,pq,elq->ekl", self.E, DEV_PROJECTOR, self.E)
        ne, k = self.M.shape
        self._MM = (self.M[:, :, None] * self.M[:, None, :]).reshape(ne, k * k)
        self._Q = self.Q.reshape(ne, k * k)

    @property
    def k(self):
        return self.vectors.shape[0]

    def strains(self, coeffs):
        """Element strains for coefficient arrays (..., k) -> (..., ne, 6)."""
        return np.einsum("...k,ekp->...ep", coeffs, self.E)

    def internal(self, stress):
        """Projected internal forces, stress (..., ne, 6) -> (..., k)."""
        return np.einsum("...ep,ekp,e->...k", stress, self.E, self.vol, optimize=True)

    def tangent(self, factors, mu):
        """Projected tangent (..., k, k) from constitutive tangent factors."""
        kappa, a, b, n = factors
        lead = np.shape(a)
        vk = (kappa * self.vol).reshape(-1, self.M.shape[0])
        vd = ((2 * np.asarray(mu) - a) * self.vol).reshape(-1, self.M.shape[0])
        k = self.k
        out = vk @ self._MM + vd @ self._Q
        out = out.reshape(lead[:-1] + (k, k))
        if np.any(b):
            w = np.einsum("ekp,...ep->...ek", self.E, n)
            out = out - np.einsum("...e,...ek,...el->...kl", b * self.vol, w, w, optimize=True)
        return out


def constitutive_sweep(mp: cm.MaterialPoint, strains, keep_plastic=False):
    """Integrate the constitutive law along a prescribed strain history.

    strains: (n_s, n_t, n_e, 6). Returns stresses of the same shape and, if
    requested, the plastic strain and back stress histories.
    """
    strains = np.asarray(strains, dtype=float)
    ns, nt, ne, _ = strains.shape
    state = cm.PlasticState.zeros((ns, ne))
    stress = np.empty_like(strains)
    eps_p = np.empty_like(strains) if keep_plastic else None
    beta = np.empty_like(strains) if keep_plastic else None
    for i in range(nt):
        sig, _, internals = cm.evaluate(mp, strains[:, i], state, tangent=False)
        state = cm.commit(mp, internals, state)
        stress[:, i] = sig
        if keep_plastic:
            eps_p[:, i] = state.eps_p
            beta[:, i] = state.beta
    if keep_plastic:
        return stress, eps_p, beta
    return stress
