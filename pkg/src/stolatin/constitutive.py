"""
Von Mises plasticity with linear kinematic hardening, explicit update.

All routines are vectorized: material parameters and states broadcast over
any leading axes (samples, elements). Strains and plastic strains use
engineering shear; stresses and back stresses use tensor components.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .meshfe import DEV_PROJECTOR, VOIGT_IDENTITY, deviator, tensor_norm

_ENG = np.array([1.0, 1.0, 1.0, 2.0, 2.0, 2.0])


@dataclass
class MaterialPoint:
    """Moduli and yield data in MPa.

    ``hardening`` is the kinematic hardening coefficient relating back stress
    to its internal variable, beta = hardening * rho. The internal variable is
    never stored: rho = beta / hardening, undefined for zero hardening.
    """

    kappa: np.ndarray | float
    mu: np.ndarray | float
    sigma_y: np.ndarray | float
    hardening: np.ndarray | float = 0.0

    def __post_init__(self):
        for name in ("kappa", "mu", "sigma_y"):
            if np.any(np.asarray(getattr(self, name)) <= 0):
                raise ValueError(f"{name} must be positive")
        if np.any(np.asarray(self.hardening) < 0):
            raise ValueError("hardening must be non-negative")

    @classmethod
    def from_young(cls, E, nu, sigma_y, hardening=0.0):
        E = np.asarray(E, dtype=float)
        return cls(E / (3 * (1 - 2 * nu)), E / (2 * (1 + nu)), sigma_y, hardening)


@dataclass
class PlasticState:
    eps_p: np.ndarray
    beta: np.ndarray

    @classmethod
    def zeros(cls, shape=()):
        return cls(np.zeros(tuple(shape) + (6,)), np.zeros(tuple(shape) + (6,)))

    def copy(self):
        return PlasticState(self.eps_p.copy(), self.beta.copy())

    def rho(self, hardening):
        if np.any(np.asarray(hardening) == 0):
            raise ZeroDivisionError("rho is undefined without hardening")
        return self.beta / np.asarray(hardening)[..., None]


def _p(x):
    return np.asarray(x, dtype=float)[..., None]


def elastic_stress(kappa, mu, eps):
    tr = eps[..., :3].sum(axis=-1, keepdims=True)
    dev = deviator(eps)
    # shear entries of eps are engineering: tensor 2*mu*eps_ij = mu*gamma_ij
    return _p(kappa) * tr * VOIGT_IDENTITY + _p(mu) * dev * np.array([2, 2, 2, 1, 1, 1.0])


def trial_state(mp: MaterialPoint, eps, prev: PlasticState):
    """Trial stress sigma_0, relative deviator sigma_star and gamma = 1 - sY/|sigma_star|.

    gamma is -inf where |sigma_star| = 0 (elastic).
    """
    eps = np.asarray(eps, dtype=float)
    sigma0 = elastic_stress(mp.kappa, mp.mu, eps - prev.eps_p)
    sstar = deviator(sigma0) - prev.beta
    nrm = tensor_norm(sstar)
    with np.errstate(divide="ignore"):
        gamma = np.where(nrm > 0, 1.0 - np.asarray(mp.sigma_y) / np.where(nrm > 0, nrm, 1.0), -np.inf)
    return sigma0, sstar, gamma


def return_map_stress(mp: MaterialPoint, eps, prev: PlasticState):
    sigma0, sstar, gamma = trial_state(mp, eps, prev)
    mu = np.asarray(mp.mu, dtype=float)
    c = 2 * mu / (2 * mu + np.asarray(mp.hardening, dtype=float))
    return sigma0 - _p(c * np.maximum(gamma, 0.0)) * sstar


def consistent_tangent(mp: MaterialPoint, eps, prev: PlasticState):
    """Algorithmic tangent d sigma / d eps as (..., 6, 6) Voigt matrices."""
    kappa, a, b, n = tangent_factors(mp, *trial_state(mp, eps, prev)[1:])
    mu = np.asarray(mp.mu, dtype=float)
    return (
        kappa[..., None, None] * np.outer(VOIGT_IDENTITY, VOIGT_IDENTITY)
        + (2 * mu - a)[..., None, None] * DEV_PROJECTOR
        - b[..., None, None] * n[..., :, None] * n[..., None, :]
    )


def tangent_factors(mp: MaterialPoint, sstar, gamma):
    """Split C_T = kappa m m^T + (2 mu - a) P_dev - b n n^T.

    Returns (kappa, a, b, n) broadcast to the state shape; a = b = 0 on the
    elastic branch (gamma <= 0) so that C_T equals the elastic tensor there.
    """
    shape = np.shape(gamma)
    mu = np.broadcast_to(np.asarray(mp.mu, dtype=float), shape)
    kappa = np.broadcast_to(np.asarray(mp.kappa, dtype=float), shape)
    w = np.broadcast_to(np.asarray(mp.hardening, dtype=float), shape)
    plastic = gamma > 0
    g = np.where(plastic, gamma, 1.0)
    a = np.where(plastic, 4 * mu**2 / (2 * mu + w) * g, 0.0)
    # (1/(gamma + delta_gamma) - 1) with delta_gamma only active at gamma == 0,
    # which is routed to the elastic branch above
    b = np.where(plastic, a * (1.0 / g - 1.0), 0.0)
    nrm = tensor_norm(sstar)
    n = sstar / np.where(nrm > 0, nrm, 1.0)[..., None]
    return kappa, a, b, n


def update_internal(mp: MaterialPoint, eps, prev: PlasticState):
    _, sstar, gamma = trial_state(mp, eps, prev)
    return _advance(mp, sstar, gamma, prev)


def _advance(mp, sstar, gamma, prev):
    mu = np.asarray(mp.mu, dtype=float)
    w = np.asarray(mp.hardening, dtype=float)
    lam = np.maximum(gamma, 0.0) / (2 * mu + w)
    step = _p(lam) * sstar
    return PlasticState(prev.eps_p + step * _ENG, prev.beta + _p(w) * step)


def yield_value(sigma, beta, sigma_y):
    """Psi = |dev(sigma) - beta| - sigma_y."""
    return tensor_norm(deviator(sigma) - np.asarray(beta, dtype=float)) - np.asarray(sigma_y)


def evaluate(mp: MaterialPoint, eps, prev: PlasticState, tangent=True):
    """Stress, tangent factors and the updated state in one pass."""
    sigma0, sstar, gamma = trial_state(mp, eps, prev)
    mu = np.asarray(mp.mu, dtype=float)
    c = 2 * mu / (2 * mu + np.asarray(mp.hardening, dtype=float))
    sigma = sigma0 - _p(c * np.maximum(gamma, 0.0)) * sstar
    factors = tangent_factors(mp, sstar, gamma) if tangent else None
    return sigma, factors, (sstar, gamma)


def commit(mp: MaterialPoint, internals, prev: PlasticState):
    """Updated state from the (sstar, gamma) pair returned by :func:`evaluate`."""
    return _advance(mp, *internals, prev)

