"""Error measures, densities and stress recovery for ensembles of histories."""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy.stats import gaussian_kde

from .problem import constitutive_sweep
from .meshfe import strain_from_displacement


def l2_error(reference, candidate, axis=-1):
    """Relative l2 error over time, ||ref - cand|| / ||ref||, per leading index.

    The error is undefined for a zero reference and returned as NaN there.
    """
    ref = np.asarray(reference, dtype=float)
    cand = np.asarray(candidate, dtype=float)
    if ref.shape != cand.shape:
        raise ValueError("reference and candidate shapes differ")
    num = np.linalg.norm(ref - cand, axis=axis)
    den = np.linalg.norm(ref, axis=axis)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(den > 0, num / np.where(den > 0, den, 1.0), np.nan)


@dataclass
class PdfEstimate:
    grid: np.ndarray
    density: np.ndarray
    bandwidth: float
    n: int


def pdf_estimate(values, grid=None, n_grid=200) -> PdfEstimate:
    """Gaussian kernel density with Silverman's bandwidth.

    Needs at least 30 finite values with a non-zero spread. The default grid
    extends four bandwidths past the data on both sides.
    """
    x = np.asarray(values, dtype=float).ravel()
    if x.size < 30:
        raise ValueError("density estimate needs at least 30 samples")
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite samples")
    if np.ptp(x) == 0:
        raise ValueError("samples have zero spread")
    kde = gaussian_kde(x, bw_method="silverman")
    bw = float(np.sqrt(kde.covariance[0, 0]))
    if grid is None:
        grid = np.linspace(x.min() - 4 * bw, x.max() + 4 * bw, n_grid)
    grid = np.asarray(grid, dtype=float)
    return PdfEstimate(grid, kde(grid), bw, x.size)


def stress_recovery(problem, samples, displacement):
    """Stress histories (n_s, n_t, n_e, 6) from displacement histories (n_s, n_t, n_dofs)."""
    mp = problem.material.realize(samples)
    eps = strain_from_displacement(problem.mesh, np.asarray(displacement, dtype=float))
    return constitutive_sweep(mp, eps)


def summarize(errors):
    e = np.asarray(errors, dtype=float)
    return {"median": float(np.median(e)), "max": float(np.max(e)), "mean": float(np.mean(e))}


def write_histories_csv(path, times, series, labels):
    """One row per time node, one column per labelled series."""
    series = np.asarray(series, dtype=float)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", *labels])
        for i, t in enumerate(times):
            w.writerow([repr(float(t)), *(repr(float(v)) for v in series[:, i])])


def write_errors_csv(path, errors_update, errors_plain=None):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["sample", "l2_update"] + ([] if errors_plain is None else ["l2_without_update"]))
        for s, e in enumerate(errors_update):
            row = [s, repr(float(e))]
            if errors_plain is not None:
                row.append(repr(float(errors_plain[s])))
            w.writerow(row)


def write_pdf_csv(path, grid, densities, labels):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", *labels])
        for i, x in enumerate(grid):
            w.writerow([repr(float(x)), *(repr(float(d[i])) for d in densities)])
