"""
On-disk layout for states, reduced solutions and ensembles.

A saved object is a directory holding ``manifest.json`` and one raw
little-endian float64 file per array. The manifest records the format name,
a version, the object kind, free-form metadata and, for every array, its file
name, shape and SHA-256 digest. Nothing time-dependent is written, so equal
inputs give byte-identical directories.
"""
from __future__ import annotations

import hashlib
import json
import os
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from .errors import IntegrityError

FORMAT = "stolatin-arrays"
VERSION = 1
MANIFEST = "manifest.json"


def _digest(data: bytes):
    return hashlib.sha256(data).hexdigest()


def _atomic_write(path: Path, data: bytes):
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


def save_arrays(directory, kind, arrays: dict, meta: dict | None = None):
    """Write ``arrays`` (name -> float array) and ``meta`` (JSON-able) to ``directory``."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    entries = {}
    for name in sorted(arrays):
        a = np.ascontiguousarray(np.asarray(arrays[name], dtype="<f8"))
        data = a.tobytes()
        fname = f"{name}.bin"
        _atomic_write(d / fname, data)
        entries[name] = {"file": fname, "shape": list(a.shape), "dtype": "<f8", "sha256": _digest(data)}
    manifest = {"format": FORMAT, "version": VERSION, "kind": kind, "meta": meta or {}, "arrays": entries}
    text = json.dumps(manifest, sort_keys=True, indent=2, allow_nan=True) + "\n"
    _atomic_write(d / MANIFEST, text.encode())
    return d / MANIFEST


def load_arrays(directory, kind=None):
    """Read a directory written by :func:`save_arrays`, verifying every digest.

    ``kind`` may be one name or a tuple of accepted names. Returns (meta,
    arrays). Raises FileNotFoundError if there is no manifest and
    IntegrityError on any mismatch.
    """
    d = Path(directory)
    mpath = d / MANIFEST
    if not mpath.exists():
        raise FileNotFoundError(f"no manifest in {d}")
    try:
        manifest = json.loads(mpath.read_text())
        if manifest["format"] != FORMAT:
            raise IntegrityError(f"unknown format {manifest['format']!r}")
        if manifest["version"] != VERSION:
            raise IntegrityError(f"unsupported version {manifest['version']}")
        entries = manifest["arrays"]
        meta = manifest["meta"]
    except (ValueError, KeyError, TypeError) as exc:
        raise IntegrityError(f"corrupted manifest: {exc}") from exc
    kinds = (kind,) if isinstance(kind, str) else kind
    if kinds is not None and manifest.get("kind") not in kinds:
        raise IntegrityError(f"expected a {kind!r} file, found {manifest.get('kind')!r}")
    arrays = {}
    for name, e in entries.items():
        try:
            data = (d / e["file"]).read_bytes()
        except (OSError, KeyError, TypeError) as exc:
            raise IntegrityError(f"array {name!r} unreadable: {exc}") from exc
        if _digest(data) != e.get("sha256"):
            raise IntegrityError(f"checksum mismatch for array {name!r}")
        shape = tuple(e["shape"])
        a = np.frombuffer(data, dtype="<f8")
        if a.size != int(np.prod(shape)):
            raise IntegrityError(f"size mismatch for array {name!r}")
        arrays[name] = a.reshape(shape).astype(float)
    return meta, arrays


@contextmanager
def run_lock(directory):
    """Exclusive lock file guarding a run directory against concurrent writers."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    path = d / ".lock"
    try:
        fd = os.open(path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise RuntimeError(f"run directory {d} is locked by another process") from None
    try:
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        yield
    finally:
        path.unlink(missing_ok=True)


# -- object level ----------------------------------------------------------

def _plain(x):
    if isinstance(x, dict):
        return {k: _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    if isinstance(x, np.generic):
        return x.item()
    return x


def save_state(directory, state, cfg):
    """Persist a LatinState together with the run configuration that defines it."""
    from dataclasses import asdict

    arrays = {"lam": state.lam, "g": state.g, "d": state.d, "samples": state.samples.values}
    for name in ("stress", "eps_p", "beta"):
        if getattr(state, name) is not None:
            arrays[name] = getattr(state, name)
    meta = {
        "config": cfg,
        "latin": asdict(state.config),
        "log": _plain(state.log),
        "global_solves": state.global_solves,
        "status": state.status,
        "sample_seed": state.samples.seed,
        "rejection_rule": state.samples.rejection_rule,
    }
    return save_arrays(directory, "latin-state", arrays, meta)


def load_state(directory):
    """Returns (cfg, LatinState); the problem is rebuilt from the stored config."""
    from .config import build_problem, validate
    from .latin import LatinConfig, LatinState
    from .randfield import SampleSet

    meta, arrays = load_arrays(directory, "latin-state")
    cfg = validate(meta["config"])
    problem = build_problem(cfg)
    samples = SampleSet(arrays["samples"], meta["sample_seed"], problem.material.specs, meta["rejection_rule"])
    state = LatinState(
        problem, samples, LatinConfig(**meta["latin"]),
        arrays["lam"].reshape(-1, samples.n), arrays["g"].reshape(-1, problem.time.n_t),
        arrays["d"].reshape(-1, problem.mesh.n_dofs),
        log=meta["log"], global_solves=meta["global_solves"], status=meta["status"],
        stress=arrays.get("stress"), eps_p=arrays.get("eps_p"), beta=arrays.get("beta"),
    )
    return cfg, state


def save_reduced(directory, red, samples, watch_dofs, meta=None):
    arrays = {
        "coeffs": red.coeffs, "D": red.D, "converged": red.converged.astype(float),
        "iterations": red.iterations.astype(float), "samples": samples.values,
        "watch": red.displacement(watch_dofs),
    }
    info = {"watch_dofs": [int(i) for i in watch_dofs], "sample_seed": samples.seed}
    info.update(meta or {})
    return save_arrays(directory, "reduced-solution", arrays, info)


def save_ensemble(directory, ens, samples, meta=None):
    arrays = {
        "watch": ens.watch, "final": ens.final, "converged": ens.converged.astype(float),
        "iterations": ens.iterations.astype(float), "samples": samples.values,
    }
    # wall times are reported, never stored, to keep artifacts reproducible
    info = {"watch_dofs": [int(i) for i in ens.watch_dofs], "sample_seed": samples.seed}
    info.update(meta or {})
    return save_arrays(directory, "ensemble", arrays, info)
