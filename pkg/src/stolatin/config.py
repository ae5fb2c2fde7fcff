"""
Run configuration: a versioned JSON document and the objects built from it.

Units are mm, MPa and N/mm^2 throughout, except ``hardening_pa`` which is
given in Pa (as commonly quoted) and converted to MPa on use.
"""
from __future__ import annotations

import copy
import json
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .meshfe import build_box_mesh, read_mesh
from .problem import Problem, StochasticMaterial, TimeGrid
from .randfield import AffineField, CovarianceSpec, VariableSpec, draw_samples, kl_expand

SCHEMA_VERSION = 1
DEFAULT_PROFILE = [[0.0, 0.0], [0.25, 1.0], [0.5, 0.0], [0.75, 1.0], [1.0, 0.0]]

DEFAULTS = {
    "schema_version": SCHEMA_VERSION,
    "mesh": {"kind": "box", "lengths": [24.0, 12.0, 12.0], "divisions": [6, 3, 3],
             "fixed_face": "x-", "loaded_face": "x+"},
    "youngs": {"kind": "gaussian", "mean": 2.11e5, "std": 2.11e4},
    "yield_stress": {"kind": "gaussian", "mean": 245.0, "std": 24.5},
    "nu": 0.29,
    "hardening_pa": 1.0e4,
    "floor_ratio": 0.1,
    "load": {"traction": [0.0, 35.8, 0.0], "profile": DEFAULT_PROFILE},
    "n_t": 41,
    "tolerances": {"eps_d": 1e-3, "eps_u": 1e-8, "eps_g": 1e-10, "eps_nr": 1e-10},
    "n_s1": None,
    "n_s2": 100,
    "seed": 0,
    "max_terms": 30,
    "max_inner": 20,
    "watch_nodes": None,
    "output_dir": "run",
}

_FIELD_KEYS = {
    "deterministic": {"kind", "value"},
    "gaussian": {"kind", "mean", "std"},
    "interval": {"kind", "low", "high"},
    "kl": {"kind", "mean", "chi", "lengths", "trunc_tol"},
}
_MESH_KEYS = {
    "box": {"kind", "lengths", "divisions", "fixed_face", "loaded_face"},
    "file": {"kind", "path"},
}


def _check_keys(d, allowed, where):
    if not isinstance(d, dict):
        raise ConfigError(f"{where} must be a mapping")
    extra = set(d) - set(allowed)
    if extra:
        raise ConfigError(f"unknown keys in {where}: {sorted(extra)}")


def _positive(x, name, allow_zero=False):
    if not isinstance(x, (int, float)) or isinstance(x, bool) or not np.isfinite(x):
        raise ConfigError(f"{name} must be a finite number")
    if x < 0 or (x == 0 and not allow_zero):
        raise ConfigError(f"{name} must be {'non-negative' if allow_zero else 'positive'}")


def validate(cfg: dict) -> dict:
    """Fill defaults, reject unknown keys and bad values; returns a new dict."""
    _check_keys(cfg, DEFAULTS, "config")
    if cfg.get("schema_version", SCHEMA_VERSION) != SCHEMA_VERSION:
        raise ConfigError(f"unsupported schema_version {cfg.get('schema_version')}")
    out = copy.deepcopy(DEFAULTS)
    for key, val in cfg.items():
        if isinstance(out.get(key), dict) and key not in ("mesh", "youngs", "yield_stress"):
            _check_keys(val, out[key], key)
            out[key].update(copy.deepcopy(val))
        else:
            out[key] = copy.deepcopy(val)

    mesh = out["mesh"]
    if not isinstance(mesh, dict) or mesh.get("kind") not in _MESH_KEYS:
        raise ConfigError("mesh.kind must be 'box' or 'file'")
    _check_keys(mesh, _MESH_KEYS[mesh["kind"]], "mesh")
    if mesh["kind"] == "box":
        full = dict(DEFAULTS["mesh"])
        full.update(mesh)
        out["mesh"] = mesh = full
        if len(mesh["lengths"]) != 3 or len(mesh["divisions"]) != 3:
            raise ConfigError("box mesh needs three lengths and three divisions")
        for v in mesh["lengths"]:
            _positive(v, "mesh.lengths")
        if any(not isinstance(n, int) or n < 1 for n in mesh["divisions"]):
            raise ConfigError("mesh.divisions must be positive integers")
    elif not isinstance(mesh.get("path"), str):
        raise ConfigError("mesh.path must be a string")

    for name in ("youngs", "yield_stress"):
        f = out[name]
        if not isinstance(f, dict) or f.get("kind") not in _FIELD_KEYS:
            raise ConfigError(f"{name}.kind must be one of {sorted(_FIELD_KEYS)}")
        if f["kind"] == "kl":
            f.setdefault("lengths", None)
            f.setdefault("trunc_tol", 1e-2)
        _check_keys(f, _FIELD_KEYS[f["kind"]], name)
        missing = _FIELD_KEYS[f["kind"]] - set(f)
        if missing:
            raise ConfigError(f"{name} is missing {sorted(missing)}")
        if f["kind"] == "deterministic":
            _positive(f["value"], f"{name}.value")
        elif f["kind"] == "gaussian":
            _positive(f["mean"], f"{name}.mean")
            _positive(f["std"], f"{name}.std", allow_zero=True)
        elif f["kind"] == "interval":
            _positive(f["low"], f"{name}.low")
            if not f["high"] >= f["low"]:
                raise ConfigError(f"{name}: high must be >= low")
        else:
            _positive(f["mean"], f"{name}.mean")
            _positive(f["chi"], f"{name}.chi", allow_zero=True)
            _positive(f["trunc_tol"], f"{name}.trunc_tol")

    if not 0 <= out["nu"] < 0.5:
        raise ConfigError("nu must lie in [0, 0.5)")
    _positive(out["hardening_pa"], "hardening_pa", allow_zero=True)
    _positive(out["floor_ratio"], "floor_ratio", allow_zero=True)
    for k, v in out["tolerances"].items():
        _positive(v, f"tolerances.{k}")
    if len(out["load"]["traction"]) != 3:
        raise ConfigError("load.traction needs three components")
    prof = np.asarray(out["load"]["profile"], dtype=float)
    if prof.ndim != 2 or prof.shape[1] != 2 or len(prof) < 2 or np.any(np.diff(prof[:, 0]) <= 0):
        raise ConfigError("load.profile must be a table of increasing (time, multiplier) pairs")
    if not isinstance(out["n_t"], int) or out["n_t"] < 2:
        raise ConfigError("n_t must be an integer >= 2")
    for key in ("n_s1", "n_s2"):
        v = out[key]
        if v is not None and (not isinstance(v, int) or v < 1):
            raise ConfigError(f"{key} must be a positive integer")
    if not isinstance(out["seed"], int) or out["seed"] < 0:
        raise ConfigError("seed must be a non-negative integer")
    for key in ("max_terms", "max_inner"):
        if not isinstance(out[key], int) or out[key] < 1:
            raise ConfigError(f"{key} must be a positive integer")
    return out


def load_config(path) -> dict:
    try:
        raw = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    return validate(raw)


def dump_config(cfg: dict) -> str:
    return json.dumps(cfg, sort_keys=True, indent=2) + "\n"


def build_mesh(cfg):
    m = cfg["mesh"]
    if m["kind"] == "box":
        return build_box_mesh(m["lengths"], m["divisions"], m["fixed_face"], m["loaded_face"])
    return read_mesh(m["path"])


def _field(spec, mesh, first_column, floor_ratio):
    ne = mesh.n_elements
    kind = spec["kind"]
    if kind == "deterministic":
        return AffineField.constant(spec["value"], ne), []
    if kind == "gaussian":
        if spec["std"] == 0:
            return AffineField.constant(spec["mean"], ne), []
        lower = (floor_ratio - 1.0) * spec["mean"] / spec["std"]
        return (AffineField.random_variable(spec["mean"], spec["std"], ne, first_column),
                [VariableSpec("gaussian", lower=lower)])
    if kind == "interval":
        if spec["high"] == spec["low"]:
            return AffineField.constant(spec["low"], ne), []
        return AffineField.interval(spec["low"], spec["high"], ne, first_column), [VariableSpec("uniform")]
    lengths = spec["lengths"] or list(mesh.extents)
    cov = CovarianceSpec(spec["chi"] * spec["mean"], tuple(lengths))
    f = kl_expand(mesh, cov, spec["trunc_tol"], spec["mean"], first_column)
    return f, [VariableSpec("uniform")] * f.m


def build_problem(cfg, mesh=None) -> Problem:
    mesh = mesh or build_mesh(cfg)
    fr = cfg["floor_ratio"]
    E, specs_e = _field(cfg["youngs"], mesh, 0, fr)
    sy, specs_s = _field(cfg["yield_stress"], mesh, len(specs_e), fr)
    material = StochasticMaterial(E, sy, cfg["nu"], cfg["hardening_pa"] * 1e-6,
                                  tuple(specs_e + specs_s), fr)
    time = TimeGrid.from_profile(cfg["load"]["profile"], cfg["n_t"])
    return Problem(mesh, material, time, cfg["load"]["traction"], watch_dofs(cfg, mesh))


def watch_dofs(cfg, mesh):
    """y-dofs of the watch nodes; default is the loaded-face corner of largest coordinates."""
    nodes = cfg["watch_nodes"]
    if nodes is None:
        x = mesh.nodes
        key = np.lexsort((x[:, 2], x[:, 1], x[:, 0]))
        nodes = [int(key[-1])]
    nodes = np.asarray(nodes, dtype=np.int64)
    if np.any(nodes < 0) or np.any(nodes >= mesh.n_nodes):
        raise ConfigError("watch node index out of range")
    return 3 * nodes + 1


def seeds(cfg):
    """Independent integer seeds for the iteration, update and held-out sets."""
    children = np.random.SeedSequence(cfg["seed"]).spawn(3)
    return [int(c.generate_state(1, dtype=np.uint64)[0] % (2**63)) for c in children]


def n_iteration_samples(cfg, problem):
    return cfg["n_s1"] if cfg["n_s1"] is not None else max(10 * problem.material.dim, 1)


def draw(problem, n, seed):
    mat = problem.material
    return draw_samples(mat.specs, n, seed, mat.constraint, mat.rejection_rule)


def iteration_samples(cfg, problem):
    return draw(problem, n_iteration_samples(cfg, problem), seeds(cfg)[0])


def update_samples(cfg, problem, n=None):
    return draw(problem, n if n is not None else cfg["n_s2"], seeds(cfg)[1])


def holdout_samples(cfg, problem, n=20):
    return draw(problem, n, seeds(cfg)[2])
