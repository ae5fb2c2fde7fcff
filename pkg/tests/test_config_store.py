import json

import numpy as np
import pytest

from stolatin import config as C
from stolatin import store
from stolatin.errors import ConfigError, IntegrityError
from stolatin.latin import LatinConfig, solve

SMALL = {
    "mesh": {"kind": "box", "lengths": [8.0, 2.0, 2.0], "divisions": [4, 1, 1]},
    "load": {"traction": [0.0, 40.0, 0.0]},
    "n_t": 11,
    "n_s2": 10,
}


def test_defaults():
    cfg = C.validate({})
    t = cfg["tolerances"]
    assert (t["eps_d"], t["eps_u"], t["eps_g"], t["eps_nr"]) == (1e-3, 1e-8, 1e-10, 1e-10)
    assert cfg["n_t"] == 41 and cfg["nu"] == 0.29
    p = C.build_problem(cfg)
    assert C.n_iteration_samples(cfg, p) == 10 * p.material.dim == 20
    assert np.isclose(p.material.hardening, 0.01)


def test_round_trip(tmp_path):
    cfg = C.validate(dict(SMALL, seed=7))
    path = tmp_path / "c.json"
    path.write_text(C.dump_config(cfg))
    assert C.load_config(path) == cfg
    assert C.dump_config(C.load_config(path)) == C.dump_config(cfg)


@pytest.mark.parametrize("bad", [
    {"colour": 1},
    {"tolerances": {"eps_x": 1e-3}},
    {"mesh": {"kind": "box", "lenghts": [1, 1, 1]}},
    {"youngs": {"kind": "gaussian", "mean": 1.0, "std": 0.1, "extra": 2}},
])
def test_unknown_keys_rejected(bad):
    with pytest.raises(ConfigError):
        C.validate(bad)


@pytest.mark.parametrize("bad", [
    {"tolerances": {"eps_u": -1e-8}},
    {"n_s2": 0},
    {"nu": 0.5},
    {"n_t": 1},
    {"seed": -3},
    {"schema_version": 2},
    {"youngs": {"kind": "interval", "low": 5.0, "high": 1.0}},
    {"load": {"profile": [[0, 0], [0, 1]]}},
])
def test_bad_values_rejected(bad):
    with pytest.raises(ConfigError):
        C.validate(bad)


def test_unparseable_file(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("{not json")
    with pytest.raises(ConfigError):
        C.load_config(p)


def test_seed_streams_independent():
    cfg = C.validate(SMALL)
    p = C.build_problem(cfg)
    a = C.iteration_samples(cfg, p).values
    b = C.update_samples(cfg, p).values
    h = C.holdout_samples(cfg, p).values
    assert len(set(C.seeds(cfg))) == 3
    assert not np.isin(a, b).any() and not np.isin(h, b).any()
    assert np.array_equal(C.update_samples(cfg, p).values, b)


def test_watch_dof_default_is_loaded_corner():
    cfg = C.validate(SMALL)
    p = C.build_problem(cfg)
    node = p.watch_dofs[0] // 3
    assert p.watch_dofs[0] % 3 == 1
    assert np.allclose(p.mesh.nodes[node], [8.0, 2.0, 2.0])
    with pytest.raises(ConfigError):
        C.build_problem(C.validate(dict(SMALL, watch_nodes=[10_000])))


def test_kl_fields_and_interval():
    cfg = C.validate(dict(SMALL,
                          youngs={"kind": "kl", "mean": 2.11e5, "chi": 0.1},
                          yield_stress={"kind": "interval", "low": 200.0, "high": 290.0}))
    p = C.build_problem(cfg)
    r = p.material.youngs.m
    assert r >= 1 and p.material.dim == r + 1
    assert p.material.yield_stress.columns[0] == r
    s = C.iteration_samples(cfg, p)
    assert s.n == 10 * (r + 1)
    sy = p.material.realize(s).sigma_y
    assert sy.min() >= 200.0 - 1e-9 and sy.max() <= 290.0 + 1e-9


def test_zero_std_is_deterministic():
    cfg = C.validate(dict(SMALL, youngs={"kind": "gaussian", "mean": 2.11e5, "std": 0.0},
                          yield_stress={"kind": "deterministic", "value": 245.0}))
    assert C.build_problem(cfg).material.dim == 0


# -- store -----------------------------------------------------------------

def test_arrays_round_trip(tmp_path):
    a = np.arange(12.0).reshape(3, 4)
    store.save_arrays(tmp_path / "x", "thing", {"a": a, "b": np.array([1.5])}, {"note": "hi"})
    meta, arrays = store.load_arrays(tmp_path / "x", "thing")
    assert meta == {"note": "hi"}
    assert np.array_equal(arrays["a"], a) and arrays["a"].dtype == np.float64
    m = json.loads((tmp_path / "x" / "manifest.json").read_text())
    assert m["format"] == "stolatin-arrays" and m["version"] == 1
    assert (tmp_path / "x" / "a.bin").stat().st_size == 12 * 8


def test_corruption_detected(tmp_path):
    store.save_arrays(tmp_path / "x", "thing", {"a": np.ones(4)})
    blob = tmp_path / "x" / "a.bin"
    data = bytearray(blob.read_bytes())
    data[3] ^= 1
    blob.write_bytes(bytes(data))
    with pytest.raises(IntegrityError):
        store.load_arrays(tmp_path / "x")
    (tmp_path / "x" / "manifest.json").write_text("{\"format\": ")
    with pytest.raises(IntegrityError):
        store.load_arrays(tmp_path / "x")


def test_wrong_kind_and_missing(tmp_path):
    store.save_arrays(tmp_path / "x", "thing", {"a": np.ones(2)})
    with pytest.raises(IntegrityError):
        store.load_arrays(tmp_path / "x", "other")
    assert store.load_arrays(tmp_path / "x", ("other", "thing"))[1]["a"].size == 2
    with pytest.raises(FileNotFoundError):
        store.load_arrays(tmp_path / "nothing")


def test_run_lock_exclusive(tmp_path):
    with store.run_lock(tmp_path):
        with pytest.raises(RuntimeError):
            with store.run_lock(tmp_path):
                pass
    assert not (tmp_path / ".lock").exists()


def test_state_round_trip(tmp_path):
    cfg = C.validate(SMALL)
    p = C.build_problem(cfg)
    s = C.iteration_samples(cfg, p)
    state = solve(p, s, LatinConfig(eps_u=1e-4))
    store.save_state(tmp_path / "st", state, cfg)
    cfg2, back = store.load_state(tmp_path / "st")
    assert cfg2 == cfg
    for name in ("lam", "g", "d", "stress", "eps_p", "beta"):
        assert np.array_equal(getattr(back, name), getattr(state, name))
    assert back.log == state.log and back.status == state.status
    assert np.array_equal(back.samples.values, s.values)
