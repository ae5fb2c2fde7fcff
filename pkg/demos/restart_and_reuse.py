"""
Two ways of getting more out of one solve.

    python demos/restart_and_reuse.py

Restart: a state solved to a loose tolerance is saved, reloaded and continued
to a tight one. The saved triplets come back unchanged and new ones are added.

Reuse: spatial modes computed for a wide interval of yield stresses are
applied, through the update stage alone, to a narrower interval.
"""
import tempfile
import warnings
from pathlib import Path

import numpy as np

from stolatin import config as C
from stolatin import store
from stolatin.latin import LatinConfig, solve
from stolatin.mcs import run_mcs
from stolatin.post import l2_error
from stolatin.update import update_stage

warnings.simplefilter("ignore", RuntimeWarning)

cfg = C.validate({"load": {"traction": [0.0, 40.0, 0.0]}})
p = C.build_problem(cfg)
s1 = C.iteration_samples(cfg, p)

coarse = solve(p, s1, LatinConfig(eps_u=1e-4))
with tempfile.TemporaryDirectory() as tmp:
    path = Path(tmp) / "state"
    store.save_state(path, coarse, cfg)
    _, loaded = store.load_state(path)
    fine = solve(loaded.problem, loaded.samples, LatinConfig(eps_u=1e-10), state=loaded)
k = coarse.k
same = all(np.array_equal(getattr(fine, n)[:k], getattr(coarse, n)) for n in ("lam", "g", "d"))
print(f"restart: {k} -> {fine.k} triplets, saved triplets unchanged: {same}, "
      f"indicator {fine.log[-1]['indicator']:.1e}")

wide = C.validate({"yield_stress": {"kind": "interval", "low": 200.0, "high": 290.0}})
pw = C.build_problem(wide)
basis = solve(pw, C.iteration_samples(wide, pw)).d
narrow = C.validate({"yield_stress": {"kind": "interval", "low": 230.0, "high": 260.0}, "n_s2": 30})
pn = C.build_problem(narrow)
s = C.update_samples(narrow, pn)
err = l2_error(run_mcs(pn, s).watch[:, :, 0], update_stage(pn, basis, s).displacement(pn.watch_dofs)[:, :, 0])
print(f"reuse: {len(basis)} modes from [200, 290] MPa on [230, 260] MPa samples, "
      f"L2 median {np.median(err):.2e}, max {err.max():.2e}")
