"""
Walk through one stochastic elastoplastic run on a clamped box.

    python demos/walkthrough.py [--quick]

1. Build the problem: Gaussian Young's modulus and yield stress, two-cycle load.
2. Run the greedy solver on the iteration samples and show how the
   indicator falls as triplets are added.
3. Recompute the coefficients of fresh samples on the frozen spatial modes.
4. Compare both reduced answers with full Newton solves of the same samples.
"""
import argparse
import time
import warnings

import numpy as np

from stolatin import config as C
from stolatin.latin import LatinConfig, replay_coefficients, solve
from stolatin.mcs import run_mcs
from stolatin.post import l2_error, pdf_estimate
from stolatin.update import update_stage

ap = argparse.ArgumentParser()
ap.add_argument("--quick", action="store_true", help="smaller sample sets")
args = ap.parse_args()

cfg = C.validate({"n_s1": 20 if args.quick else 80, "n_s2": 30 if args.quick else 100})
p = C.build_problem(cfg)
print(f"mesh: {p.mesh.n_nodes} nodes, {p.mesh.n_elements} tetrahedra, {p.mesh.n_dofs} dofs")
print(f"random dimension {p.material.dim}, {p.time.n_t} time steps, peak traction {p.traction[1]} MPa")

s1, s2 = C.iteration_samples(cfg, p), C.update_samples(cfg, p)

t0 = time.perf_counter()
with warnings.catch_warnings():
    warnings.simplefilter("ignore", RuntimeWarning)
    state = solve(p, s1, LatinConfig(eps_u=1e-8))
print(f"\nLATIN on {s1.n} samples: {state.status} after {state.k} triplets, "
      f"{state.global_solves} global solves, {time.perf_counter() - t0:.1f}s")
for rec in state.log:
    print(f"  k={rec['k']:2d}  indicator={rec['indicator']:.2e}  inner={rec['inner']}")

t0 = time.perf_counter()
red = update_stage(p, state.d, s2)
print(f"\nupdate stage on {s2.n} new samples: {time.perf_counter() - t0:.1f}s")

t0 = time.perf_counter()
ref = run_mcs(p, s2)
print(f"Newton Monte Carlo on the same samples: {time.perf_counter() - t0:.1f}s")
yielded = np.mean(ref.iterations.max(axis=1) > 2)
print(f"{yielded:.0%} of the samples yield somewhere")

a = ref.watch[:, :, 0]
b = red.displacement(p.watch_dofs)[:, :, 0]
lam = replay_coefficients(p, state, s2)
c = np.einsum("ks,kt,k->st", lam, state.g, state.d[:, p.watch_dofs[0]])
e_up, e_plain = l2_error(a, b), l2_error(a, c)
print("\nL2 error of the corner displacement history against Newton:")
print(f"  frozen modes      median {np.median(e_plain):.2e}  max {e_plain.max():.2e}")
print(f"  with update stage median {np.median(e_up):.2e}  max {e_up.max():.2e}")

peak = int(np.argmax(p.time.multipliers))
pa = pdf_estimate(a[:, peak])
pb = pdf_estimate(b[:, peak], pa.grid)
print(f"\ndensity of the corner displacement at t={p.time.times[peak]:.2f}: "
      f"max difference {np.abs(pa.density - pb.density).max():.2e} on a peak of {pa.density.max():.2e}")
