"""Command-line batch driver: solve, update, mcs, compare, restart, kl-info."""
from __future__ import annotations

import argparse
import csv
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import config as cfgmod
from . import latin, mcs, post, store, update
from .errors import ConfigError, ConvergenceError, IntegrityError

log = logging.getLogger("stolatin")

OK_STATUS = ("converged", "exact", "zero-load", "stagnated")


def _config(args):
    if not args.config:
        raise ConfigError("--config is required for this command")
    cfg = cfgmod.load_config(args.config)
    if args.seed is not None:
        cfg["seed"] = args.seed
    return cfgmod.validate(cfg)


def _out(args, cfg, default):
    return Path(args.out) if args.out else Path(cfg["output_dir"]) / default


def _latin_config(cfg):
    t = cfg["tolerances"]
    return latin.LatinConfig(eps_d=t["eps_d"], eps_u=t["eps_u"], eps_g=t["eps_g"],
                             max_terms=cfg["max_terms"], max_inner=cfg["max_inner"])


def write_convergence_csv(path, state):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["k", "eps_u", "contribution", "indicator", "inner_iterations", "newton_iterations"])
        for r in state.log:
            w.writerow([r["k"], repr(r["eps_u"]), repr(r["contribution"]), repr(r["indicator"]),
                        r["inner"], r["newton"]])


def _finish_state(out, state, cfg):
    with store.run_lock(out):
        store.save_state(out / "state", state, cfg)
        write_convergence_csv(out / "convergence.csv", state)
    print(f"{state.status}: {state.k} triplets, {state.global_solves} global solves -> {out}")
    return 0 if state.status in OK_STATUS else 3


def cmd_solve(args):
    cfg = _config(args)
    problem = cfgmod.build_problem(cfg)
    samples = cfgmod.iteration_samples(cfg, problem)
    t0 = time.perf_counter()
    state = latin.solve(problem, samples, _latin_config(cfg))
    log.info("solve took %.1f s", time.perf_counter() - t0)
    return _finish_state(_out(args, cfg, "solve"), state, cfg)


def cmd_restart(args):
    if not args.state:
        raise ConfigError("--state is required")
    cfg, state = store.load_state(args.state)
    if args.eps_u is not None:
        cfg["tolerances"]["eps_u"] = args.eps_u
    if args.max_terms is not None:
        cfg["max_terms"] = args.max_terms
    cfg = cfgmod.validate(cfg)
    lc = _latin_config(cfg)
    out = Path(args.out) if args.out else Path(args.state).parent
    done = state.status == "converged" and state.log and state.log[-1]["indicator"] <= lc.eps_u
    if done or state.status in ("exact", "zero-load"):
        print("already within the requested tolerance; nothing to do")
        if args.out and out.resolve() != Path(args.state).parent.resolve():
            return _finish_state(out, state, cfg)
        return 0
    state = latin.solve(state.problem, state.samples, lc, state=state)
    return _finish_state(out, state, cfg)


def cmd_update(args):
    if not args.state:
        raise ConfigError("--state is required")
    scfg, state = store.load_state(args.state)
    cfg = _config(args) if args.config else scfg
    if args.n_s2 is not None:
        if args.n_s2 < 1:
            raise ConfigError("n_s2 must be a positive integer")
        cfg["n_s2"] = args.n_s2
    problem = cfgmod.build_problem(cfg)
    if problem.mesh.n_dofs != state.d.shape[1]:
        raise ConfigError("configuration mesh does not match the stored basis")
    samples = cfgmod.update_samples(cfg, problem)
    t0 = time.perf_counter()
    red = update.update_stage(problem, state.d, samples, tol=cfg["tolerances"]["eps_nr"],
                              threads=args.threads)
    log.info("update took %.1f s", time.perf_counter() - t0)
    out = _out(args, cfg, "update")
    with store.run_lock(out):
        store.save_reduced(out / "reduced", red, samples, problem.watch_dofs)
        w = red.displacement(problem.watch_dofs)
        post.write_histories_csv(
            out / "summary.csv", problem.time.times,
            np.concatenate([w.mean(axis=0).T, w.std(axis=0).T]),
            [f"mean_dof{d}" for d in problem.watch_dofs] + [f"std_dof{d}" for d in problem.watch_dofs],
        )
    print(f"updated {samples.n} samples ({int((~red.converged).sum())} flagged) -> {out}")
    return 0


def cmd_mcs(args):
    cfg = _config(args)
    problem = cfgmod.build_problem(cfg)
    samples = cfgmod.update_samples(cfg, problem)
    t0 = time.perf_counter()
    ens = mcs.run_mcs(problem, samples, tol=cfg["tolerances"]["eps_nr"], threads=args.threads)
    dt = time.perf_counter() - t0
    out = _out(args, cfg, "mcs")
    with store.run_lock(out):
        store.save_ensemble(out / "ensemble", ens, samples)
    print(f"{samples.n} Newton samples in {dt:.1f} s -> {out}")
    return 0


def _histories(path):
    """Watch histories from either a reduced solution or an ensemble."""
    return store.load_arrays(Path(path), ("reduced-solution", "ensemble"))


def cmd_compare(args):
    if not args.state or not args.ensemble:
        raise ConfigError("--state (reduced solution) and --ensemble are required")
    rmeta, red = _histories(args.state)
    emeta, ens = _histories(args.ensemble)
    a, b = ens["watch"], red["watch"]
    if a.shape != b.shape or rmeta["watch_dofs"] != emeta["watch_dofs"]:
        raise ConfigError("reduced solution and ensemble are on different grids")
    if not np.array_equal(red["samples"], ens["samples"]):
        raise ConfigError("reduced solution and ensemble use different samples")
    out = Path(args.out) if args.out else Path(args.state).parent
    out.mkdir(parents=True, exist_ok=True)
    errs = post.l2_error(np.moveaxis(a, 1, -1), np.moveaxis(b, 1, -1))  # (n_s, n_watch)
    with open(out / "errors.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["sample", *[f"l2_dof{d}" for d in rmeta["watch_dofs"]]])
        for s, row in enumerate(errs):
            w.writerow([s, *(repr(float(e)) for e in row)])
    steps = args.steps if args.steps else [int(np.argmax(np.abs(a[:, :, 0]).mean(axis=0)))]
    if a.shape[0] >= 30:
        for i in steps:
            if not 0 <= i < a.shape[1]:
                raise ConfigError(f"step {i} out of range")
            ref, cand = a[:, i, 0], b[:, i, 0]
            if np.ptp(ref) > 0 and np.ptp(cand) > 0:
                p_ref = post.pdf_estimate(ref)
                p_cand = post.pdf_estimate(cand, p_ref.grid)
                post.write_pdf_csv(out / f"pdf_step{i}.csv", p_ref.grid,
                                   [p_ref.density, p_cand.density], ["mcs", "reduced"])
    s = post.summarize(errs[:, 0])
    print(f"median {s['median']:.3e}  max {s['max']:.3e} -> {out / 'errors.csv'}")
    return 0


def cmd_kl_info(args):
    cfg = _config(args)
    problem = cfgmod.build_problem(cfg)
    for name, f in (("E", problem.material.youngs), ("sigma_Y", problem.material.yield_stress)):
        if f.eigenvalues is None:
            print(f"{name}: {f.m} variable(s), not a KL field")
            continue
        lam = f.eigenvalues
        errs = [lam[i] / lam[: i + 1].sum() for i in range(lam.size)]
        print(f"{name}: r = {lam.size}")
        for i, (l, e) in enumerate(zip(lam, errs), 1):
            print(f"  {i:3d}  kappa = {l:.6e}  truncation error = {e:.3e}")
        if args.out:
            store.save_arrays(Path(args.out) / f"kl_{name}", "kl-eigenpairs",
                              {"eigenvalues": lam, "modes": f.fields, "centroids": problem.mesh.centroids})
    print(f"stochastic dimension: {problem.material.dim}")
    return 0


COMMANDS = {
    "solve": cmd_solve, "update": cmd_update, "mcs": cmd_mcs,
    "compare": cmd_compare, "restart": cmd_restart, "kl-info": cmd_kl_info,
}


def build_parser():
    p = argparse.ArgumentParser(prog="stolatin", description=__doc__)
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", help="run configuration (JSON)")
    p.add_argument("--state", help="saved state or reduced-solution directory")
    p.add_argument("--ensemble", help="saved Monte Carlo ensemble directory (compare)")
    p.add_argument("--seed", type=int, help="override the configured seed")
    p.add_argument("--threads", type=int, default=1, help="worker threads for per-sample loops")
    p.add_argument("--out", help="output directory")
    p.add_argument("--eps-u", dest="eps_u", type=float, help="new outer tolerance (restart)")
    p.add_argument("--max-terms", dest="max_terms", type=int, help="new triplet cap (restart)")
    p.add_argument("--n-s2", dest="n_s2", type=int, help="update sample count (update)")
    p.add_argument("--steps", type=int, nargs="*", help="time steps for density estimates (compare)")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return 2
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    except IntegrityError as exc:
        print(f"integrity error: {exc}", file=sys.stderr)
        return 5
    except ConvergenceError as exc:
        print(f"convergence failure: {exc}", file=sys.stderr)
        return 6


if __name__ == "__main__":
    sys.exit(main())
