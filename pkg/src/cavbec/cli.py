"""Command-line front end.

Every subcommand writes its data files plus a ``manifest.json`` into the
output directory.  Exit status: 0 success, 1 runtime failure, 2 bad
configuration.  Logging goes to stderr.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .bogoliubov import ResolutionError, optimal_wavenumber, overlap_scan, solve_bdg
from .config import ConfigError, RunConfig, load_config, parse_config
from .core import GridError, ParameterError, diagnostics, eval_cavity_mode, eval_pump_profile
from .dynamics import IntegrationError, build_coupling, run_trajectory
from .ensemble import EnsembleError, run_ensemble, trajectory_seeds
from .groundstate import ConvergenceError, solve_ground_state, thomas_fermi_mu
from .io import record_columns, stats_columns, write_csv, write_fields, write_manifest
from .observables import condensate_overlap, phonon_signal
from .sampler import make_rng, sample_initial_field, thermal_occupation

log = logging.getLogger("cavbec")

FIGURES = ("fig1", "fig2", "fig3", "fig4", "fig5", "fig6", "fig7")


class Job:
    """Output directory plus the manifest that describes it."""

    def __init__(self, command: str, cfg: Optional[RunConfig], out_dir: Path):
        self.out_dir = Path(out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        doc = cfg.as_dict() if cfg is not None else {}
        # scheduling does not affect results, so it stays out of the manifest
        doc.pop("worker_count", None)
        self.manifest = {"command": command, "config": doc, "package_version": __version__,
                         "outputs": [], "partial": True}

    def add(self, path: Path):
        self.manifest["outputs"].append(Path(path).name if Path(path).parent == self.out_dir
                                        else str(Path(path).relative_to(self.out_dir)))

    def finish(self, partial: bool = False):
        self.manifest["partial"] = partial
        self.manifest["outputs"] = sorted(set(self.manifest["outputs"]))
        write_manifest(self.out_dir / "manifest.json", self.manifest)


def _setup(cfg: RunConfig, n_modes: Optional[int] = None):
    """Grid, ground state, modes and parameters with k resolved."""
    grid = cfg.grid()
    k0 = 1.0 if cfg.k_mode is not None else cfg["k"]
    params = cfg.params(k0)
    gs = solve_ground_state(params, grid)
    nm = n_modes or cfg["n_modes"]
    if cfg.k_mode is not None:
        nm = max(nm, cfg.k_mode)
    basis = solve_bdg(gs, params, nm)
    if cfg.k_mode is not None:
        params = params.replace(cavity_wavenumber=optimal_wavenumber(basis, params, cfg.k_mode))
        log.info("wavenumber for mode %d: k = %.6f", cfg.k_mode, params.cavity_wavenumber)
    return grid, params, gs, basis


def _resolved(params, gs) -> dict:
    return {"k": params.cavity_wavenumber, "mu": gs.mu, "ground_state_residual": gs.residual}


# -- subcommands ------------------------------------------------------------------


def cmd_ground_state(cfg: RunConfig, job: Job, args):
    grid = cfg.grid()
    params = cfg.params(1.0 if cfg.k_mode is not None else None)
    gs = solve_ground_state(params, grid)
    d = diagnostics(params, gs.psi0, grid)
    job.add(write_csv(job.out_dir / "ground_state.csv", {"x": grid.x, "psi0": gs.psi0}))
    summary = {"mu": gs.mu, "energy_per_atom": gs.energy, "residual": gs.residual,
               "iterations": gs.iterations, "thomas_fermi_mu": thomas_fermi_mu(params.interaction),
               "tonks_gamma": d.tonks_gamma, "healing_atoms": d.healing_atoms,
               "weak_fluctuations": d.weak_fluctuations}
    job.manifest["results"] = summary
    log.info("mu = %.10g, residual %.2e", gs.mu, gs.residual)


def cmd_modes(cfg: RunConfig, job: Job, args):
    grid, params, gs, basis = _setup(cfg)
    j = np.arange(1, basis.n_modes + 1)
    job.add(write_csv(job.out_dir / "modes.csv", {"j": j, "eps": basis.eps, "parity": basis.parity}))
    cols = {"x": grid.x}
    for i in range(basis.n_modes):
        cols[f"u_{i + 1}"] = basis.u[i]
        cols[f"v_{i + 1}"] = basis.v[i]
    job.add(write_csv(job.out_dir / "mode_functions.csv", cols))
    job.manifest["resolved"] = _resolved(params, gs)


def cmd_sample(cfg: RunConfig, job: Job, args):
    grid, params, gs, basis = _setup(cfg)
    s_seed, _ = trajectory_seeds(cfg["seed"], 0)
    psi = sample_initial_field(basis, cfg.sampler(), params.n_atoms, rng=make_rng(s_seed))
    job.add(write_fields(job.out_dir / "initial.fields", grid, [0.0], psi.values[None, :]))
    job.manifest["resolved"] = _resolved(params, gs)
    job.manifest["seeds"] = {"sampler": s_seed}


def cmd_simulate(cfg: RunConfig, job: Job, args):
    grid, params, gs, basis = _setup(cfg)
    s_seed, w_seed = trajectory_seeds(cfg["seed"], 0)
    job.manifest["resolved"] = _resolved(params, gs)
    job.manifest["seeds"] = {"sampler": s_seed, "wiener": w_seed}
    psi = sample_initial_field(basis, cfg.sampler(), params.n_atoms, rng=make_rng(s_seed))
    integ = dataclasses.replace(cfg.integrator(), rng_seed=w_seed)
    rec = run_trajectory(psi, params, build_coupling(params, grid), integ,
                         basis=basis, probe_positions=(), sampler_seed=s_seed)
    job.add(write_csv(job.out_dir / "observables.csv", record_columns(rec)))
    job.add(write_fields(job.out_dir / "snapshots.fields", grid, rec.snapshot_times, rec.snapshots))
    job.manifest["results"] = {"norm_drift": rec.norm_drift, "failed": rec.failed,
                               "max_adiabaticity": rec.max_adiabaticity}
    if rec.failed:
        raise IntegrationError(rec.message)


def _ensemble_outputs(job: Job, out_dir: Path, stats, grid):
    job.add(write_csv(out_dir / "stats.csv", stats_columns(stats)))
    if stats.mean_density is not None:
        job.add(write_fields(out_dir / "mean_density.fields", grid, stats.snapshot_times,
                             stats.mean_density, dtype="f64-le"))
        job.add(write_fields(out_dir / "se_density.fields", grid, stats.snapshot_times,
                             np.nan_to_num(stats.se_density, nan=0.0), dtype="f64-le"))
    job.add(write_csv(out_dir / "seeds.csv", {
        "index": [s[0] for s in stats.seeds],
        "sampler_seed": [s[1] for s in stats.seeds],
        "wiener_seed": [s[2] for s in stats.seeds],
    }))


def cmd_ensemble(cfg: RunConfig, job: Job, args, out_dir: Optional[Path] = None):
    out_dir = Path(out_dir or job.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    grid, params, gs, basis = _setup(cfg)
    ens = cfg.ensemble(getattr(args, "workers", None))

    def progress(done, total):
        log.info("%d/%d trajectories", done, total)

    stats = run_ensemble(params, basis, cfg.sampler(), cfg.integrator(), ens, out_dir=out_dir,
                         progress=progress)
    if ens.persist_records:
        for p in sorted((out_dir / "records").iterdir()):
            job.add(p)
    _ensemble_outputs(job, out_dir, stats, grid)
    res = job.manifest.setdefault("results", {})
    key = str(out_dir.relative_to(job.out_dir)) if out_dir != job.out_dir else "ensemble"
    res[key] = {"n_samples": stats.n_samples, "n_failed": stats.n_failed,
                "resolved": _resolved(params, gs)}
    return stats


def cmd_overlap_scan(cfg: RunConfig, job: Job, args):
    grid, params, gs, basis = _setup(cfg, n_modes=getattr(args, "modes", None))
    ks = np.linspace(args.k_min, args.k_max, args.n_k)
    ov = overlap_scan(basis, params, ks, detection=True)
    h = eval_pump_profile(grid, params)
    cols = {"k": ks}
    for j in range(basis.n_modes):
        cols[f"O_{j + 1}"] = ov[:, j]
    cols["condensate"] = [condensate_overlap(basis, eval_cavity_mode(grid, params, k), h) for k in ks]
    job.add(write_csv(job.out_dir / "overlap_scan.csv", cols))
    job.manifest["resolved"] = {"mu": gs.mu}


def cmd_phonon_signal(cfg: RunConfig, job: Job, args):
    grid, params, gs, basis = _setup(cfg)
    if args.occupations:
        occ = np.array([float(v) for v in args.occupations.split(",")])
        if occ.size < basis.n_modes:
            occ = np.concatenate([occ, np.zeros(basis.n_modes - occ.size)])
    else:
        occ = np.atleast_1d(thermal_occupation(basis.eps, params.temperature))
    sig = phonon_signal(basis, params, occ, n0=cfg["condensate_number"])
    job.add(write_csv(job.out_dir / "phonon_signal.csv", {
        "j": np.arange(1, basis.n_modes + 1), "eps": basis.eps, "occupation": sig.occupations,
        "overlap": sig.overlaps, "rate": sig.rate_contributions,
        "depletion_u": sig.depletion_u, "depletion_v": sig.depletion_v,
    }))
    job.manifest["resolved"] = _resolved(params, gs)
    job.manifest["results"] = {"counting_rate": sig.counting_rate,
                               "condensate_overlap": sig.condensate_overlap,
                               "coherent_amplitude": sig.coherent_amplitude,
                               "fluctuation_power": sig.fluctuation_power}
    log.info("photon counting rate %.6g", sig.counting_rate)


# -- figure recipes ------------------------------------------------------------------

DESK = {"n_points": 256, "half_width": 10.0, "dt": 1e-3}
FULL = {"n_points": 1024, "half_width": 16.0, "dt": 1e-4}
BASE = {"C": 64.0, "gamma_m": 0.042, "N": 1000.0}


def recipe(fig: str, paper_scale: bool = False) -> list[tuple[str, dict]]:
    """Configuration documents (with sub-directory names) for one figure."""
    scale = FULL if paper_scale else DESK
    stride = max(1, int(round(0.01 / scale["dt"])))
    common = dict(BASE, **scale, observable_stride=stride, snapshot_stride=10 * stride)
    m = (lambda full, desk: full if paper_scale else desk)
    if fig == "fig1":
        return [("", dict(common, k="mode:1", t_final=30.0, n_trajectories=4,
                          persist_records=True, persist_snapshots=True, batch_size=4))]
    if fig in ("fig2", "fig3"):
        return [("", dict(common, k="mode:1", t_final=m(30.0, 20.0), n_trajectories=m(400, 100)))]
    if fig == "fig4":
        return [(f"h0x{f}", dict(common, k="mode:1", gamma_m=0.042 * f * f, t_final=5.0,
                                 n_trajectories=m(200, 50),
                                 reductions=["g1_series", "mean_q1", "abs_q1_mean"]))
                for f in (1, 4, 6)]
    if fig == "fig5":
        return [("", dict(common, k="mode:2", cavity_parity="cosine", t_final=m(30.0, 20.0),
                          n_trajectories=m(400, 100)))]
    if fig == "fig6":
        return [("", dict(common, k=1.03, t_final=m(30.0, 20.0), n_trajectories=m(400, 100)))]
    if fig == "fig7":
        return [("", dict(common, k=1.0, n_modes=8))]
    raise ValueError(f"unknown figure {fig!r}")


def cmd_reproduce(args) -> int:
    out = Path(args.output_dir or f"out/{args.figure}")
    docs = recipe(args.figure, args.paper_scale)
    job = Job(f"reproduce {args.figure}", parse_config(docs[0][1]), out)
    job.manifest["recipe"] = {"figure": args.figure, "paper_scale": args.paper_scale,
                              "runs": {name or ".": doc for name, doc in docs}}
    try:
        for name, doc in docs:
            cfg = parse_config(doc)
            if args.figure == "fig7":
                ns = argparse.Namespace(k_min=0.05, k_max=4.0, n_k=400, modes=8)
                cmd_overlap_scan(cfg, job, ns)
            else:
                cmd_ensemble(cfg, job, args, out_dir=out / name if name else out)
    except KeyboardInterrupt:
        job.finish(partial=True)
        raise
    job.finish()
    return 0


COMMANDS = {
    "ground-state": cmd_ground_state,
    "modes": cmd_modes,
    "sample": cmd_sample,
    "simulate": cmd_simulate,
    "ensemble": cmd_ensemble,
    "overlap-scan": cmd_overlap_scan,
    "phonon-signal": cmd_phonon_signal,
}


def _parse_set(items) -> dict:
    out = {}
    for item in items or []:
        if "=" not in item:
            raise ConfigError([f"--set {item!r}: expected KEY=VALUE"])
        key, val = item.split("=", 1)
        try:
            out[key] = json.loads(val)
        except json.JSONDecodeError:
            out[key] = val
    return out


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="cavbec", description="Continuously monitored BEC in an optical cavity.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    verb = ap.add_mutually_exclusive_group()
    verb.add_argument("-q", "--quiet", action="store_true", help="only report errors")
    verb.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("-c", "--config", help="JSON configuration file")
        p.add_argument("-s", "--set", action="append", metavar="KEY=VALUE",
                       help="override a configuration key (value parsed as JSON)")
        p.add_argument("-o", "--output-dir", help="output directory (default: config output_dir)")

    for name in COMMANDS:
        p = sub.add_parser(name)
        common(p)
        if name == "ensemble":
            p.add_argument("-w", "--workers", type=int, help="worker processes (default $CAVBEC_WORKERS or 1)")
        if name == "overlap-scan":
            p.add_argument("--k-min", type=float, default=0.05)
            p.add_argument("--k-max", type=float, default=4.0)
            p.add_argument("--n-k", type=int, default=400)
            p.add_argument("--modes", type=int, default=None, help="number of modes (default n_modes)")
        if name == "phonon-signal":
            p.add_argument("--occupations", help="comma-separated n_j (default: thermal at the configured temperature)")
    p = sub.add_parser("reproduce", help="run the canned recipe for one figure")
    p.add_argument("figure", choices=FIGURES)
    p.add_argument("--paper-scale", action="store_true", help="full grid, time step, run length and ensemble sizes")
    p.add_argument("-o", "--output-dir")
    p.add_argument("-w", "--workers", type=int)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.ERROR if args.quiet else logging.DEBUG if args.verbose else logging.INFO
    logging.basicConfig(level=level, stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")
    job = None
    try:
        if args.command == "reproduce":
            return cmd_reproduce(args)
        doc = {}
        if args.config:
            doc = load_config(args.config).as_dict()
        doc.update(_parse_set(args.set))
        cfg = parse_config(doc)
        job = Job(args.command, cfg, Path(args.output_dir or cfg["output_dir"]))
        COMMANDS[args.command](cfg, job, args)
        job.finish()
        return 0
    except ConfigError as exc:
        log.error("%s", exc)
        return 2
    except KeyboardInterrupt:
        if job is not None:
            job.finish(partial=True)
        log.error("interrupted")
        return 130
    except (ParameterError, GridError, ConvergenceError, ResolutionError, EnsembleError,
            IntegrationError, OSError, ValueError) as exc:
        if job is not None:
            job.finish(partial=True)
        log.error("%s", exc)
        return 1


if __name__ == "__main__":
    sys.exit(main())
