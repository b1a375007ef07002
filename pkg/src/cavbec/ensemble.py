"""Ensembles of conditioned trajectories and their unconditioned statistics."""

from __future__ import annotations

import logging
import multiprocessing
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .bogoliubov import BogoliubovBasis
from .core import SystemParams
from .dynamics import IntegratorConfig, TrajectoryRecord, build_coupling, integrate_batch
from .io import record_columns, write_csv, write_fields
from .observables import g1_jackknife
from .sampler import SamplerConfig, make_rng, sample_initial_field

log = logging.getLogger(__name__)

REDUCTIONS = ("mean_density", "mean_q1", "abs_q1_mean", "g1_series",
              "mode_population_means", "r_meas_mean")

#: Largest tolerated fraction of failed trajectories.
MAX_FAILURE_FRACTION = 0.05

WORKERS_ENV = "CAVBEC_WORKERS"


class EnsembleError(RuntimeError):
    pass


def default_workers() -> int:
    try:
        return max(1, int(os.environ.get(WORKERS_ENV, "1")))
    except ValueError:
        return 1


@dataclass(frozen=True)
class EnsembleConfig:
    """Ensemble size, seeding and scheduling.

    Trajectories are integrated in fixed batches of ``batch_size``
    consecutive indices; the results depend on ``batch_size`` but never on
    ``worker_count``.
    """

    n_trajectories: int = 1
    base_seed: int = 0
    worker_count: int = 1
    batch_size: int = 32
    reductions: tuple = REDUCTIONS
    probe_positions: tuple = (0.0, 3.0)
    persist_records: bool = False
    persist_snapshots: bool = False

    def __post_init__(self):
        if self.n_trajectories < 1:
            raise ValueError("n_trajectories must be >= 1")
        if self.worker_count < 1:
            raise ValueError("worker_count must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        bad = set(self.reductions) - set(REDUCTIONS)
        if bad:
            raise ValueError(f"unknown reductions {sorted(bad)}")
        if "g1_series" in self.reductions and len(self.probe_positions) != 2:
            raise ValueError("g1 needs exactly two probe positions")


def trajectory_seeds(base_seed: int, index: int) -> tuple[int, int]:
    """(sampler seed, Wiener seed) for trajectory ``index``, as 64-bit integers."""
    ss = np.random.SeedSequence(int(base_seed), spawn_key=(int(index),))
    a, b = ss.spawn(2)
    return int(a.generate_state(1, np.uint64)[0]), int(b.generate_state(1, np.uint64)[0])


@dataclass
class EnsembleStats:
    """Ensemble means with standard errors of the mean.

    Standard errors are NaN (and ``se_defined`` False) for a single sample.
    ``g1`` is the coherence between the two probe positions with a jackknife
    error.
    """

    times: np.ndarray
    snapshot_times: np.ndarray
    n_samples: int
    n_failed: int = 0
    mean_q1: Optional[np.ndarray] = None
    se_q1: Optional[np.ndarray] = None
    mean_abs_q1: Optional[np.ndarray] = None
    se_abs_q1: Optional[np.ndarray] = None
    mean_r_meas: Optional[np.ndarray] = None
    se_r_meas: Optional[np.ndarray] = None
    mean_norm: Optional[np.ndarray] = None
    se_norm: Optional[np.ndarray] = None
    mean_populations: Optional[np.ndarray] = None
    se_populations: Optional[np.ndarray] = None
    mean_density: Optional[np.ndarray] = None
    se_density: Optional[np.ndarray] = None
    g1: Optional[np.ndarray] = None
    se_g1: Optional[np.ndarray] = None
    probe_positions: tuple = ()
    seeds: list = field(default_factory=list)

    @property
    def se_defined(self) -> bool:
        return self.n_samples >= 2


# -- deterministic streaming reduction --------------------------------------


class _Moments:
    __slots__ = ("n", "mean", "m2")

    def __init__(self, n, mean, m2):
        self.n, self.mean, self.m2 = n, mean, m2


def _combine(a: _Moments, b: _Moments) -> _Moments:
    n = a.n + b.n
    mean, m2 = {}, {}
    for key in a.mean:
        d = b.mean[key] - a.mean[key]
        mean[key] = a.mean[key] + d * (b.n / n)
        m2[key] = a.m2[key] + b.m2[key] + d * d * (a.n * b.n / n)
    return _Moments(n, mean, m2)


class TreeReducer:
    """Pairwise (binary-counter) reduction of per-trajectory leaves.

    The tree shape depends only on the number of leaves pushed, so the result
    is bitwise reproducible for a fixed push order.
    """

    def __init__(self):
        self._stack: list[tuple[int, _Moments]] = []
        self.count = 0

    def push(self, values: dict):
        node = (0, _Moments(1, {k: np.asarray(v, dtype=float) for k, v in values.items()},
                            {k: np.zeros(np.shape(v)) for k, v in values.items()}))
        while self._stack and self._stack[-1][0] == node[0]:
            lvl, left = self._stack.pop()
            node = (lvl + 1, _combine(left, node[1]))
        self._stack.append(node)
        self.count += 1

    def result(self) -> Optional[_Moments]:
        if not self._stack:
            return None
        acc = self._stack[-1][1]
        for _, left in reversed(self._stack[:-1]):
            acc = _combine(left, acc)
        return acc


def _leaf(rec: TrajectoryRecord, reductions) -> dict:
    out = {"norm": rec.norm}
    if "mean_q1" in reductions or "abs_q1_mean" in reductions:
        out["q1"] = rec.q1
        out["abs_q1"] = np.abs(rec.q1)
    if "r_meas_mean" in reductions:
        out["r_meas"] = rec.r_meas
    if "mode_population_means" in reductions and rec.populations is not None:
        out["populations"] = rec.populations
    if "mean_density" in reductions and rec.snapshots is not None:
        out["density"] = rec.snapshots.real**2 + rec.snapshots.imag**2
    return out


def _stats_from(mom: Optional[_Moments], times, snap_times, probes, n_failed,
                probe_positions, seeds) -> EnsembleStats:
    if mom is None:
        raise EnsembleError("no successful trajectories to reduce")
    m = mom.n

    def se(key):
        if key not in mom.mean:
            return None
        if m < 2:
            return np.full_like(mom.mean[key], np.nan)
        return np.sqrt(mom.m2[key] / (m - 1) / m)

    def mean(key):
        return mom.mean.get(key)

    g1 = se_g1 = None
    if probes:
        arr = np.stack(probes)  # (M, n_obs, 2)
        if m >= 2:
            g1, se_g1 = g1_jackknife(arr[:, :, 0], arr[:, :, 1])
        else:
            g1 = np.ones(arr.shape[1])
            se_g1 = np.full(arr.shape[1], np.nan)
    return EnsembleStats(
        times=times, snapshot_times=snap_times, n_samples=m, n_failed=n_failed,
        mean_q1=mean("q1"), se_q1=se("q1"), mean_abs_q1=mean("abs_q1"), se_abs_q1=se("abs_q1"),
        mean_r_meas=mean("r_meas"), se_r_meas=se("r_meas"),
        mean_norm=mean("norm"), se_norm=se("norm"),
        mean_populations=mean("populations"), se_populations=se("populations"),
        mean_density=mean("density"), se_density=se("density"),
        g1=g1, se_g1=se_g1, probe_positions=tuple(probe_positions), seeds=seeds,
    )


def reduce(records: Sequence[TrajectoryRecord], reductions: Iterable[str] = REDUCTIONS,
           probe_positions: Sequence[float] = ()) -> EnsembleStats:
    """Means and standard errors over ``records`` in their given order.

    Failed records are skipped.  All records must share one time base.
    """
    records = list(records)
    if not records:
        raise ValueError("need at least one record")
    reductions = tuple(reductions)
    times, snap_times = records[0].times, records[0].snapshot_times
    tree = TreeReducer()
    probes = []
    n_failed = 0
    for rec in records:
        if rec.times.shape != times.shape or np.any(rec.times != times) \
                or rec.snapshot_times.shape != snap_times.shape or np.any(rec.snapshot_times != snap_times):
            raise ValueError("records have mismatched time bases")
        if rec.failed:
            n_failed += 1
            continue
        tree.push(_leaf(rec, reductions))
        if "g1_series" in reductions and rec.probes is not None:
            probes.append(rec.probes)
    return _stats_from(tree.result(), times, snap_times, probes, n_failed, probe_positions,
                       [(i, r.sampler_seed, r.wiener_seed) for i, r in enumerate(records)])


# -- running ------------------------------------------------------------------


def _run_batch(task):
    (start, stop, params, basis, sampler_cfg, integ_cfg, ens_cfg, keep_snaps) = task
    grid = basis.grid
    seeds = [trajectory_seeds(ens_cfg.base_seed, i) for i in range(start, stop)]
    fields = np.empty((stop - start, grid.n_points), complex)
    for j, (s_seed, _) in enumerate(seeds):
        fields[j] = sample_initial_field(basis, sampler_cfg, params.n_atoms, rng=make_rng(s_seed)).values
    coupling = build_coupling(params, grid)
    want_pops = "mode_population_means" in ens_cfg.reductions
    probes = ens_cfg.probe_positions if "g1_series" in ens_cfg.reductions else ()
    return integrate_batch(fields, params, coupling, integ_cfg, grid, [w for _, w in seeds],
                           basis=basis if want_pops else None, probe_positions=probes,
                           store_snapshots=keep_snaps, sampler_seeds=[s for s, _ in seeds])


def _write_record(out_dir: Path, index: int, rec: TrajectoryRecord, grid, snapshots: bool):
    write_csv(out_dir / f"traj_{index:05d}.csv", record_columns(rec))
    if snapshots and rec.snapshots is not None:
        write_fields(out_dir / f"traj_{index:05d}.fields", grid, rec.snapshot_times, rec.snapshots)


def run_ensemble(params: SystemParams, basis: BogoliubovBasis, sampler_cfg: SamplerConfig,
                 integ_cfg: IntegratorConfig, ens_cfg: EnsembleConfig,
                 out_dir: Optional[Path] = None, progress=None) -> EnsembleStats:
    """Run ``ens_cfg.n_trajectories`` trajectories and reduce them in index order.

    Trajectory i draws its initial field and its Wiener increments from
    seeds derived from (base_seed, i).  Failed trajectories are excluded
    with a warning; more than 5% failures raise EnsembleError.
    ``progress(done, total)`` is called after every batch.
    """
    n = ens_cfg.n_trajectories
    bounds = [(s, min(s + ens_cfg.batch_size, n)) for s in range(0, n, ens_cfg.batch_size)]
    keep_snaps = "mean_density" in ens_cfg.reductions or ens_cfg.persist_snapshots
    tasks = [(a, b, params, basis, sampler_cfg, integ_cfg, ens_cfg, keep_snaps) for a, b in bounds]
    if out_dir is not None and ens_cfg.persist_records:
        rec_dir = Path(out_dir) / "records"
        rec_dir.mkdir(parents=True, exist_ok=True)
    else:
        rec_dir = None

    tree = TreeReducer()
    probes, seeds = [], []
    n_failed = 0
    times = snap_times = None
    limit = int(np.floor(MAX_FAILURE_FRACTION * n))

    def consume(start, records):
        nonlocal n_failed, times, snap_times
        for j, rec in enumerate(records):
            idx = start + j
            seeds.append((idx, rec.sampler_seed, rec.wiener_seed))
            if times is None:
                times, snap_times = rec.times, rec.snapshot_times
            if rec_dir is not None:
                _write_record(rec_dir, idx, rec, basis.grid, ens_cfg.persist_snapshots)
            if rec.failed:
                n_failed += 1
                log.warning("trajectory %d excluded: %s", idx, rec.message)
                if n_failed > limit:
                    raise EnsembleError(f"{n_failed} of {n} trajectories failed (limit {limit})")
                continue
            tree.push(_leaf(rec, ens_cfg.reductions))
            if rec.probes is not None:
                probes.append(rec.probes)

    done = 0
    if ens_cfg.worker_count == 1 or len(tasks) == 1:
        for task in tasks:
            consume(task[0], _run_batch(task))
            done += task[1] - task[0]
            if progress:
                progress(done, n)
    else:
        ctx = multiprocessing.get_context("spawn")
        with ProcessPoolExecutor(max_workers=ens_cfg.worker_count, mp_context=ctx) as pool:
            # map yields in submission order, which fixes the reduction order
            for task, records in zip(tasks, pool.map(_run_batch, tasks)):
                consume(task[0], records)
                done += task[1] - task[0]
                if progress:
                    progress(done, n)
    if n_failed:
        log.warning("%d of %d trajectories failed and were excluded", n_failed, n)
    return _stats_from(tree.result(), times, snap_times, probes, n_failed,
                       ens_cfg.probe_positions, seeds)
