import logging
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cavbec import ensemble
from cavbec.dynamics import IntegratorConfig, TrajectoryRecord, WienerStream
from cavbec.ensemble import (EnsembleConfig, EnsembleError, TreeReducer, reduce, run_ensemble,
                             trajectory_seeds)
from cavbec.sampler import SamplerConfig


def _record(q1, extra=0.0, failed=False):
    q1 = np.asarray(q1, dtype=float)
    t = np.arange(q1.size) * 0.1
    return TrajectoryRecord(times=t, q1=q1, r_meas=q1**2 + extra, norm=np.ones_like(q1),
                            snapshot_times=t[:1], snapshots=np.full((1, 4), 1.0 + extra, complex),
                            failed=failed)


def test_trajectory_seeds():
    seeds = [trajectory_seeds(7, i) for i in range(200)]
    flat = [s for pair in seeds for s in pair]
    assert len(set(flat)) == 400
    assert trajectory_seeds(7, 3) == seeds[3]
    assert trajectory_seeds(8, 3) != seeds[3]
    assert all(0 <= s < 2**64 for s in flat)


def test_wiener_streams_are_uncorrelated():
    a = WienerStream(trajectory_seeds(0, 0)[1], 1.0).take(10_000)
    b = WienerStream(trajectory_seeds(0, 1)[1], 1.0).take(10_000)
    s = WienerStream(trajectory_seeds(0, 0)[0], 1.0).take(10_000)
    for other in (b, s):
        assert abs(np.corrcoef(a, other)[0, 1]) < 3 / math.sqrt(10_000)


def test_identical_records_have_zero_error():
    stats = reduce([_record([0.1, 0.2, -0.3])] * 5)
    np.testing.assert_array_equal(stats.mean_q1, [0.1, 0.2, -0.3])
    np.testing.assert_array_equal(stats.se_q1, 0.0)
    np.testing.assert_array_equal(stats.se_density, 0.0)
    assert stats.n_samples == 5 and stats.se_defined


def test_opposite_records():
    stats = reduce([_record([0.0, 0.5]), _record([0.0, -0.5])])
    np.testing.assert_array_equal(stats.mean_q1, [0.0, 0.0])
    np.testing.assert_array_equal(stats.mean_abs_q1, [0.0, 0.5])


def test_single_record_errors_are_undefined():
    stats = reduce([_record([0.3, 0.4])])
    np.testing.assert_array_equal(stats.mean_q1, [0.3, 0.4])
    assert np.all(np.isnan(stats.se_q1)) and not stats.se_defined


def test_standard_error_scales_as_inverse_root_m(rng):
    se = []
    for m in (25, 100, 400):
        reps = [reduce([_record(rng.standard_normal(3)) for _ in range(m)]).se_q1.mean() for _ in range(20)]
        se.append(np.mean(reps))
    slope = np.polyfit(np.log([25, 100, 400]), np.log(se), 1)[0]
    assert slope == pytest.approx(-0.5, abs=0.05)
    assert se[-1] == pytest.approx(1 / 20, rel=0.05)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3), min_size=2, max_size=70))
def test_tree_reducer_matches_numpy(values):
    tree = TreeReducer()
    for v in values:
        tree.push({"x": np.array([v])})
    mom = tree.result()
    arr = np.array(values)
    assert mom.n == arr.size
    assert mom.mean["x"][0] == pytest.approx(arr.mean(), abs=1e-9 * (1 + np.abs(arr).max()))
    assert mom.m2["x"][0] == pytest.approx(np.sum((arr - arr.mean()) ** 2), rel=1e-9, abs=1e-6)


def test_reduce_validation():
    with pytest.raises(ValueError):
        reduce([])
    with pytest.raises(ValueError):
        reduce([_record([0.0, 1.0]), _record([0.0, 1.0, 2.0])])
    stats = reduce([_record([1.0]), _record([5.0], failed=True), _record([3.0])])
    assert stats.n_failed == 1 and stats.mean_q1[0] == 2.0
    with pytest.raises(EnsembleError):
        reduce([_record([1.0], failed=True)])


def _small(basis, params, gamma=0.042, n=6, batch=4, workers=1, fluct=True, **kw):
    return run_ensemble(params.replace(coupling_rate=gamma), basis,
                        SamplerConfig(fluctuations_enabled=fluct),
                        IntegratorConfig(dt=1e-3, t_final=0.2, observable_stride=20, snapshot_stride=100),
                        EnsembleConfig(n_trajectories=n, base_seed=3, worker_count=workers, batch_size=batch), **kw)


def test_unmonitored_pure_condensate_ensemble(basis64, params64):
    stats = _small(basis64, params64, gamma=0.0, fluct=False)
    np.testing.assert_array_equal(stats.se_q1, 0.0)
    assert np.max(np.abs(stats.mean_q1)) < 1e-14
    dens = stats.mean_density
    # every run is identical; the density moves only by the O(dt^2) splitting error
    assert np.max(np.abs(dens - dens[0])) < 1e-5 * dens.max()


def test_results_independent_of_worker_count(basis64, params64):
    a = _small(basis64, params64, workers=1)
    b = _small(basis64, params64, workers=2)
    for name in ("mean_q1", "se_q1", "mean_density", "se_density", "mean_populations", "g1", "se_g1"):
        np.testing.assert_array_equal(getattr(a, name), getattr(b, name))
    assert a.seeds == b.seeds


def test_persisted_records(basis64, params64, tmp_path):
    stats = run_ensemble(params64, basis64, SamplerConfig(),
                         IntegratorConfig(dt=1e-3, t_final=0.05, observable_stride=10),
                         EnsembleConfig(n_trajectories=3, persist_records=True, persist_snapshots=True),
                         out_dir=tmp_path)
    files = sorted(p.name for p in (tmp_path / "records").iterdir())
    assert files == [f"traj_{i:05d}.{ext}" for i in range(3) for ext in ("csv", "fields")]
    assert stats.n_samples == 3


@pytest.mark.parametrize("n_bad, raises", [(1, False), (3, True)])
def test_failure_policy(basis64, params64, monkeypatch, caplog, n_bad, raises):
    real = ensemble._run_batch

    def flaky(task):
        recs = real(task)
        for r in recs:
            if r.wiener_seed in bad:
                r.failed, r.message = True, "injected"
        return recs

    bad = {trajectory_seeds(3, i)[1] for i in range(n_bad)}
    monkeypatch.setattr(ensemble, "_run_batch", flaky)
    run = lambda: run_ensemble(params64, basis64, SamplerConfig(),
                               IntegratorConfig(dt=1e-3, t_final=0.01, observable_stride=10),
                               EnsembleConfig(n_trajectories=40, base_seed=3, batch_size=40))
    if raises:
        with pytest.raises(EnsembleError):
            run()
    else:
        with caplog.at_level(logging.WARNING):
            stats = run()
        assert stats.n_failed == 1 and stats.n_samples == 39
        assert "excluded" in caplog.text


def test_config_validation(monkeypatch):
    with pytest.raises(ValueError):
        EnsembleConfig(n_trajectories=0)
    monkeypatch.setenv(ensemble.WORKERS_ENV, "3")
    assert ensemble.default_workers() == 3
