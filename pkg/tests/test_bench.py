import json

import numpy as np
import pytest

from revsteer import bench
from revsteer.bench import (
    ExperimentConfig,
    MetricsReport,
    bridge_config,
    mse,
    run_experiment,
    sweep_dt,
    sweep_sigma,
    u_norm,
    wrap_angle,
)
from revsteer.errors import InvalidArgumentError
from revsteer.sde_sim import TimeGrid, TrajectoryBatch


def _batch(terminal, controls=None, grid=TimeGrid(1.0, 0.5)):
    terminal = np.atleast_2d(terminal)
    states = np.zeros((terminal.shape[0], grid.steps + 1, terminal.shape[1]))
    states[:, -1] = terminal
    return TrajectoryBatch(grid, states, controls)


def test_mse_examples():
    assert mse(_batch([[2.0, 2.0], [2.0, 2.0]]), [2.0, 2.0]) == 0.0
    assert mse(_batch([[2.1, 2.0]]), [2.0, 2.0]) == pytest.approx(0.01)


def test_wrapped_mse():
    b = _batch([[2 * np.pi + 0.1, 0.0], [-np.pi, 0.0]])
    assert mse(b, [0.0, 0.0]) == pytest.approx(((2 * np.pi + 0.1) ** 2 + np.pi**2) / 2)
    assert mse(b, [0.0, 0.0], angle_index=0) == pytest.approx((0.01 + np.pi**2) / 2)
    np.testing.assert_allclose(wrap_angle([np.pi, -np.pi, 3 * np.pi, 0.5]), [np.pi, np.pi, np.pi, 0.5])


def test_u_norm_examples():
    grid = TimeGrid(1.0, 0.01)
    zero = _batch([[0.0, 0.0]], np.zeros((1, 100, 2)), grid)
    assert u_norm(zero) == 0.0
    const = TrajectoryBatch(grid, np.zeros((3, 101, 2)), np.full((3, 100, 2), 2.0))
    assert u_norm(const) == pytest.approx(8.0)
    with pytest.raises(InvalidArgumentError):
        u_norm(_batch([[0.0, 0.0]]))


def test_config_validation():
    with pytest.raises(InvalidArgumentError):
        bridge_config(controller="magic")
    with pytest.raises(InvalidArgumentError):
        bridge_config(seeds=[])


def test_open_loop_bridge_mse():
    cfg = bridge_config(controller="open-loop", dt=0.01, N=5000, seeds=[0])
    rep, batches = run_experiment(cfg, keep_batches=True)
    err = np.sum((batches[0].terminal - 2.0) ** 2, axis=1)
    se = err.std(ddof=1) / np.sqrt(err.size)
    assert abs(rep.mse[0] - 0.18) < 3 * se
    assert rep.unorm[0] == pytest.approx(8.0)


def test_exact_bridge_matches_predicted_error():
    cfg = bridge_config(controller="exact-linear", sigma=0.1, dt=0.002, N=2000, seeds=[0, 1],
                        det_input={"kind": "zero"})
    rep, batches = run_experiment(cfg, keep_batches=True)
    err = np.concatenate([np.sum((b.terminal - 2.0) ** 2, axis=1) for b in batches])
    se = err.std(ddof=1) / np.sqrt(err.size)
    assert abs(err.mean() - 0.098) < 3 * se


def test_analytic_bridge_agrees_with_exact_linear():
    kw = dict(sigma=0.1, dt=0.01, N=300, seeds=[4])
    a, _ = run_experiment(bridge_config(controller="analytic-bridge", **kw))
    b, _ = run_experiment(bridge_config(controller="exact-linear", **kw))
    assert a.mse[0] == pytest.approx(b.mse[0], rel=1e-9)
    assert a.unorm[0] == pytest.approx(b.unorm[0], rel=1e-9)


def test_analytic_bridge_requires_bridge_system():
    cfg = bridge_config(controller="analytic-bridge", system={"name": "pendulum", "params": {}, "epsilon": 0.3},
                        x0=[np.pi, 0.0], x_f=[0.0, 0.0], det_input={"kind": "zero"}, seeds=[0], N=2)
    with pytest.raises(InvalidArgumentError):
        run_experiment(cfg)


def test_unorm_decreases_with_sigma_on_matched_seeds():
    lo, _ = run_experiment(bridge_config(controller="exact-linear", sigma=0.02, N=500, seeds=[0, 1]))
    hi, _ = run_experiment(bridge_config(controller="exact-linear", sigma=0.3, N=500, seeds=[0, 1]))
    assert lo.unorm_mean > hi.unorm_mean


def test_report_statistics_and_determinism(tmp_path):
    cfg = bridge_config(controller="exact-linear", sigma=0.1, dt=0.02, N=200, seeds=[0, 1, 2])
    a, _ = run_experiment(cfg, out_dir=tmp_path)
    b, _ = run_experiment(cfg)
    assert a.mse == b.mse and a.unorm == b.unorm
    s = a.summary()
    for key in ("mse", "unorm"):
        assert s[key]["min"] <= s[key]["mean"] <= s[key]["max"]
    a.save(tmp_path / "r.json")
    data = json.loads((tmp_path / "r.json").read_text())
    assert data["per_seed"]["mse"] == a.mse
    assert data["config"]["sigma"] == 0.1
    assert sorted(p.name for p in tmp_path.glob("trajectories_seed*.csv")) == [
        "trajectories_seed0.csv", "trajectories_seed1.csv", "trajectories_seed2.csv"]


def test_evaluation_noise_disjoint_from_training():
    # synthesis with seed s uses NoiseSource(s); rollouts use the offset stream
    assert bench.EVAL_SEED_OFFSET >= 2**32


def test_sweeps_are_resumable(tmp_path, monkeypatch):
    out = tmp_path / "sweep.jsonl"
    cfg = bridge_config(dt=0.02, N=100, seeds=[0, 1])
    rows = sweep_sigma(cfg, [0.05, 0.2], out_path=out)
    assert len(rows) == 4  # two sigmas x (u, u = 0)
    assert len(out.read_text().splitlines()) == 4

    def boom(*a, **k):
        raise AssertionError("cell recomputed")

    monkeypatch.setattr(bench, "run_experiment", boom)
    again = sweep_sigma(cfg, [0.05, 0.2], out_path=out)
    assert [r["config_hash"] for r in again] == [r["config_hash"] for r in rows]


def test_sweep_dt_rows():
    cfg = bridge_config(N=100, seeds=[0])
    rows = sweep_dt(cfg, [0.05, 0.025], kinds=("exact-linear", "open-loop"))
    assert [(r["dt"], r["controller"]) for r in rows] == [
        (0.05, "exact-linear"), (0.05, "open-loop"), (0.025, "exact-linear"), (0.025, "open-loop")]
    for r in rows:
        assert r["mse_min"] <= r["mse_mean"] <= r["mse_max"]


def test_sweep_dt_snaps_to_horizon():
    assert bench.snap_dt(1.0, 0.032) == 1.0 / 31
    assert bench.snap_dt(1.0, 0.004) == 0.004
    assert bench.snap_dt(1.0, 5.0) == 1.0
    rows = sweep_dt(bridge_config(N=50, seeds=[0]), [0.032], kinds=("exact-linear",))
    assert rows[0]["dt"] == 1.0 / 31 and rows[0]["dt_requested"] == 0.032


def test_empty_sweep_rejected():
    with pytest.raises(InvalidArgumentError):
        sweep_dt(bridge_config(), [])
    with pytest.raises(InvalidArgumentError):
        sweep_sigma(bridge_config(), [])


def test_metrics_report_roundtrip_fields():
    r = MetricsReport([1.0, 3.0], [2.0, 2.0], 0.5, {"a": 1}, success=[1.0, 0.5])
    d = r.to_dict()
    assert d["summary"]["mse"] == {"mean": 2.0, "min": 1.0, "max": 3.0}
    assert d["summary"]["success"]["min"] == 0.5


def test_digest_changes_with_config():
    a = bridge_config()
    assert a.digest() == bridge_config().digest()
    assert a.digest() != bridge_config(sigma=0.2).digest()
    assert isinstance(ExperimentConfig(**a.to_dict()), ExperimentConfig)
