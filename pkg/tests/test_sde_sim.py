import numpy as np
import pytest

from revsteer.dynamics import ControlAffineSystem, builtin_system, linear_system
from revsteer.errors import InvalidArgumentError, NumericalOverflowError
from revsteer.sde_sim import (
    NoiseSource,
    TimeGrid,
    TrajectoryBatch,
    euler_maruyama_step,
    input_schedule,
    read_trajectories_csv,
    simulate_auxiliary,
    simulate_controlled,
    worker_count,
    write_trajectories_csv,
)


def test_grid_steps_and_times():
    g = TimeGrid(1.0, 0.004)
    assert g.steps == 250
    assert g.times[0] == 0.0 and g.times[-1] == 1.0
    assert len(g.times) == 251


def test_grid_rejects_non_multiple():
    with pytest.raises(InvalidArgumentError):
        TimeGrid(1.0, 0.3)
    with pytest.raises(InvalidArgumentError):
        TimeGrid(1.0, 0.0)


def test_grid_zero_order_hold():
    g = TimeGrid(1.0, 0.1)
    assert g.index(0.0) == 0
    assert g.index(0.15) == 1
    assert g.index(0.3) == 3  # 0.3 / 0.1 is 2.9999999999999996 in floating point
    assert g.index(5.0) == 10


def test_input_schedule_shapes():
    g = TimeGrid(1.0, 0.25)
    np.testing.assert_array_equal(input_schedule(None, g, 2), np.zeros((4, 2)))
    np.testing.assert_array_equal(input_schedule([1.0, -1.0], g, 2), np.tile([1.0, -1.0], (4, 1)))
    with pytest.raises(InvalidArgumentError):
        input_schedule(np.zeros((3, 2)), g, 2)


def test_noise_streams_are_reproducible_and_distinct():
    a, b = NoiseSource(7), NoiseSource(7)
    np.testing.assert_array_equal(a.stream(3).standard_normal(5), b.stream(3).standard_normal(5))
    assert not np.allclose(a.stream(3).standard_normal(5), a.stream(4).standard_normal(5))
    assert not np.allclose(a.stream(3).standard_normal(5), a.initial_stream(3).standard_normal(5))
    assert not np.allclose(a.stream(3).standard_normal(5), NoiseSource(8).stream(3).standard_normal(5))


def test_path_independent_of_batch_size():
    sys = builtin_system("brownian2d")
    g = TimeGrid(1.0, 0.01)
    small = simulate_auxiliary(sys, g, 3, [1.0, 1.0], 0.2, None, NoiseSource(5))
    large = simulate_auxiliary(sys, g, 600, [1.0, 1.0], 0.2, None, NoiseSource(5))
    np.testing.assert_array_equal(small.states, large.states[:3])


def test_thread_count_does_not_change_results(monkeypatch):
    sys = builtin_system("pendulum")
    g = TimeGrid(1.0, 0.01)
    monkeypatch.setenv("REVSTEER_THREADS", "1")
    one = simulate_auxiliary(sys, g, 1100, [0.0, 0.0], 0.1, None, NoiseSource(2))
    monkeypatch.setenv("REVSTEER_THREADS", "4")
    four = simulate_auxiliary(sys, g, 1100, [0.0, 0.0], 0.1, None, NoiseSource(2))
    np.testing.assert_array_equal(one.states, four.states)


def test_worker_count_env(monkeypatch):
    monkeypatch.setenv("REVSTEER_THREADS", "3")
    assert worker_count() == 3
    monkeypatch.setenv("REVSTEER_THREADS", "0")
    assert worker_count() >= 1
    monkeypatch.setenv("REVSTEER_THREADS", "-1")
    with pytest.raises(InvalidArgumentError):
        worker_count()


def test_brownian_endpoint_is_sum_of_increments():
    # with A = 0, B = I the Euler scheme is exact: Z_T = z0 + T u + eps sum dW
    sys = builtin_system("brownian2d", epsilon=0.3)
    g = TimeGrid(1.0, 0.01)
    noise = NoiseSource(11)
    u = np.array([-2.0, 1.0])
    batch = simulate_auxiliary(sys, g, 4, [2.0, 2.0], 0.0, u, noise)
    dW = noise.wiener_increments(0, 4, g.steps, 2, g.dt)
    expected = np.array([2.0, 2.0]) + u + 0.3 * dW.sum(axis=1)
    np.testing.assert_allclose(batch.terminal, expected, atol=1e-12)


def test_auxiliary_terminal_moments():
    # Z_T ~ N(x_f + T u, (sigma^2 + eps^2 T) I)
    sys = builtin_system("brownian2d", epsilon=0.3)
    g = TimeGrid(1.0, 0.05)
    N = 20000
    batch = simulate_auxiliary(sys, g, N, [2.0, 2.0], 0.1, [-2.0, -2.0], NoiseSource(3))
    zT = batch.terminal
    var = 0.01 + 0.09
    se_mean = np.sqrt(var / N)
    np.testing.assert_array_less(np.abs(zT.mean(axis=0) - 0.0), 4 * se_mean)
    se_var = var * np.sqrt(2 / (N - 1))
    np.testing.assert_array_less(np.abs(zT.var(axis=0, ddof=1) - var), 4 * se_var)


def test_controlled_zero_control_matches_manual_euler():
    sys = builtin_system("pendulum", epsilon=0.3)
    g = TimeGrid(0.2, 0.05)
    noise = NoiseSource(4)
    batch = simulate_controlled(sys, g, 2, [0.5, 0.0], lambda t, x: np.zeros((x.shape[0], 1)), noise)
    dW = noise.wiener_increments(0, 2, g.steps, 1, g.dt)
    x = np.tile([0.5, 0.0], (2, 1))
    for j in range(g.steps):
        x = euler_maruyama_step(sys, x, sys.drift(x), dW[:, j], g.dt)
    np.testing.assert_allclose(batch.terminal, x, rtol=0, atol=1e-15)
    assert np.all(batch.controls == 0)


def test_controlled_records_zero_order_hold_controls():
    sys = builtin_system("brownian2d")
    g = TimeGrid(1.0, 0.25)
    seen = []

    def ctrl(t, x):
        seen.append(t)
        return np.full((x.shape[0], 2), t)

    batch = simulate_controlled(sys, g, 3, [0.0, 0.0], ctrl)
    assert seen == [0.0, 0.25, 0.5, 0.75]  # never evaluated at T
    np.testing.assert_array_equal(batch.controls[0, :, 0], [0.0, 0.25, 0.5, 0.75])


def test_controller_shape_is_checked():
    sys = builtin_system("brownian2d")
    with pytest.raises(InvalidArgumentError):
        simulate_controlled(sys, TimeGrid(1.0, 0.5), 2, [0.0, 0.0], lambda t, x: np.zeros((1, 2)))


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_overflow_names_path_and_step():
    sys = linear_system([[1e8]], [[1.0]], 0.1)
    with pytest.raises(NumericalOverflowError, match=r"path \d+ at step \d+"):
        simulate_controlled(sys, TimeGrid(1.0, 0.01), 2, [1.0], lambda t, x: np.zeros((x.shape[0], 1)))


def test_euler_step_flags_non_finite():
    sys = builtin_system("brownian2d")
    with pytest.raises(NumericalOverflowError):
        euler_maruyama_step(sys, np.array([[np.inf, 0.0]]), np.zeros((1, 2)), np.zeros((1, 2)), 0.1)


def test_csv_round_trip_is_bit_exact(tmp_path):
    sys = builtin_system("pendulum")
    g = TimeGrid(1.0, 0.1)
    batch = simulate_controlled(sys, g, 3, [np.pi, 0.0], lambda t, x: -x[:, :1] * np.pi / 7, NoiseSource(9))
    path = tmp_path / "traj.csv"
    write_trajectories_csv(batch, path)
    back = read_trajectories_csv(path)
    np.testing.assert_array_equal(back.states, batch.states)
    np.testing.assert_array_equal(back.controls, batch.controls)
    lines = path.read_text().splitlines()
    assert lines[0] == "traj_id,t,x_1,x_2,u_1"
    assert len(lines) == 1 + 3 * (g.steps + 1)
    assert lines[g.steps + 1].endswith(",")  # no control at the final time


def test_csv_without_controls(tmp_path):
    sys = builtin_system("brownian2d")
    batch = simulate_auxiliary(sys, TimeGrid(1.0, 0.5), 2, [0.0, 0.0], 0.0)
    write_trajectories_csv(batch, tmp_path / "z.csv")
    back = read_trajectories_csv(tmp_path / "z.csv")
    assert back.controls is None
    np.testing.assert_array_equal(back.states, batch.states)


def test_batch_shape_validation():
    with pytest.raises(InvalidArgumentError):
        TrajectoryBatch(TimeGrid(1.0, 0.5), np.zeros((2, 4, 1)))


def test_state_dependent_diffusion_auxiliary_runs():
    def diffusion(x):
        return (1 + 0.1 * x[..., :1])[..., None]

    sys = ControlAffineSystem(1, 1, lambda x: -x, diffusion, 0.2)
    batch = simulate_auxiliary(sys, TimeGrid(1.0, 0.01), 100, [0.5], 0.05, None, 1)
    assert np.isfinite(batch.states).all()
