import numpy as np
import pytest

from revsteer.dynamics import (
    builtin_system,
    central_difference_jacobian,
    eval_frak_g,
    frak_g_jacobian,
    linear_system,
    registered_systems,
    reversed_drift,
)
from revsteer.errors import InvalidArgumentError, NotFoundError

from conftest import curved_system, swap_system


def test_registry_lists_builtins():
    assert {"brownian2d", "linear", "pendulum"} <= set(registered_systems())


def test_unknown_system_lists_registered_names():
    with pytest.raises(NotFoundError) as err:
        builtin_system("nosuch")
    msg = str(err.value)
    for name in ("brownian2d", "linear", "pendulum"):
        assert name in msg


def test_pendulum_drift_and_diffusion():
    sys = builtin_system("pendulum", {"damping": 0.01})
    x = np.array([0.3, -1.2])
    np.testing.assert_allclose(sys.drift(x), [-1.2, np.sin(0.3) + 0.012])
    np.testing.assert_array_equal(sys.diffusion(x), [[0.0], [1.0]])
    assert np.all(eval_frak_g(sys, x) == 0)


def test_pendulum_rejects_unknown_params():
    with pytest.raises(InvalidArgumentError):
        builtin_system("pendulum", {"length": 2.0})


def test_linear_requires_matrices():
    with pytest.raises(InvalidArgumentError):
        builtin_system("linear", {"A": [[0.0]]})
    sys = builtin_system("linear", {"A": [[-1.0]], "B": [[1.0]]}, epsilon=0.3)
    assert sys.state_dim == 1 and sys.control_dim == 1
    np.testing.assert_allclose(sys.drift(np.array([[2.0]])), [[-2.0]])


def test_epsilon_must_be_positive():
    with pytest.raises(InvalidArgumentError):
        builtin_system("brownian2d", epsilon=0.0)


def test_check_state_dimension():
    sys = builtin_system("brownian2d")
    with pytest.raises(InvalidArgumentError):
        sys.check_state(np.zeros(3))


def test_frak_g_closed_form_swap():
    # g = (x2, x1): frak_g_1 = g_2 d_2 g_1 = x1, frak_g_2 = g_1 d_1 g_2 = x2
    sys = swap_system()
    x = np.random.default_rng(0).normal(size=(50, 2))
    np.testing.assert_allclose(eval_frak_g(sys, x), x, atol=1e-15)


def test_frak_g_analytic_vs_fd_jacobian(rng):
    exact = curved_system(analytic_jacobian=True)
    approx = curved_system(analytic_jacobian=False)
    x = rng.normal(size=(100, 2))
    np.testing.assert_allclose(eval_frak_g(approx, x), eval_frak_g(exact, x), atol=1e-8)


def test_frak_g_jacobian_of_swap_is_identity(rng):
    x = rng.normal(size=(10, 2))
    np.testing.assert_allclose(frak_g_jacobian(swap_system(), x), np.broadcast_to(np.eye(2), (10, 2, 2)),
                               atol=1e-8)


def test_constant_diffusion_short_circuits():
    sys = linear_system([[0.0, 1.0], [0.0, 0.0]], [[0.0], [1.0]], 0.3)
    x = np.ones((4, 2))
    assert np.all(frak_g_jacobian(sys, x) == 0)
    np.testing.assert_allclose(reversed_drift(sys, x), -sys.drift(x))


def test_reversed_drift_includes_correction():
    sys = swap_system(epsilon=0.5)
    x = np.array([1.0, 2.0])
    # -f + eps^2 frak_g = x + 0.25 x
    np.testing.assert_allclose(reversed_drift(sys, x), 1.25 * x)


def test_central_difference_on_quadratic():
    fn = lambda x: np.stack([x[..., 0] ** 2 * x[..., 1], np.exp(x[..., 1])], axis=-1)
    x = np.array([1.5, -0.5])
    J = central_difference_jacobian(fn, x)
    expected = [[2 * 1.5 * -0.5, 1.5**2], [0.0, np.exp(-0.5)]]
    np.testing.assert_allclose(J, expected, rtol=1e-9)


def test_noise_covariance_is_ggt():
    sys = curved_system()
    x = np.array([0.2, 0.7])
    g = sys.diffusion(x)
    np.testing.assert_allclose(sys.noise_covariance(x), g @ g.T)
