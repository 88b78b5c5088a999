import sys

import numpy as np
import pytest

from revsteer.dynamics import ControlAffineSystem


def swap_system(epsilon=0.5):
    """n = 2, m = 1 with g(x) = (x2, x1); its correction term is exactly x."""

    def diffusion(x):
        return np.stack([x[..., 1], x[..., 0]], axis=-1)[..., None]

    def jac(x):
        out = np.zeros(x.shape[:-1] + (2, 1, 2))
        out[..., 0, 0, 1] = 1.0
        out[..., 1, 0, 0] = 1.0
        return out

    return ControlAffineSystem(2, 1, lambda x: -x, diffusion, epsilon, diffusion_jacobian_fn=jac)


def curved_system(epsilon=0.4, analytic_jacobian=True):
    """Square, state-dependent diffusion with a hand-written jacobian."""

    def drift(x):
        return np.stack([x[..., 1], -np.sin(x[..., 0])], axis=-1)

    def diffusion(x):
        x1, x2 = x[..., 0], x[..., 1]
        g = np.empty(x.shape[:-1] + (2, 2))
        g[..., 0, 0] = 1 + 0.3 * np.sin(x2)
        g[..., 0, 1] = 0.2 * x1
        g[..., 1, 0] = 0.1 * x2**2
        g[..., 1, 1] = 1 + 0.2 * np.cos(x1)
        return g

    def jac(x):
        x1, x2 = x[..., 0], x[..., 1]
        d = np.zeros(x.shape[:-1] + (2, 2, 2))
        d[..., 0, 0, 1] = 0.3 * np.cos(x2)
        d[..., 0, 1, 0] = 0.2
        d[..., 1, 0, 1] = 0.2 * x2
        d[..., 1, 1, 0] = -0.2 * np.sin(x1)
        return d

    return ControlAffineSystem(2, 2, drift, diffusion, epsilon,
                               diffusion_jacobian_fn=jac if analytic_jacobian else None)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for key in sorted(mod.RESULTS):
        ok, detail = mod.RESULTS[key]
        tr.write_line(f"criterion {key:<3} {'PASS' if ok else 'FAIL'}  {detail}")
