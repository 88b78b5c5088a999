"""Control-affine stochastic systems ``dX = f(X) dt + g(X) (U dt + eps dW)``.

All system callables are vectorised over leading axes: a state array of shape
``(..., n)`` maps to drift ``(..., n)``, diffusion ``(..., n, m)`` and
diffusion jacobian ``(..., n, m, n)`` with ``jac[..., j, r, l] = d g_jr / d x_l``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from .errors import InvalidArgumentError, NotFoundError

ArrayFn = Callable[[np.ndarray], np.ndarray]

FD_REL_STEP = 1e-5


def _fd_steps(x: np.ndarray) -> np.ndarray:
    return FD_REL_STEP * np.maximum(1.0, np.abs(x))


def central_difference_jacobian(fn: ArrayFn, x: np.ndarray, steps=None) -> np.ndarray:
    """Jacobian of a vectorised ``fn`` by central differences.

    Returns an array of shape ``fn(x).shape + (n,)``. ``steps`` defaults to
    ``1e-5 * max(1, |x_l|)`` per coordinate; a scalar gives a fixed step.
    """
    x = np.asarray(x, dtype=float)
    n = x.shape[-1]
    if steps is None:
        steps = _fd_steps(x)
    else:
        steps = np.broadcast_to(np.asarray(steps, dtype=float), x.shape)
    cols = []
    for l in range(n):
        e = np.zeros_like(x)
        e[..., l] = steps[..., l]
        diff = fn(x + e) - fn(x - e)
        h = 2.0 * steps[..., l]
        cols.append(diff / h.reshape(h.shape + (1,) * (diff.ndim - h.ndim)))
    return np.stack(cols, axis=-1)


@dataclass(frozen=True)
class ControlAffineSystem:
    """Drift ``f``, diffusion ``g`` and noise strength ``epsilon``.

    ``diffusion_jacobian`` may be omitted, in which case it is computed by
    central differences. ``constant_diffusion`` lets the divergence terms
    short-circuit to exact zeros.
    """

    state_dim: int
    control_dim: int
    drift: ArrayFn
    diffusion: ArrayFn
    epsilon: float
    diffusion_jacobian_fn: ArrayFn | None = None
    constant_diffusion: bool = False
    name: str | None = None
    params: Mapping = field(default_factory=dict)
    # (A, B) when the system is linear-Gaussian: f(x) = A x, g(x) = B
    linear_matrices: tuple | None = None

    def __post_init__(self):
        if self.state_dim < 1 or self.control_dim < 1:
            raise InvalidArgumentError("state_dim and control_dim must be positive")
        if not self.epsilon > 0:
            raise InvalidArgumentError(f"epsilon must be positive, got {self.epsilon}")

    def check_state(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.ndim == 0 or x.shape[-1] != self.state_dim:
            raise InvalidArgumentError(
                f"state has trailing dimension {x.shape[-1] if x.ndim else 0}, "
                f"expected {self.state_dim}"
            )
        return x

    def diffusion_jacobian(self, x) -> np.ndarray:
        x = self.check_state(x)
        if self.diffusion_jacobian_fn is not None:
            return self.diffusion_jacobian_fn(x)
        if self.constant_diffusion:
            return np.zeros(x.shape[:-1] + (self.state_dim, self.control_dim, self.state_dim))
        return central_difference_jacobian(self.diffusion, x)

    def noise_covariance(self, x) -> np.ndarray:
        """``G(x) = g(x) g(x)^T``."""
        g = self.diffusion(self.check_state(x))
        return g @ np.swapaxes(g, -1, -2)

    def with_epsilon(self, epsilon: float) -> "ControlAffineSystem":
        from dataclasses import replace

        return replace(self, epsilon=float(epsilon))


def eval_frak_g(sys: ControlAffineSystem, x) -> np.ndarray:
    """Geometric correction ``frak_g_i(x) = sum_{j,k} g_jk(x) d_j g_ik(x)``."""
    x = sys.check_state(x)
    if sys.constant_diffusion:
        return np.zeros_like(x)
    g = sys.diffusion(x)
    jac = sys.diffusion_jacobian(x)
    return np.einsum("...jk,...ikj->...i", g, jac)


def frak_g_jacobian(sys: ControlAffineSystem, x) -> np.ndarray:
    """``d frak_g_i / d x_l`` by central differences (step 1e-5); zero for constant g."""
    x = sys.check_state(x)
    n = sys.state_dim
    if sys.constant_diffusion:
        return np.zeros(x.shape[:-1] + (n, n))
    return central_difference_jacobian(lambda y: eval_frak_g(sys, y), x, steps=FD_REL_STEP)


def reversed_drift(sys: ControlAffineSystem, x) -> np.ndarray:
    """Drift ``h(x) = -f(x) + eps^2 frak_g(x)`` of the auxiliary process."""
    x = sys.check_state(x)
    return -sys.drift(x) + sys.epsilon**2 * eval_frak_g(sys, x)


# ----------------------------------------------------------------------------
# registry of built-in systems

_REGISTRY: dict[str, Callable[..., ControlAffineSystem]] = {}


def register_system(name: str):
    def deco(ctor):
        if name in _REGISTRY:
            raise InvalidArgumentError(f"system {name!r} already registered")
        _REGISTRY[name] = ctor
        return ctor

    return deco


def registered_systems() -> list[str]:
    return sorted(_REGISTRY)


def builtin_system(name: str, params: Mapping | None = None, epsilon: float = 0.3) -> ControlAffineSystem:
    """Construct a registered system by name."""
    if name not in _REGISTRY:
        raise NotFoundError(
            f"unknown system {name!r}; registered systems: {', '.join(registered_systems())}"
        )
    return _REGISTRY[name](dict(params or {}), float(epsilon))


def linear_system(A, B, epsilon: float, name: str = "linear", params=None) -> ControlAffineSystem:
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.asarray(B, dtype=float)
    if B.ndim == 1:
        B = B[:, None]
    n, m = B.shape
    if A.shape != (n, n):
        raise InvalidArgumentError(f"A has shape {A.shape}, expected {(n, n)}")
    A.setflags(write=False)
    B.setflags(write=False)

    def drift(x):
        return x @ A.T

    def diffusion(x):
        return np.broadcast_to(B, x.shape[:-1] + (n, m))

    def diffusion_jacobian(x):
        return np.zeros(x.shape[:-1] + (n, m, n))

    if params is None:
        params = {"A": A.tolist(), "B": B.tolist()}
    return ControlAffineSystem(
        state_dim=n,
        control_dim=m,
        drift=drift,
        diffusion=diffusion,
        epsilon=epsilon,
        diffusion_jacobian_fn=diffusion_jacobian,
        constant_diffusion=True,
        name=name,
        params=params,
        linear_matrices=(A, B),
    )


@register_system("brownian2d")
def _brownian2d(params: dict, epsilon: float) -> ControlAffineSystem:
    if params:
        raise InvalidArgumentError(f"brownian2d takes no parameters, got {sorted(params)}")
    return linear_system(np.zeros((2, 2)), np.eye(2), epsilon, name="brownian2d", params={})


@register_system("linear")
def _linear(params: dict, epsilon: float) -> ControlAffineSystem:
    unknown = set(params) - {"A", "B"}
    if unknown or "A" not in params or "B" not in params:
        raise InvalidArgumentError("linear system needs exactly the parameters 'A' and 'B'")
    return linear_system(params["A"], params["B"], epsilon, name="linear")


@register_system("pendulum")
def _pendulum(params: dict, epsilon: float) -> ControlAffineSystem:
    unknown = set(params) - {"damping"}
    if unknown:
        raise InvalidArgumentError(f"unknown pendulum parameters {sorted(unknown)}")
    damping = float(params.get("damping", 0.01))
    g_col = np.array([[0.0], [1.0]])

    def drift(x):
        return np.stack([x[..., 1], np.sin(x[..., 0]) - damping * x[..., 1]], axis=-1)

    def diffusion(x):
        return np.broadcast_to(g_col, x.shape[:-1] + (2, 1))

    def diffusion_jacobian(x):
        return np.zeros(x.shape[:-1] + (2, 1, 2))

    return ControlAffineSystem(
        state_dim=2,
        control_dim=1,
        drift=drift,
        diffusion=diffusion,
        epsilon=epsilon,
        diffusion_jacobian_fn=diffusion_jacobian,
        constant_diffusion=True,
        name="pendulum",
        params={"damping": damping},
    )
