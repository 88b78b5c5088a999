"""Closed-form linear-Gaussian track: ``f(x) = A x``, ``g(x) = B``.

The auxiliary process ``dZ = (-A Z + B u_t) dt + eps B dW``, ``Z_0 ~ N(x_f, sigma^2 I)``
stays Gaussian, so its moments, score and the induced feedback law are
available exactly. These serve both as standalone controllers and as oracles
for the learned models.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import linalg as sla

from .dynamics import ControlAffineSystem, linear_system
from .errors import InvalidArgumentError, SingularityError
from .sde_sim import TimeGrid, input_schedule

# Pade(13) numerator coefficients and the matching scaling threshold.
_PADE13 = (
    64764752532480000.0, 32382376266240000.0, 7771770303897600.0, 1187353796428800.0,
    129060195264000.0, 10559470521600.0, 670442572800.0, 33522128640.0, 1323241920.0,
    40840800.0, 960960.0, 16380.0, 182.0, 1.0,
)
_THETA13 = 5.371920351148152

SINGULAR_COND = 1e14


def matrix_exponential(M) -> np.ndarray:
    """``exp(M)`` by scaling and squaring with a degree-13 Pade approximant."""
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise InvalidArgumentError(f"expected a square matrix, got shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise InvalidArgumentError("matrix has non-finite entries")
    n = M.shape[0]
    norm = np.linalg.norm(M, 1)
    s = 0
    if norm > _THETA13:
        s = int(np.ceil(np.log2(norm / _THETA13)))
    A = M / 2.0**s
    b = _PADE13
    eye = np.eye(n)
    A2 = A @ A
    A4 = A2 @ A2
    A6 = A4 @ A2
    U = A @ (A6 @ (b[13] * A6 + b[11] * A4 + b[9] * A2) + b[7] * A6 + b[5] * A4 + b[3] * A2 + b[1] * eye)
    V = A6 @ (b[12] * A6 + b[10] * A4 + b[8] * A2) + b[6] * A6 + b[4] * A4 + b[2] * A2 + b[0] * eye
    R = np.linalg.solve(V - U, V + U)
    for _ in range(s):
        R = R @ R
    return R


@dataclass(frozen=True)
class LinearSystem:
    A: np.ndarray
    B: np.ndarray
    epsilon: float

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        B = np.asarray(self.B, dtype=float)
        if B.ndim == 1:
            B = B[:, None]
        if A.shape != (B.shape[0], B.shape[0]):
            raise InvalidArgumentError(f"A {A.shape} and B {B.shape} are inconsistent")
        if not self.epsilon > 0:
            raise InvalidArgumentError("epsilon must be positive")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)

    @property
    def n(self) -> int:
        return self.B.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]

    def controllability_matrix(self) -> np.ndarray:
        blocks = [self.B]
        for _ in range(self.n - 1):
            blocks.append(self.A @ blocks[-1])
        return np.hstack(blocks)

    def is_controllable(self, tol: float = 1e-10) -> bool:
        sv = np.linalg.svd(self.controllability_matrix(), compute_uv=False)
        return bool(np.sum(sv > tol) == self.n)

    def to_system(self) -> ControlAffineSystem:
        return linear_system(self.A, self.B, self.epsilon)

    @classmethod
    def from_system(cls, sys: ControlAffineSystem) -> "LinearSystem":
        if sys.linear_matrices is None:
            raise InvalidArgumentError(f"system {sys.name!r} is not linear-Gaussian")
        A, B = sys.linear_matrices
        return cls(A, B, sys.epsilon)


def _van_loan(F: np.ndarray, Qn: np.ndarray, delta: float):
    """``(e^{F delta}, int_0^delta e^{F s} Qn e^{F^T s} ds)``."""
    n = F.shape[0]
    C = np.zeros((2 * n, 2 * n))
    C[:n, :n] = F
    C[:n, n:] = Qn
    C[n:, n:] = -F.T
    E = matrix_exponential(C * delta)
    Phi = E[:n, :n]
    gram = E[:n, n:] @ Phi.T
    return Phi, 0.5 * (gram + gram.T)


def _input_gain(F: np.ndarray, B: np.ndarray, delta: float) -> np.ndarray:
    """``int_0^delta e^{F r} dr B``."""
    n, m = B.shape
    C = np.zeros((n + m, n + m))
    C[:n, :n] = F
    C[:n, n:] = B
    return matrix_exponential(C * delta)[:n, n:]


def gramian(lin: LinearSystem, t: float, reverse: bool = True) -> np.ndarray:
    """``eps^2 int_0^t e^{-/+A s} B B^T e^{-/+A^T s} ds``.

    ``reverse=True`` gives the auxiliary covariance ``Sigma_t``; ``False`` the
    forward controllability Gramian scaled by ``eps^2``.
    """
    F = -lin.A if reverse else lin.A
    return _van_loan(F, lin.epsilon**2 * lin.B @ lin.B.T, t)[1]


def gramian_simpson(lin: LinearSystem, t: float, reverse: bool = True, panels_per_unit: int = 200) -> np.ndarray:
    """Same integral as :func:`gramian` by composite Simpson quadrature."""
    if t == 0:
        return np.zeros((lin.n, lin.n))
    panels = max(2, int(np.ceil(panels_per_unit * t)))
    panels += panels % 2
    s = np.linspace(0.0, t, panels + 1)
    F = -lin.A if reverse else lin.A
    BBt = lin.B @ lin.B.T
    vals = []
    for si in s:
        E = matrix_exponential(F * si)
        vals.append(E @ BBt @ E.T)
    vals = np.array(vals)
    w = np.ones(panels + 1)
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    h = t / panels
    out = lin.epsilon**2 * h / 3.0 * np.tensordot(w, vals, axes=1)
    return 0.5 * (out + out.T)


@dataclass
class GaussianMoments:
    """Moments of the auxiliary process on a time grid.

    ``cov`` is ``Sigma_t`` (deterministic start) and ``reg_cov`` is
    ``Q_t = Sigma_t + sigma^2 e^{-At} e^{-A^T t}``.
    """

    lin: LinearSystem
    grid: TimeGrid
    x_f: np.ndarray
    sigma: float
    mean: np.ndarray
    cov: np.ndarray
    reg_cov: np.ndarray
    u_table: np.ndarray = field(repr=False, default=None)

    def at(self, t: float):
        """``(m_t, Q_t)`` at an arbitrary time ``t`` in ``[0, T]``."""
        if not 0.0 <= t <= self.grid.horizon * (1 + 1e-12):
            raise InvalidArgumentError(f"time {t} outside [0, {self.grid.horizon}]")
        j = t / self.grid.dt
        jr = round(j)
        if abs(j - jr) < 1e-9:
            return self.mean[jr], self.reg_cov[jr]
        k = int(np.floor(j))
        delta = t - k * self.grid.dt
        F = -self.lin.A
        Phi, Sd = _van_loan(F, self.lin.epsilon**2 * self.lin.B @ self.lin.B.T, delta)
        m = Phi @ self.mean[k] + _input_gain(F, self.lin.B, delta) @ self.u_table[k]
        Q = Phi @ self.reg_cov[k] @ Phi.T + Sd
        return m, 0.5 * (Q + Q.T)

    def to_csv(self, path) -> None:
        n = self.lin.n
        cols = ["t"] + [f"m_{i + 1}" for i in range(n)] + [f"Q_{i + 1}{j + 1}" for i in range(n) for j in range(n)]
        rows = np.column_stack([self.grid.times, self.mean, self.reg_cov.reshape(len(self.grid.times), -1)])
        np.savetxt(path, rows, delimiter=",", header=",".join(cols), comments="", fmt="%.17g")


def reverse_moments(lin: LinearSystem, grid: TimeGrid, x_f, sigma: float, u=None) -> GaussianMoments:
    """Mean and covariances of the auxiliary process at every grid time.

    Uses the exact one-step recurrence
    ``Sigma_{t+d} = e^{-Ad} Sigma_t e^{-A^T d} + Sigma_d`` with ``Sigma_d`` from a
    Van Loan block exponential; piecewise-constant inputs are propagated
    exactly through the mean.
    """
    if sigma < 0:
        raise InvalidArgumentError("sigma must be >= 0")
    x_f = np.asarray(x_f, dtype=float)
    if x_f.shape != (lin.n,):
        raise InvalidArgumentError(f"x_f has shape {x_f.shape}, expected {(lin.n,)}")
    sched = input_schedule(u, grid, lin.m)
    K = grid.steps
    F = -lin.A
    Phi, Sd = _van_loan(F, lin.epsilon**2 * lin.B @ lin.B.T, grid.dt)
    Gam = _input_gain(F, lin.B, grid.dt)
    mean = np.empty((K + 1, lin.n))
    cov = np.empty((K + 1, lin.n, lin.n))
    reg = np.empty_like(cov)
    mean[0] = x_f
    cov[0] = 0.0
    reg[0] = sigma**2 * np.eye(lin.n)
    for j in range(K):
        mean[j + 1] = Phi @ mean[j] + Gam @ sched[j]
        c = Phi @ cov[j] @ Phi.T + Sd
        q = Phi @ reg[j] @ Phi.T + Sd
        cov[j + 1] = 0.5 * (c + c.T)
        reg[j + 1] = 0.5 * (q + q.T)
    return GaussianMoments(lin, grid, x_f, float(sigma), mean, cov, reg, sched)


def _spd_solve(Q: np.ndarray, rhs: np.ndarray, what: str) -> np.ndarray:
    """Solve ``Q y = rhs`` for symmetric positive definite ``Q``; ``rhs`` is ``(..., n)``."""
    cond = np.linalg.cond(Q)
    if not np.isfinite(cond) or cond > SINGULAR_COND:
        raise SingularityError(f"covariance is numerically singular ({what}, cond={cond:.3g})")
    try:
        c = sla.cho_factor(Q)
    except np.linalg.LinAlgError as exc:
        raise SingularityError(f"covariance is not positive definite ({what})") from exc
    flat = rhs.reshape(-1, Q.shape[0]).T
    return sla.cho_solve(c, flat).T.reshape(rhs.shape)


def exact_score_linear(lin: LinearSystem, moments: GaussianMoments, t: float, x) -> np.ndarray:
    """Score ``s(t, x) = -B B^T Q_t^{-1} (x - m_t)`` of the auxiliary density."""
    m, Q = moments.at(t)
    y = _spd_solve(Q, np.asarray(x, dtype=float) - m, f"t={t:.6g}")
    return -y @ (lin.B @ lin.B.T).T


def exact_kstar(lin: LinearSystem, moments: GaussianMoments, s: float, x) -> np.ndarray:
    """``k*(s, x) = -B^T Q_s^{-1} (x - m_s)`` (the score factor through ``g = B``)."""
    m, Q = moments.at(s)
    y = _spd_solve(Q, np.asarray(x, dtype=float) - m, f"t={s:.6g}")
    return -y @ lin.B


def exact_control(lin: LinearSystem, moments: GaussianMoments, t: float, x) -> np.ndarray:
    """Feedback ``-eps^2 B^T Q_{T-t}^{-1} (x - m_{T-t})`` for ``t`` in ``[0, T)``."""
    T = moments.grid.horizon
    if not 0.0 <= t < T:
        raise InvalidArgumentError(f"t={t} outside [0, {T})")
    try:
        return lin.epsilon**2 * exact_kstar(lin, moments, T - t, x)
    except SingularityError as exc:
        raise SingularityError(f"exact control singular at t={t:.6g}: {exc}") from exc


def brownian_bridge_control(x0, x_f, epsilon: float, sigma: float, T: float, t: float, x) -> np.ndarray:
    """Closed-form bridge law for ``dX = U dt + eps dW`` with input ``u = (x0 - x_f)/T``.

    For ``T = 1``:
    ``U = x_f - x0 - eps^2 (x - (1-t) x0 - t x_f) / (eps^2 (1-t) + sigma^2)``.
    """
    x0 = np.asarray(x0, dtype=float)
    x_f = np.asarray(x_f, dtype=float)
    if not 0.0 <= t < T:
        raise InvalidArgumentError(f"t={t} outside [0, {T})")
    den = epsilon**2 * (T - t) + sigma**2
    if den < 1e-14:
        raise SingularityError(f"bridge control singular at t={t:.6g}")
    nominal = ((T - t) * x0 + t * x_f) / T
    return (x_f - x0) / T - epsilon**2 * (np.asarray(x, dtype=float) - nominal) / den


@dataclass
class TerminalError:
    bias2: float
    variance: float
    total: float
    mu: np.ndarray
    P: np.ndarray


def predicted_terminal_error(lin: LinearSystem, x0, x_f, sigma: float, T: float, z_mean_T=None) -> TerminalError:
    """Expected ``||X_T - x_f||^2`` under the regularised exact feedback.

    ``X_T ~ N(mu, P)`` with ``M = sigma^2 I + eps^2 int_0^T e^{As} B B^T e^{A^T s} ds``,
    ``mu = x_f + sigma^2 M^{-1} e^{TA} (x0 - E Z_T)`` and
    ``P = sigma^2 (I - sigma^2 M^{-1})``. ``z_mean_T`` overrides ``E Z_T``
    (default ``e^{-TA} x_f``, i.e. no deterministic input).
    """
    x0 = np.asarray(x0, dtype=float)
    x_f = np.asarray(x_f, dtype=float)
    n = lin.n
    if sigma < 0:
        raise InvalidArgumentError("sigma must be >= 0")
    if sigma == 0:
        return TerminalError(0.0, 0.0, 0.0, x_f.copy(), np.zeros((n, n)))
    eAT = matrix_exponential(lin.A * T)
    if z_mean_T is None:
        z_mean_T = matrix_exponential(-lin.A * T) @ x_f
    M = sigma**2 * np.eye(n) + gramian(lin, T, reverse=False)
    try:
        c = sla.cho_factor(M)
    except np.linalg.LinAlgError as exc:
        raise SingularityError("M is singular") from exc
    mu = x_f + sigma**2 * sla.cho_solve(c, eAT @ (x0 - np.asarray(z_mean_T, dtype=float)))
    P = sigma**2 * (np.eye(n) - sigma**2 * sla.cho_solve(c, np.eye(n)))
    P = 0.5 * (P + P.T)
    bias2 = float(np.sum((mu - x_f) ** 2))
    var = float(np.trace(P))
    return TerminalError(bias2, var, bias2 + var, mu, P)
