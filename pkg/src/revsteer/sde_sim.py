"""Seeded Euler-Maruyama simulation of the auxiliary and closed-loop processes."""
from __future__ import annotations

import csv
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .dynamics import ControlAffineSystem, reversed_drift
from .errors import InvalidArgumentError, NumericalOverflowError, RevsteerError

# Paths are simulated in fixed-size chunks; the chunk layout never depends on
# the worker count, which keeps batches bit-identical across thread settings.
CHUNK = 512


@dataclass(frozen=True)
class TimeGrid:
    horizon: float
    dt: float

    def __post_init__(self):
        if not (self.horizon > 0 and self.dt > 0):
            raise InvalidArgumentError("horizon and dt must be positive")
        steps = round(self.horizon / self.dt)
        if steps < 1 or abs(steps * self.dt - self.horizon) > 1e-12 * self.horizon:
            raise InvalidArgumentError(
                f"horizon {self.horizon} is not an integer multiple of dt {self.dt}"
            )

    @property
    def steps(self) -> int:
        return round(self.horizon / self.dt)

    @property
    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.horizon, self.steps + 1)

    def index(self, t: float) -> int:
        """Index of the largest grid time <= t (zero-order hold)."""
        j = int(np.floor(t / self.dt + 1e-9))
        return min(max(j, 0), self.steps)

    def to_dict(self) -> dict:
        return {"T": self.horizon, "dt": self.dt}


class NoiseSource:
    """Per-trajectory random streams derived from one base seed.

    ``stream(i)`` drives the Wiener increments of path ``i`` and
    ``initial_stream(i)`` its initial-state draw; both are pure functions of
    ``(base_seed, i)``.
    """

    def __init__(self, base_seed: int):
        self.base_seed = int(base_seed)

    def _gen(self, kind: int, index: int) -> np.random.Generator:
        ss = np.random.SeedSequence(self.base_seed, spawn_key=(kind, int(index)))
        return np.random.Generator(np.random.PCG64(ss))

    def stream(self, index: int) -> np.random.Generator:
        return self._gen(0, index)

    def initial_stream(self, index: int) -> np.random.Generator:
        return self._gen(1, index)

    def wiener_increments(self, start: int, stop: int, steps: int, m: int, dt: float) -> np.ndarray:
        """Increments of paths ``start..stop-1``, shape ``(stop-start, steps, m)``."""
        out = np.empty((stop - start, steps, m))
        for k, i in enumerate(range(start, stop)):
            out[k] = self.stream(i).standard_normal((steps, m))
        return out * np.sqrt(dt)


@dataclass
class TrajectoryBatch:
    grid: TimeGrid
    states: np.ndarray  # (N, steps + 1, n)
    controls: np.ndarray | None = None  # (N, steps, m)

    def __post_init__(self):
        N, K, _ = self.states.shape
        if K != self.grid.steps + 1:
            raise InvalidArgumentError("states do not match the time grid")
        if self.controls is not None and self.controls.shape[:2] != (N, self.grid.steps):
            raise InvalidArgumentError("controls do not match states/grid")

    @property
    def count(self) -> int:
        return self.states.shape[0]

    @property
    def terminal(self) -> np.ndarray:
        return self.states[:, -1]


def worker_count() -> int:
    raw = os.environ.get("REVSTEER_THREADS", "1")
    try:
        k = int(raw)
    except ValueError:
        raise InvalidArgumentError(f"REVSTEER_THREADS must be an integer, got {raw!r}")
    if k < 0:
        raise InvalidArgumentError("REVSTEER_THREADS must be >= 0")
    return k or (os.cpu_count() or 1)


def euler_maruyama_step(sys: ControlAffineSystem, x, drift_total, dW, dt: float) -> np.ndarray:
    """``x + drift_total dt + eps g(x) dW`` (vectorised over leading axes)."""
    x = np.asarray(x, dtype=float)
    g = sys.diffusion(x)
    out = x + np.asarray(drift_total) * dt + sys.epsilon * np.einsum("...jr,...r->...j", g, dW)
    if not np.all(np.isfinite(out)):
        bad = np.argwhere(~np.all(np.isfinite(np.atleast_2d(out)), axis=-1))
        raise NumericalOverflowError(f"non-finite state after Euler-Maruyama step (paths {bad.ravel()[:5].tolist()})")
    return out


def input_schedule(u, grid: TimeGrid, m: int) -> np.ndarray:
    """Normalise a deterministic input to a ``(steps, m)`` table."""
    if u is None:
        return np.zeros((grid.steps, m))
    if hasattr(u, "table"):
        return u.table(grid, m)
    arr = np.asarray(u, dtype=float)
    if arr.shape == (m,):
        return np.broadcast_to(arr, (grid.steps, m)).copy()
    if arr.shape == (grid.steps, m):
        return arr.copy()
    raise InvalidArgumentError(f"input schedule has shape {arr.shape}, expected {(m,)} or {(grid.steps, m)}")


DriftRule = Callable[[int, float, np.ndarray], tuple]


def _run(sys, grid, x_init, noise: NoiseSource, rule: DriftRule, record_controls: bool):
    N, n = x_init.shape
    steps, m, dt = grid.steps, sys.control_dim, grid.dt
    times = grid.times
    states = np.empty((N, steps + 1, n))
    controls = np.empty((N, steps, m)) if record_controls else None

    def work(start):
        stop = min(start + CHUNK, N)
        dW = noise.wiener_increments(start, stop, steps, m, dt)
        x = x_init[start:stop].copy()
        states[start:stop, 0] = x
        for j in range(steps):
            drift, u = rule(j, times[j], x, start)
            g = sys.diffusion(x)
            x = x + drift * dt + sys.epsilon * np.einsum("pjr,pr->pj", g, dW[:, j])
            if not np.isfinite(x).all():
                bad = start + int(np.argmax(~np.isfinite(x).all(axis=1)))
                raise NumericalOverflowError(f"non-finite state on path {bad} at step {j + 1} (t={times[j + 1]:.6g})")
            states[start:stop, j + 1] = x
            if controls is not None:
                controls[start:stop, j] = u

    starts = range(0, N, CHUNK)
    workers = min(worker_count(), len(starts))
    if workers <= 1:
        for s in starts:
            work(s)
    else:
        with ThreadPoolExecutor(workers) as pool:
            list(pool.map(work, starts))
    return TrajectoryBatch(grid=grid, states=states, controls=controls)


def simulate_auxiliary(
    sys: ControlAffineSystem,
    grid: TimeGrid,
    N: int,
    x_f,
    sigma: float,
    u=None,
    noise: NoiseSource | int = 0,
) -> TrajectoryBatch:
    """Simulate ``dZ = (h(Z) + g(Z) u_t) dt + eps g(Z) dW`` with ``Z_0 ~ N(x_f, sigma^2 I)``."""
    if N < 1:
        raise InvalidArgumentError("N must be positive")
    if sigma < 0:
        raise InvalidArgumentError("sigma must be >= 0")
    if not isinstance(noise, NoiseSource):
        noise = NoiseSource(noise)
    x_f = sys.check_state(x_f)
    n, m = sys.state_dim, sys.control_dim
    sched = input_schedule(u, grid, m)
    z0 = np.tile(x_f, (N, 1))
    if sigma > 0:
        z0 += sigma * np.stack([noise.initial_stream(i).standard_normal(n) for i in range(N)])

    def rule(j, t, z, start):
        g = sys.diffusion(z)
        return reversed_drift(sys, z) + g @ sched[j], None

    return _run(sys, grid, z0, noise, rule, record_controls=False)


def simulate_controlled(
    sys: ControlAffineSystem,
    grid: TimeGrid,
    N: int,
    x0,
    controller: Callable,
    noise: NoiseSource | int = 0,
) -> TrajectoryBatch:
    """Closed-loop rollout of ``dX = f dt + g (k(t, X) dt + eps dW)``.

    ``controller(t, X)`` receives a batch ``X`` of shape ``(P, n)`` and returns
    ``(P, m)``. Controls are held constant over each step and recorded.
    ``x0`` may be a single state or one state per path.
    """
    if N < 1:
        raise InvalidArgumentError("N must be positive")
    if not isinstance(noise, NoiseSource):
        noise = NoiseSource(noise)
    x0 = sys.check_state(x0)
    x_init = np.array(np.broadcast_to(x0, (N, sys.state_dim)), dtype=float)
    m = sys.control_dim

    def rule(j, t, x, start):
        try:
            u = np.asarray(controller(t, x), dtype=float)
        except RevsteerError as exc:
            raise type(exc)(f"controller failed at t={t:.6g} (paths from {start}): {exc}") from exc
        if u.shape != (x.shape[0], m):
            raise InvalidArgumentError(f"controller returned shape {u.shape}, expected {(x.shape[0], m)}")
        return sys.drift(x) + np.einsum("pjr,pr->pj", sys.diffusion(x), u), u

    return _run(sys, grid, x_init, noise, rule, record_controls=True)


def simulate_reverse(sys, grid, z_init, score_control: Callable, noise: NoiseSource | int = 0) -> TrajectoryBatch:
    """Forward-time simulation of the reversed process from given initial states.

    Identical to :func:`simulate_controlled` but with one initial state per path,
    e.g. draws from the auxiliary terminal law.
    """
    return simulate_controlled(sys, grid, len(z_init), z_init, score_control, noise)


# ----------------------------------------------------------------------------
# CSV serialisation: traj_id, t, x_1..x_n[, u_1..u_m]


def _fmt(v: float) -> str:
    # 17 significant digits always reload to the identical double
    return format(float(v), ".17g")


def write_trajectories_csv(batch: TrajectoryBatch, path) -> None:
    N, K, n = batch.states.shape
    header = ["traj_id", "t"] + [f"x_{i + 1}" for i in range(n)]
    m = 0
    if batch.controls is not None:
        m = batch.controls.shape[2]
        header += [f"u_{r + 1}" for r in range(m)]
    times = batch.grid.times
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for i in range(N):
            for j in range(K):
                row = [str(i), _fmt(times[j])] + [_fmt(v) for v in batch.states[i, j]]
                if m:
                    row += [_fmt(v) for v in batch.controls[i, j]] if j < K - 1 else [""] * m
                w.writerow(row)


def read_trajectories_csv(path, dt: float | None = None) -> TrajectoryBatch:
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        header = next(r)
        rows = list(r)
    n = sum(h.startswith("x_") for h in header)
    m = sum(h.startswith("u_") for h in header)
    ids = np.array([int(row[0]) for row in rows])
    N = ids.max() + 1
    K = len(rows) // N
    t = np.array([float(row[1]) for row in rows[:K]])
    states = np.array([[float(v) for v in row[2 : 2 + n]] for row in rows]).reshape(N, K, n)
    controls = None
    if m:
        vals = np.array([[float(v) if v else np.nan for v in row[2 + n :]] for row in rows]).reshape(N, K, m)
        controls = vals[:, :-1]
    grid = TimeGrid(float(t[-1]), dt if dt is not None else float(t[1] - t[0]))
    return TrajectoryBatch(grid=grid, states=states, controls=controls)
