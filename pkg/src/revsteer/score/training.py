"""Adam training of score models on auxiliary trajectories, plus the exact
per-bin fit of affine models."""
from __future__ import annotations

import logging
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np

from ..dynamics import ControlAffineSystem
from ..errors import InvalidArgumentError, TrainingDivergenceError
from ..sde_sim import TrajectoryBatch
from .models import FeatureModel, ScoreModel
from .objective import loss_and_gradient

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    iterations: int = 10000
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    k1: int | None = None  # time instants per batch; None -> floor(T / (10 dt)) + 1
    k2: int = 32  # trajectories per batch
    seed: int = 0
    # Cosine decay from lr to lr * lr_final_factor; 1.0 keeps lr constant.
    lr_final_factor: float = 1.0

    def resolved_k1(self, horizon: float, dt: float) -> int:
        if self.k1 is not None:
            return int(self.k1)
        return int(np.floor(horizon / (10 * dt) + 1e-9)) + 1

    def validate(self, N: int | None = None):
        if self.iterations < 0:
            raise InvalidArgumentError("iterations must be >= 0")
        if not self.lr > 0:
            raise InvalidArgumentError("lr must be positive")
        if self.k2 < 1 or (self.k1 is not None and self.k1 < 1):
            raise InvalidArgumentError("k1 and k2 must be >= 1")
        if N is not None and self.k2 > N:
            raise InvalidArgumentError(f"k2={self.k2} exceeds the number of trajectories N={N}")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0

    @classmethod
    def zeros(cls, size: int) -> "AdamState":
        return cls(np.zeros(size), np.zeros(size), 0)


def adam_step(state: AdamState, params: np.ndarray, grad: np.ndarray, config: TrainConfig, lr: float | None = None):
    """One bias-corrected Adam update; returns ``(new_params, state)``."""
    if grad.shape != params.shape or state.m.shape != params.shape:
        raise InvalidArgumentError("shape mismatch between params, grad and Adam state")
    lr = config.lr if lr is None else lr
    state.step += 1
    state.m = config.beta1 * state.m + (1 - config.beta1) * grad
    state.v = config.beta2 * state.v + (1 - config.beta2) * grad**2
    mhat = state.m / (1 - config.beta1**state.step)
    vhat = state.v / (1 - config.beta2**state.step)
    return params - lr * mhat / (np.sqrt(vhat) + config.adam_eps), state


@dataclass
class TrainResult:
    model: ScoreModel
    losses: np.ndarray = field(repr=False)


def _lr_at(config: TrainConfig, it: int) -> float:
    if config.lr_final_factor == 1.0 or config.iterations <= 1:
        return config.lr
    frac = it / (config.iterations - 1)
    lo = config.lr * config.lr_final_factor
    return lo + 0.5 * (config.lr - lo) * (1 + np.cos(np.pi * frac))


def train(sys: ControlAffineSystem, model: ScoreModel, batch: TrajectoryBatch, config: TrainConfig,
          callback=None) -> TrainResult:
    """Minimise the score-matching objective over random (time, trajectory) batches.

    Each iteration draws ``k1`` distinct grid indices from ``{1, ..., steps}``
    and ``k2`` distinct trajectories; the batch is their ``k1 * k2`` states.
    """
    config.validate(batch.count)
    grid = batch.grid
    k1 = min(config.resolved_k1(grid.horizon, grid.dt), grid.steps)
    rng = np.random.default_rng(config.seed)
    state = AdamState.zeros(model.n_params)
    times = grid.times
    losses = np.empty(config.iterations)
    for it in range(config.iterations):
        tj = rng.choice(grid.steps, size=k1, replace=False) + 1
        ti = rng.choice(batch.count, size=config.k2, replace=False)
        x = batch.states[np.ix_(ti, tj)].reshape(-1, sys.state_dim)
        t = np.tile(times[tj], config.k2)
        try:
            loss, grad = loss_and_gradient(sys, model, t, x)
        except TrainingDivergenceError as exc:
            raise TrainingDivergenceError(f"iteration {it}: {exc}") from exc
        new, state = adam_step(state, model.params, grad, config, lr=_lr_at(config, it))
        model.set_params(new)
        losses[it] = loss
        if callback is not None:
            callback(it, loss)
        if it % 1000 == 0:
            log.debug("iteration %d loss %.6g", it, loss)
    return TrainResult(model, losses)


def fit_feature_model_closed_form(sys: ControlAffineSystem, batch: TrajectoryBatch,
                                  bins=None, ridge: float = 1e-8) -> FeatureModel:
    """Exact minimiser of the empirical objective for a :class:`FeatureModel`.

    With constant ``g`` the objective of bin ``b`` is quadratic in
    ``theta = [W_b  c_b]``; its stationarity condition
    ``g^T g theta S = -[g^T G, 0]`` with ``S = mean(phi phi^T)``,
    ``phi = (x, 1)``, is solved directly. ``bins`` defaults to every grid
    index; rank-deficient bins are regularised with ``ridge * I`` and reported.
    """
    if not sys.constant_diffusion:
        raise InvalidArgumentError("closed-form fit requires a constant diffusion matrix")
    n, m = sys.state_dim, sys.control_dim
    model = FeatureModel(n, m, batch.grid)
    g = np.asarray(sys.diffusion(np.zeros(n)), dtype=float)
    G = g @ g.T
    gtg = g.T @ g
    rhs_left = np.hstack([g.T @ G, np.zeros((m, 1))])  # m x (n+1)
    if bins is None:
        bins = range(batch.grid.steps + 1)
    for b in bins:
        x = batch.states[:, b]
        phi = np.hstack([x, np.ones((x.shape[0], 1))])
        S = phi.T @ phi / x.shape[0]
        if x.shape[0] < n + 1 or np.linalg.matrix_rank(S) < n + 1:
            warnings.warn(f"bin {b} is rank deficient; adding ridge {ridge:g}", RuntimeWarning, stacklevel=2)
            S = S + ridge * np.eye(n + 1)
        # theta S = -(g^T g)^+ [g^T G, 0]
        left = -np.linalg.lstsq(gtg, rhs_left, rcond=None)[0]
        theta = np.linalg.solve(S.T, left.T).T
        model.W[b] = theta[:, :n]
        model.c[b] = theta[:, n]
    return model
