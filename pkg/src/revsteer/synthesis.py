"""Controller synthesis: simulate the auxiliary process from the target, fit
the score factor ``k*``, and assemble ``U = eps^2 k*(T - t, x) + u~_t``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dynamics import ControlAffineSystem, builtin_system
from .errors import InvalidArgumentError, OutOfRangeError, RevsteerError
from .lingauss import LinearSystem, reverse_moments
from .sde_sim import NoiseSource, TimeGrid, TrajectoryBatch, simulate_auxiliary
from .score import ExactLinearModel, MlpModel, ScoreModel, TrainConfig, train
from .score.checkpoint import load_checkpoint, save_checkpoint


@dataclass(frozen=True)
class DeterministicInput:
    """Open-loop input ``u_t`` applied while simulating the auxiliary process.

    ``kind`` is ``"zero"``, ``"constant"`` (``values`` has shape ``(m,)``) or
    ``"table"`` (``values`` has one row per grid step).
    """

    kind: str = "zero"
    values: tuple = ()

    def __post_init__(self):
        if self.kind not in ("zero", "constant", "table"):
            raise InvalidArgumentError(f"unknown deterministic input kind {self.kind!r}")

    @classmethod
    def zero(cls):
        return cls("zero")

    @classmethod
    def constant(cls, value):
        return cls("constant", tuple(float(v) for v in np.ravel(value)))

    @classmethod
    def from_table(cls, table):
        table = np.atleast_2d(np.asarray(table, dtype=float))
        return cls("table", tuple(tuple(map(float, row)) for row in table))

    def table(self, grid: TimeGrid, m: int) -> np.ndarray:
        if self.kind == "zero":
            return np.zeros((grid.steps, m))
        arr = np.asarray(self.values, dtype=float)
        if self.kind == "constant":
            if arr.shape != (m,):
                raise InvalidArgumentError(f"constant input has {arr.size} entries, expected {m}")
            return np.tile(arr, (grid.steps, 1))
        if arr.shape != (grid.steps, m):
            raise InvalidArgumentError(f"input table has shape {arr.shape}, expected {(grid.steps, m)}")
        return arr.copy()

    def reversed_table(self, grid: TimeGrid, m: int) -> np.ndarray:
        """``u~`` on the closed-loop grid: step ``j`` uses ``-u`` of auxiliary step ``steps-1-j``."""
        return -self.table(grid, m)[::-1].copy()

    def to_dict(self) -> dict:
        d = {"kind": self.kind}
        if self.kind != "zero":
            d["values"] = np.asarray(self.values).tolist()
        return d

    @classmethod
    def from_dict(cls, d) -> "DeterministicInput":
        if d is None:
            return cls.zero()
        kind = d.get("kind", "zero")
        if kind == "zero":
            return cls.zero()
        if kind == "constant":
            return cls.constant(d["values"])
        return cls.from_table(d["values"])


def as_input(u) -> DeterministicInput:
    if u is None:
        return DeterministicInput.zero()
    if isinstance(u, DeterministicInput):
        return u
    arr = np.asarray(u, dtype=float)
    return DeterministicInput.constant(arr) if arr.ndim == 1 else DeterministicInput.from_table(arr)


@dataclass
class SynthesizedController:
    model: ScoreModel
    system: ControlAffineSystem
    grid: TimeGrid
    det_input: DeterministicInput
    x_f: np.ndarray
    sigma: float
    seed: int | None = None
    batch: TrajectoryBatch | None = field(default=None, repr=False)
    losses: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        self._u_rev = self.det_input.reversed_table(self.grid, self.system.control_dim)

    @property
    def epsilon(self) -> float:
        return self.system.epsilon

    def __call__(self, t, x):
        return controller_eval(self, t, x)


def controller_eval(ctrl: SynthesizedController, t: float, x) -> np.ndarray:
    """``eps^2 k*(T - t_j, x) + u~_j`` with ``t_j`` the grid time holding at ``t``."""
    T = ctrl.grid.horizon
    if not 0.0 <= t < T:
        raise OutOfRangeError(f"t={t} outside [0, {T})")
    j = min(ctrl.grid.index(t), ctrl.grid.steps - 1)
    s = T - j * ctrl.grid.dt
    return ctrl.epsilon**2 * ctrl.model.value(s, x) + ctrl._u_rev[j]


def input_standardisation(batch: TrajectoryBatch):
    """Per-coordinate mean and std of the auxiliary states (excluding ``t = 0``)."""
    z = batch.states[:, 1:].reshape(-1, batch.states.shape[-1])
    scale = z.std(axis=0)
    return z.mean(axis=0), np.where(scale > 1e-12, scale, 1.0)


def synthesize(
    sys: ControlAffineSystem,
    grid: TimeGrid,
    x_f,
    sigma: float,
    u=None,
    N: int = 1000,
    train_config: TrainConfig | None = None,
    seed: int = 0,
    model: ScoreModel | None = None,
    standardize: bool = True,
) -> SynthesizedController:
    """Run the full synthesis pipeline and return the feedback controller.

    The auxiliary batch is simulated with noise seed ``seed``; a fresh
    :class:`MlpModel` (initialised from ``seed``) is used unless ``model`` is
    given. The batch and the loss history are attached to the result.
    """
    cfg = train_config or TrainConfig()
    if N < cfg.k2:
        raise InvalidArgumentError(f"N={N} must be at least k2={cfg.k2}")
    u = as_input(u)
    x_f = sys.check_state(x_f)
    try:
        batch = simulate_auxiliary(sys, grid, N, x_f, sigma, u.table(grid, sys.control_dim), NoiseSource(seed))
    except RevsteerError as exc:
        raise type(exc)(f"[simulate] {exc}") from exc
    if model is None:
        shift, scale = input_standardisation(batch) if standardize else (None, None)
        model = MlpModel(sys.state_dim, sys.control_dim, grid.horizon, seed=seed, shift=shift, scale=scale)
    try:
        result = train(sys, model, batch, cfg)
    except RevsteerError as exc:
        raise type(exc)(f"[train] {exc}") from exc
    return SynthesizedController(model, sys, grid, u, np.array(x_f), float(sigma), seed, batch, result.losses)


def make_exact_linear_controller(lin: LinearSystem, grid: TimeGrid, x_f, sigma: float, u=None,
                                 system: ControlAffineSystem | None = None) -> SynthesizedController:
    """Controller whose score factor is the closed-form linear-Gaussian ``k*``."""
    u = as_input(u)
    moments = reverse_moments(lin, grid, x_f, sigma, u.table(grid, lin.m))
    if sigma == 0 and not lin.is_controllable():
        raise InvalidArgumentError("sigma = 0 requires a controllable (A, B)")
    return SynthesizedController(ExactLinearModel(moments), system or lin.to_system(), grid, u,
                                 np.asarray(x_f, dtype=float), float(sigma))


# ----------------------------------------------------------------------------
# bundles: manifest.json + model.ckpt


def manifest(ctrl: SynthesizedController, extra: dict | None = None) -> dict:
    sys = ctrl.system
    if sys.name is None:
        raise InvalidArgumentError("only registered systems can be saved in a bundle")
    d = {
        "system": {"name": sys.name, "params": _jsonable(sys.params), "epsilon": sys.epsilon},
        "grid": ctrl.grid.to_dict(),
        "x_f": np.asarray(ctrl.x_f).tolist(),
        "sigma": ctrl.sigma,
        "det_input": ctrl.det_input.to_dict(),
        "model": {"kind": ctrl.model.kind, "checkpoint": "model.ckpt"},
        "seeds": {"synthesis": ctrl.seed},
    }
    if extra:
        d.update(extra)
    return d


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple, np.ndarray)):
        return np.asarray(obj).tolist()
    return obj


def save_bundle(ctrl: SynthesizedController, directory, extra: dict | None = None) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    man = manifest(ctrl, extra)
    save_checkpoint(ctrl.model, directory / man["model"]["checkpoint"])
    (directory / "manifest.json").write_text(json.dumps(man, indent=2, sort_keys=True) + "\n")
    return directory


def load_bundle(directory) -> SynthesizedController:
    directory = Path(directory)
    man = json.loads((directory / "manifest.json").read_text())
    s = man["system"]
    sys = builtin_system(s["name"], s.get("params"), s["epsilon"])
    grid = TimeGrid(man["grid"]["T"], man["grid"]["dt"])
    u = DeterministicInput.from_dict(man.get("det_input"))
    x_f = np.asarray(man["x_f"], dtype=float)
    sigma = float(man["sigma"])
    seed = man.get("seeds", {}).get("synthesis")
    if man["model"]["kind"] == "exact_linear":
        ctrl = make_exact_linear_controller(LinearSystem.from_system(sys), grid, x_f, sigma, u, system=sys)
        ctrl.seed = seed
        return ctrl
    model = load_checkpoint(directory / man["model"]["checkpoint"])
    if model.state_dim != sys.state_dim or model.control_dim != sys.control_dim:
        raise InvalidArgumentError("checkpoint dimensions do not match the bundle's system")
    return SynthesizedController(model, sys, grid, u, x_f, sigma, seed)
