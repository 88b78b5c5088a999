"""Score models ``k(t, x) -> R^m`` exposing values, input Jacobians and
parameter gradients.

Every model works on batches: ``t`` has shape ``(P,)`` (or is a scalar) and
``x`` has shape ``(P, n)``. ``forward`` returns ``k`` of shape ``(P, m)`` and
``dk/dx`` of shape ``(P, m, n)``. ``param_gradient`` back-propagates adjoints
of *both* outputs into the flat parameter vector.
"""
from __future__ import annotations

import numpy as np

from ..errors import InvalidArgumentError
from ..sde_sim import TimeGrid


def _batch(t, x, n):
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    if x.shape[-1] != n:
        raise InvalidArgumentError(f"state dimension {x.shape[-1]}, model expects {n}")
    t = np.broadcast_to(np.asarray(t, dtype=float), (x.shape[0],))
    return t, x, single


class ScoreModel:
    """Common surface. Subclasses implement ``_forward`` and ``_backward``."""

    kind = "abstract"
    state_dim: int
    control_dim: int

    def __init__(self):
        self.params = np.zeros(0)

    @property
    def n_params(self) -> int:
        return self.params.size

    def set_params(self, theta) -> None:
        theta = np.asarray(theta, dtype=float)
        if theta.shape != self.params.shape:
            raise InvalidArgumentError(f"expected {self.params.shape} parameters, got {theta.shape}")
        self.params[...] = theta

    def forward(self, t, x, cache: bool = False):
        t, x, _ = _batch(t, x, self.state_dim)
        return self._forward(t, x, cache)

    def value(self, t, x) -> np.ndarray:
        tb, xb, single = _batch(t, x, self.state_dim)
        k = self._forward(tb, xb, False)[0]
        return k[0] if single else k

    def input_jacobian(self, t, x) -> np.ndarray:
        tb, xb, single = _batch(t, x, self.state_dim)
        J = self._forward(tb, xb, False)[1]
        return J[0] if single else J

    def param_gradient(self, t, x, adj_value, adj_jacobian) -> np.ndarray:
        """Gradient of ``sum(adj_value * k) + sum(adj_jacobian * dk/dx)``."""
        tb, xb, _ = _batch(t, x, self.state_dim)
        _, _, c = self._forward(tb, xb, True)
        return self.backward(c, np.asarray(adj_value).reshape(len(tb), -1),
                             np.asarray(adj_jacobian).reshape(len(tb), self.control_dim, self.state_dim))

    def backward(self, cache, adj_value, adj_jacobian) -> np.ndarray:
        return self._backward(cache, adj_value, adj_jacobian)

    def header(self) -> dict:
        raise NotImplementedError


# ----------------------------------------------------------------------------


def _elu(a):
    return np.where(a > 0, a, np.expm1(np.minimum(a, 0.0)))


def _elu_d1(a):
    return np.where(a > 0, 1.0, np.exp(np.minimum(a, 0.0)))


def _elu_d2(a):
    return np.where(a > 0, 0.0, np.exp(np.minimum(a, 0.0)))


class MlpModel(ScoreModel):
    """Residual ELU network on ``(t/T, (x - shift)/scale)``.

    An input layer lifts to ``width`` units (followed by an ELU), then
    ``blocks`` residual blocks ``h + W2 elu(W1 h + b1) + b2`` and a final affine
    read-out to ``R^m``. ``shift``/``scale`` are fixed (not trained) input
    standardisation constants.
    """

    kind = "mlp"

    def __init__(self, state_dim, control_dim, horizon, width=32, blocks=3, seed=0,
                 shift=None, scale=None, params=None):
        super().__init__()
        self.state_dim, self.control_dim = int(state_dim), int(control_dim)
        self.horizon = float(horizon)
        self.width, self.blocks = int(width), int(blocks)
        self.seed = int(seed)
        n, m, H = self.state_dim, self.control_dim, self.width
        self.shift = np.zeros(n) if shift is None else np.asarray(shift, dtype=float).copy()
        self.scale = np.ones(n) if scale is None else np.asarray(scale, dtype=float).copy()
        if self.shift.shape != (n,) or self.scale.shape != (n,) or np.any(self.scale <= 0):
            raise InvalidArgumentError("shift/scale must be length-n with positive scale")

        shapes = [("W_in", (H, n + 1)), ("b_in", (H,))]
        for b in range(self.blocks):
            shapes += [(f"W1_{b}", (H, H)), (f"b1_{b}", (H,)), (f"W2_{b}", (H, H)), (f"b2_{b}", (H,))]
        shapes += [("W_out", (m, H)), ("b_out", (m,))]
        self._shapes = shapes
        size = sum(int(np.prod(s)) for _, s in shapes)
        self.params = np.zeros(size)
        self._views = {}
        off = 0
        for name, s in shapes:
            k = int(np.prod(s))
            self._views[name] = self.params[off : off + k].reshape(s)
            off += k
        if params is not None:
            self.set_params(params)
        else:
            self._init(np.random.default_rng(self.seed))

    def _init(self, rng):
        for name, s in self._shapes:
            if name.startswith("W"):
                v = rng.standard_normal(s) / np.sqrt(s[1])
                if name.startswith("W2"):
                    v *= 0.5
                self._views[name][...] = v

    def __getitem__(self, name):
        return self._views[name]

    def header(self) -> dict:
        return {
            "kind": self.kind, "n": self.state_dim, "m": self.control_dim, "T": self.horizon,
            "width": self.width, "blocks": self.blocks, "seed": self.seed,
            "shift": self.shift.tolist(), "scale": self.scale.tolist(),
        }

    def _forward(self, t, x, cache):
        # Jacobians are carried transposed, shape (P, n, H), so that every
        # contraction with a weight matrix is a single 2-D matmul.
        P, n = x.shape
        H = self.width
        v = self._views
        z = np.empty((P, n + 1))
        z[:, 0] = t / self.horizon
        z[:, 1:] = (x - self.shift) / self.scale
        Win_x = v["W_in"][:, 1:] / self.scale  # d a0 / d x, (H, n)
        a0 = z @ v["W_in"].T + v["b_in"]
        d0 = _elu_d1(a0)
        h = _elu(a0)
        J = d0[:, None, :] * Win_x.T[None]
        saved = []
        for b in range(self.blocks):
            W1, b1, W2, b2 = v[f"W1_{b}"], v[f"b1_{b}"], v[f"W2_{b}"], v[f"b2_{b}"]
            a1 = h @ W1.T + b1
            d1 = _elu_d1(a1)
            r = _elu(a1)
            Ja = (J.reshape(-1, H) @ W1.T).reshape(P, n, H)
            Jr = d1[:, None, :] * Ja
            if cache:
                saved.append((h, J, a1, d1, r, Ja, Jr))
            h = h + r @ W2.T + b2
            J = J + (Jr.reshape(-1, H) @ W2.T).reshape(P, n, H)
        k = h @ v["W_out"].T + v["b_out"]
        Jk = (J.reshape(-1, H) @ v["W_out"].T).reshape(P, n, -1).transpose(0, 2, 1)
        c = (z, a0, d0, Win_x, saved, h, J) if cache else None
        return k, Jk, c

    def _backward(self, c, gk, gJk):
        z, a0, d0, Win_x, saved, h, J = c
        P, n, H = J.shape
        v = self._views
        grad = np.zeros_like(self.params)
        gv = {}
        off = 0
        for name, s in self._shapes:
            k = int(np.prod(s))
            gv[name] = grad[off : off + k].reshape(s)
            off += k

        gJkT = np.ascontiguousarray(gJk.transpose(0, 2, 1)).reshape(P * n, -1)  # (P n, m)
        gv["W_out"][...] = gk.T @ h + gJkT.T @ J.reshape(-1, H)
        gv["b_out"][...] = gk.sum(0)
        gh = gk @ v["W_out"]
        gJ = (gJkT @ v["W_out"]).reshape(P, n, H)
        for b in reversed(range(self.blocks)):
            hb, Jb, a1, d1, r, Ja, Jr = saved[b]
            W1, W2 = v[f"W1_{b}"], v[f"W2_{b}"]
            gJf = gJ.reshape(-1, H)
            # h' = h + W2 r + b2 ;  J' = J + W2 Jr
            gr = gh @ W2
            gJr = (gJf @ W2).reshape(P, n, H)
            gv[f"W2_{b}"][...] = gh.T @ r + gJf.T @ Jr.reshape(-1, H)
            gv[f"b2_{b}"][...] = gh.sum(0)
            # Jr = d1 * Ja ;  Ja = W1 J
            gd1 = (gJr * Ja).sum(axis=1)
            gJa = d1[:, None, :] * gJr
            ga1 = gr * d1 + gd1 * _elu_d2(a1)
            gJaf = gJa.reshape(-1, H)
            gv[f"W1_{b}"][...] = ga1.T @ hb + gJaf.T @ Jb.reshape(-1, H)
            gv[f"b1_{b}"][...] = ga1.sum(0)
            gh = gh + ga1 @ W1
            gJ = gJ + (gJaf @ W1).reshape(P, n, H)
        # h0 = elu(a0) ;  J0 = d0 * Win_x
        gd0 = (gJ * Win_x.T[None]).sum(axis=1)
        ga0 = gh * d0 + gd0 * _elu_d2(a0)
        gWin = ga0.T @ z
        gWin[:, 1:] += (gJ * d0[:, None, :]).sum(axis=0).T / self.scale
        gv["W_in"][...] = gWin
        gv["b_in"][...] = ga0.sum(0)
        return grad


class FeatureModel(ScoreModel):
    """Per-time-bin affine map ``k(t, x) = W_b x + c_b``.

    Bins are the grid times; ``t`` is snapped to the nearest grid point.
    """

    kind = "feature"

    def __init__(self, state_dim, control_dim, grid: TimeGrid, params=None):
        super().__init__()
        self.state_dim, self.control_dim = int(state_dim), int(control_dim)
        self.grid = grid
        n, m, B = self.state_dim, self.control_dim, grid.steps + 1
        self.params = np.zeros(B * m * (n + 1))
        self.W = self.params[: B * m * n].reshape(B, m, n)
        self.c = self.params[B * m * n :].reshape(B, m)
        if params is not None:
            self.set_params(params)

    @property
    def horizon(self) -> float:
        return self.grid.horizon

    def bins(self, t) -> np.ndarray:
        b = np.rint(np.asarray(t, dtype=float) / self.grid.dt).astype(int)
        return np.clip(b, 0, self.grid.steps)

    def header(self) -> dict:
        return {"kind": self.kind, "n": self.state_dim, "m": self.control_dim,
                "T": self.grid.horizon, "dt": self.grid.dt}

    def _forward(self, t, x, cache):
        b = self.bins(t)
        W = self.W[b]
        k = np.einsum("prl,pl->pr", W, x) + self.c[b]
        return k, W.copy(), ((b, x) if cache else None)

    def _backward(self, c, gk, gJk):
        b, x = c
        grad = np.zeros_like(self.params)
        B, m, n = self.W.shape
        gW = grad[: B * m * n].reshape(B, m, n)
        gc = grad[B * m * n :].reshape(B, m)
        np.add.at(gW, b, gk[:, :, None] * x[:, None, :] + gJk)
        np.add.at(gc, b, gk)
        return grad


class ExactLinearModel(ScoreModel):
    """Closed-form ``k*(s, x) = -B^T Q_s^{-1} (x - m_s)`` of a linear-Gaussian auxiliary process."""

    kind = "exact_linear"

    def __init__(self, moments):
        super().__init__()
        self.moments = moments
        lin = moments.lin
        self.state_dim, self.control_dim = lin.n, lin.m
        self.horizon = moments.grid.horizon

    def header(self) -> dict:
        return {"kind": self.kind, "n": self.state_dim, "m": self.control_dim, "T": self.horizon}

    def _gain(self, s):
        from ..lingauss import _spd_solve

        m, Q = self.moments.at(float(s))
        B = self.moments.lin.B
        # -B^T Q^{-1}, via solves against B
        return -_spd_solve(Q, B.T.copy(), f"t={s:.6g}"), m

    def _forward(self, t, x, cache):
        P = x.shape[0]
        k = np.empty((P, self.control_dim))
        J = np.empty((P, self.control_dim, self.state_dim))
        for s in np.unique(t):
            sel = t == s
            K, m = self._gain(s)
            k[sel] = (x[sel] - m) @ K.T
            J[sel] = K
        return k, J, None

    def _backward(self, c, gk, gJk):
        return np.zeros(0)
