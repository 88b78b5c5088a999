"""Implicit score-matching objective restricted to ``psi = g k + frak_g``.

For a batch of points ``(t_p, x_p)`` the empirical objective is

    mean_p [ 1/2 ||psi(t_p, x_p)||^2 + sum_{j,l} G_jl(x_p) d_l psi_j(t_p, x_p) ]

with ``d_l (g k)_j = sum_r (d_l g_jr) k_r + g_jr d_l k_r``.
"""
from __future__ import annotations

import numpy as np

from ..dynamics import ControlAffineSystem, eval_frak_g, frak_g_jacobian
from ..errors import InvalidArgumentError, TrainingDivergenceError
from .models import ScoreModel


def _points(sys, t, x):
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if x.shape[0] == 0:
        raise InvalidArgumentError("empty batch")
    sys.check_state(x)
    t = np.broadcast_to(np.asarray(t, dtype=float), (x.shape[0],))
    if not (np.isfinite(x).all() and np.isfinite(t).all()):
        raise InvalidArgumentError("batch contains non-finite points")
    return t, x


def _geometry(sys: ControlAffineSystem, x):
    g = np.broadcast_to(sys.diffusion(x), x.shape + (sys.control_dim,))
    G = g @ np.swapaxes(g, -1, -2)
    if sys.constant_diffusion:
        return g, G, None, None, None
    dg = sys.diffusion_jacobian(x)
    return g, G, dg, eval_frak_g(sys, x), frak_g_jacobian(sys, x)


def _psi_terms(sys, k, Jk, geom):
    g, G, dg, fg, dfg = geom
    psi = np.einsum("pjr,pr->pj", g, k)
    Jpsi = np.einsum("pjr,prl->pjl", g, Jk)
    if dg is not None:
        psi = psi + fg
        Jpsi = Jpsi + np.einsum("pjrl,pr->pjl", dg, k) + dfg
    return psi, Jpsi


def model_divergence(sys: ControlAffineSystem, model: ScoreModel, t, x):
    """``sum_{j,l} G_jl d_l psi_j`` at each point (scalar for a single state)."""
    single = np.asarray(x).ndim == 1
    t, x = _points(sys, t, x)
    k, Jk, _ = model.forward(t, x)
    geom = _geometry(sys, x)
    _, Jpsi = _psi_terms(sys, k, Jk, geom)
    div = np.einsum("pjl,pjl->p", geom[1], Jpsi)
    return float(div[0]) if single else div


def _check_finite(values, t, x, what):
    bad = ~np.isfinite(values)
    if bad.any():
        p = int(np.argmax(bad))
        raise TrainingDivergenceError(f"non-finite {what} at point t={t[p]:.6g}, x={x[p].tolist()}")


def pointwise_loss(sys, model, t, x) -> np.ndarray:
    t, x = _points(sys, t, x)
    k, Jk, _ = model.forward(t, x)
    geom = _geometry(sys, x)
    psi, Jpsi = _psi_terms(sys, k, Jk, geom)
    return 0.5 * np.sum(psi**2, axis=1) + np.einsum("pjl,pjl->p", geom[1], Jpsi)


def ism_objective(sys: ControlAffineSystem, model: ScoreModel, t, x) -> float:
    """Empirical implicit score-matching loss over the batch."""
    t, x = _points(sys, t, x)
    vals = pointwise_loss(sys, model, t, x)
    _check_finite(vals, t, x, "loss")
    return float(vals.mean())


def loss_and_gradient(sys: ControlAffineSystem, model: ScoreModel, t, x):
    t, x = _points(sys, t, x)
    P = x.shape[0]
    k, Jk, cache = model.forward(t, x, cache=True)
    geom = _geometry(sys, x)
    g, G, dg, _, _ = geom
    psi, Jpsi = _psi_terms(sys, k, Jk, geom)
    vals = 0.5 * np.sum(psi**2, axis=1) + np.einsum("pjl,pjl->p", G, Jpsi)
    _check_finite(vals, t, x, "loss")

    adj_k = np.einsum("pjr,pj->pr", g, psi)
    if dg is not None:
        adj_k = adj_k + np.einsum("pjl,pjrl->pr", G, dg)
    adj_J = np.einsum("pjl,pjr->prl", G, g)
    grad = model.backward(cache, adj_k / P, adj_J / P)
    if not np.isfinite(grad).all():
        raise TrainingDivergenceError("non-finite loss gradient")
    return float(vals.mean()), grad


def loss_gradient(sys: ControlAffineSystem, model: ScoreModel, t, x) -> np.ndarray:
    """Gradient of :func:`ism_objective` with respect to ``model.params``."""
    return loss_and_gradient(sys, model, t, x)[1]
