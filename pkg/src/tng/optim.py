"""Shared numerics: ridge solves and small gradient optimizers."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def ridge_closed_form(x: np.ndarray, y: np.ndarray, lam: float, fit_bias: bool = True):
    """Exact minimizer of sum ||y_i - (W^T x_i + b)||^2 + lam * ||theta||^2.

    The bias column is part of theta and is penalized like every other
    parameter.  Returns (weights, bias) with weights shaped (d, k).
    """
    if lam <= 0:
        raise ValueError("ridge penalty must be > 0")
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if y.ndim == 1:
        y = y[:, None]
    xt = np.hstack([x, np.ones((len(x), 1))]) if fit_bias else x
    gram = xt.T @ xt + lam * np.eye(xt.shape[1])
    sol = np.linalg.solve(gram, xt.T @ y)
    if fit_bias:
        return sol[:-1], sol[-1]
    return sol, np.zeros(y.shape[1])


def ridge_loss(x: np.ndarray, y: np.ndarray, weights: np.ndarray, bias: np.ndarray, lam: float) -> float:
    resid = x @ weights + bias - y
    return float((resid ** 2).sum() + lam * ((weights ** 2).sum() + (bias ** 2).sum()))


@dataclass
class GradientConfig:
    """Settings for gradient-mode training.

    method "adam" follows the usual first/second-moment updates with an
    exponentially decaying learning rate; "gd" is plain gradient descent
    whose default rate is set from the largest Hessian eigenvalue, which
    makes the recorded loss trace provably non-increasing on the ridge
    objective.
    """

    rate: float | None = None
    steps: int = 3000
    batch: int | None = None
    method: str = "adam"
    momentum_decay: float = 0.9
    scale_decay: float = 0.999
    rate_floor_fraction: float = 1e-4


def adam_minimize(grad_fn, w0: np.ndarray, cfg: GradientConfig, loss_fn=None):
    """Generic Adam loop over a flat parameter vector.

    Returns (w, trace) where trace holds loss_fn values recorded at every
    step (empty when loss_fn is None).
    """
    w = w0.astype(float).copy()
    m = np.zeros_like(w)
    v = np.zeros_like(w)
    lr0 = cfg.rate if cfg.rate is not None else 0.05
    decay = cfg.rate_floor_fraction ** (1.0 / max(cfg.steps, 1))
    b1, b2, eps = cfg.momentum_decay, cfg.scale_decay, 1e-8
    trace = []
    for t in range(1, cfg.steps + 1):
        g = grad_fn(w)
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        m_hat = m / (1 - b1 ** t)
        v_hat = v / (1 - b2 ** t)
        w -= (lr0 * decay ** t) * m_hat / (np.sqrt(v_hat) + eps)
        if loss_fn is not None:
            trace.append(loss_fn(w))
    return w, np.array(trace)


def gd_minimize(grad_fn, w0: np.ndarray, cfg: GradientConfig, rate: float, loss_fn=None):
    w = w0.astype(float).copy()
    trace = []
    for _ in range(cfg.steps):
        w -= rate * grad_fn(w)
        if loss_fn is not None:
            trace.append(loss_fn(w))
    return w, np.array(trace)


def max_curvature(gram: np.ndarray, lam: float) -> float:
    """Largest eigenvalue of the ridge Hessian 2 * (gram + lam I)."""
    return 2.0 * (float(np.linalg.eigvalsh(gram)[-1]) + lam)


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)
