"""Second-order update machinery shared by the server and the clients.

Gradients and periodic diagonal-curvature estimates are smoothed with
exponential moving averages; the server step divides the smoothed gradient
by the (scaled, floored) curvature and clips each coordinate to [-1, 1],
so no parameter ever moves more than the learning rate in one round.
The proximal gradient used by the FedProx baseline lives here too;
FedAvg is the mu = 0 special case.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class SophiaConfig:
    """Hyperparameters of the clipped second-order update."""

    eta: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.99
    gamma: float = 0.01
    epsilon: float = 1e-12
    tau: int = 10

    def __post_init__(self):
        if self.eta <= 0:
            raise ValueError("eta must be > 0")
        if not 0.0 <= self.beta1 < 1.0:
            raise ValueError("beta1 must be in [0, 1)")
        if not 0.0 <= self.beta2 < 1.0:
            raise ValueError("beta2 must be in [0, 1)")
        if self.gamma <= 0:
            raise ValueError("gamma must be > 0")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be > 0")
        if self.tau < 1:
            raise ValueError("tau must be a positive integer")


@dataclass
class EmaState:
    """Per-client smoothed gradient m and smoothed curvature h."""

    m: np.ndarray
    h: np.ndarray
    last_h_round: int = -1

    def __post_init__(self):
        self.m = np.asarray(self.m, dtype=np.float64)
        self.h = np.asarray(self.h, dtype=np.float64)
        if self.m.shape != self.h.shape:
            raise ValueError("m and h must have the same length")

    @classmethod
    def zeros(cls, d: int) -> "EmaState":
        return cls(np.zeros(d), np.zeros(d))


def _check_same_length(*vecs: np.ndarray) -> None:
    lengths = {v.shape for v in vecs}
    if len(lengths) != 1:
        raise ValueError(f"vector length mismatch: {sorted(lengths)}")


def ema_moment(m_prev: np.ndarray, g_hat: np.ndarray, beta1: float) -> np.ndarray:
    """beta1 * m_prev + (1 - beta1) * g_hat, element-wise."""
    m_prev = np.asarray(m_prev, dtype=np.float64)
    g_hat = np.asarray(g_hat, dtype=np.float64)
    _check_same_length(m_prev, g_hat)
    return beta1 * m_prev + (1.0 - beta1) * g_hat


def ema_hessian(
    state: EmaState, h_hat: np.ndarray, beta2: float, k: int, tau: int
) -> np.ndarray:
    """Refresh the curvature EMA on rounds where k mod tau == 0.

    Off-refresh rounds return the previous vector unchanged (the same
    array, bit for bit).
    """
    if tau < 1:
        raise ValueError("tau must be >= 1")
    if k % tau != 0:
        return state.h
    h_hat = np.asarray(h_hat, dtype=np.float64)
    _check_same_length(state.h, h_hat)
    return beta2 * state.h + (1.0 - beta2) * h_hat


def clip_elementwise(z: np.ndarray, threshold: float) -> np.ndarray:
    """Clamp every coordinate into [-threshold, threshold]."""
    if threshold <= 0:
        raise ValueError("clip threshold must be > 0")
    return np.clip(np.asarray(z, dtype=np.float64), -threshold, threshold)


def sophia_direction(
    m_bar: np.ndarray, h_bar: np.ndarray, gamma: float, epsilon: float
) -> np.ndarray:
    """clip(m / max(gamma * h, epsilon), 1) per coordinate.

    The epsilon floor keeps the denominator positive, so a tiny or
    negative curvature estimate degrades to a plain sign step after
    clipping rather than a blow-up.
    """
    m_bar = np.asarray(m_bar, dtype=np.float64)
    h_bar = np.asarray(h_bar, dtype=np.float64)
    _check_same_length(m_bar, h_bar)
    if gamma <= 0 or epsilon <= 0:
        raise ValueError("gamma and epsilon must be > 0")
    denom = np.maximum(gamma * h_bar, epsilon)
    return clip_elementwise(m_bar / denom, 1.0)


def apply_step(theta: np.ndarray, direction: np.ndarray, eta: float) -> np.ndarray:
    """theta - eta * direction."""
    theta = np.asarray(theta, dtype=np.float64)
    direction = np.asarray(direction, dtype=np.float64)
    _check_same_length(theta, direction)
    return theta - eta * direction


def fedprox_grad(
    g: np.ndarray, theta: np.ndarray, theta_global: np.ndarray, mu: float
) -> np.ndarray:
    """Local gradient plus the proximal pull mu * (theta - theta_global)."""
    g = np.asarray(g, dtype=np.float64)
    theta = np.asarray(theta, dtype=np.float64)
    theta_global = np.asarray(theta_global, dtype=np.float64)
    _check_same_length(g, theta, theta_global)
    if mu < 0:
        raise ValueError("mu must be >= 0")
    return g + mu * (theta - theta_global)
