"""Constant-velocity Kalman filtering of per-frame pixel series."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class TooShort(ValueError):
    pass


@dataclass(frozen=True)
class KalmanConfig:
    """Noise settings in pixel units.

    ``q`` is the variance of the per-frame velocity increment (px^2/frame^2),
    entering as discrete white-noise acceleration; ``r`` is the measurement
    variance (px^2); ``p0`` scales the initial identity covariance.
    """

    q: float = 0.05
    r: float = 4.0
    p0: float = 10.0

    def __post_init__(self):
        if not (self.q > 0 and self.r > 0 and self.p0 > 0):
            raise ValueError("q, r and p0 must be positive")


@dataclass
class KalmanState:
    state: np.ndarray  # (position px, velocity px/frame)
    covariance: np.ndarray


F = np.array([[1.0, 1.0], [0.0, 1.0]])
_Q_SHAPE = np.array([[0.25, 0.5], [0.5, 1.0]])


def kalman_init(first_three, cfg: KalmanConfig = KalmanConfig()) -> KalmanState:
    """Position from the median of the first three measurements, zero velocity."""
    vals = np.asarray(first_three, dtype=float)
    if vals.shape != (3,) or not np.all(np.isfinite(vals)):
        raise ValueError("expected exactly three finite measurements")
    return KalmanState(np.array([float(np.median(vals)), 0.0]), cfg.p0 * np.eye(2))


def predict(s: KalmanState, cfg: KalmanConfig) -> KalmanState:
    P = F @ s.covariance @ F.T + cfg.q * _Q_SHAPE
    return KalmanState(F @ s.state, 0.5 * (P + P.T))


def update(s: KalmanState, z: float, cfg: KalmanConfig) -> KalmanState:
    P = s.covariance
    innov = z - s.state[0]
    S = P[0, 0] + cfg.r
    K = P[:, 0] / S
    x = s.state + K * innov
    # Joseph form keeps P symmetric positive semidefinite
    IKH = np.eye(2) - np.outer(K, [1.0, 0.0])
    P = IKH @ P @ IKH.T + cfg.r * np.outer(K, K)
    return KalmanState(x, 0.5 * (P + P.T))


def kalman_smooth(frame_indices, values, cfg: KalmanConfig = KalmanConfig(), return_states=False):
    """Causally filter a possibly gappy series onto its full integer frame grid.

    Parameters
    ----------
    frame_indices : array-like of int
        Strictly increasing frame numbers of the measurements.
    values : array-like of float
        Measurements at those frames.

    Returns
    -------
    grid : ndarray of int
        ``first .. last`` frame index inclusive.
    filtered : ndarray
        Filtered positions on ``grid``; gap frames are predict-only.
    """
    fi = np.asarray(frame_indices, dtype=int)
    z = np.asarray(values, dtype=float)
    if fi.shape != z.shape or fi.ndim != 1:
        raise ValueError("frame_indices and values must be 1-D and equally long")
    if len(z) < 3:
        raise TooShort(f"need at least 3 measurements, got {len(z)}")
    if np.any(np.diff(fi) <= 0):
        raise ValueError("frame_indices must be strictly increasing")
    grid = np.arange(fi[0], fi[-1] + 1)
    meas = dict(zip(fi.tolist(), z.tolist()))
    s = kalman_init(z[:3], cfg)
    out = np.empty(len(grid))
    states = []
    for n, f in enumerate(grid):
        if n:
            s = predict(s, cfg)
        if f in meas:
            s = update(s, meas[f], cfg)
        out[n] = s.state[0]
        if return_states:
            states.append(s)
    if return_states:
        return grid, out, states
    return grid, out
