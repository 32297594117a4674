"""Instrument-quality scaling: estimate delta(s) and rescale the instrument.

The instrument M(s) relates to the latent covariate through
M(s) = delta(s) X(s) + noise. Pointwise ratios of sample means estimate
delta(s), optionally smoothed; the scaled instrument M*(s) = M(s)/delta(s)
then enters the model as an unbiased second proxy of X(s).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import GridMismatch, ZeroDelta, ZeroDenominator
from .fda import FunctionalDataset, Grid


@dataclass(frozen=True)
class DeltaEstimate:
    grid: Grid
    raw: np.ndarray
    smoothed: np.ndarray
    bandwidth: float


def _gaussian_smooth(points: np.ndarray, y: np.ndarray, bandwidth: float) -> np.ndarray:
    """Nadaraya-Watson smoother with a Gaussian kernel on the grid."""
    d = points[:, None] - points[None, :]
    k = np.exp(-0.5 * (d / bandwidth) ** 2)
    k /= k.sum(axis=1, keepdims=True)
    return k @ y


def estimate_delta(
    W: FunctionalDataset, M: FunctionalDataset, bandwidth: float = 0.0
) -> DeltaEstimate:
    """Pointwise ratio of column sums, sum_i M_i(s) / sum_i W_i(s).

    bandwidth = 0 disables smoothing; otherwise the raw ratios are smoothed
    with a Gaussian kernel of the given bandwidth.
    """
    if not W.grid.matches(M.grid) or W.n != M.n:
        raise GridMismatch("W and M must share grid and number of curves")
    if bandwidth < 0:
        raise ValueError("bandwidth must be nonnegative")
    sw = W.values.sum(axis=0)
    sm = M.values.sum(axis=0)
    # Near-zero denominators violate the identifying assumption E{X(s)} != 0.
    col_rms = np.sqrt(np.mean(W.values**2, axis=0))
    bad = np.abs(sw) <= 1e-12 * W.n * np.maximum(col_rms, 1e-300)
    if np.any(bad):
        s = W.grid.points[np.argmax(bad)]
        raise ZeroDenominator(f"sum of W over curves vanishes at s={s:g}")
    raw = sm / sw
    if bandwidth == 0:
        smoothed = raw.copy()
    else:
        smoothed = _gaussian_smooth(W.grid.points, raw, bandwidth)
    return DeltaEstimate(grid=W.grid, raw=raw, smoothed=smoothed, bandwidth=float(bandwidth))


def scale_instrument(M: FunctionalDataset, delta: DeltaEstimate) -> FunctionalDataset:
    """Return M* with values M_i(s) / delta_smoothed(s)."""
    if not M.grid.matches(delta.grid):
        raise GridMismatch("instrument grid differs from delta grid")
    zero = ~np.isfinite(delta.smoothed) | (delta.smoothed == 0.0)
    if np.any(zero):
        t = int(np.argmax(zero))
        raise ZeroDelta(f"smoothed delta is zero or non-finite at grid index {t}")
    return FunctionalDataset(
        grid=M.grid, values=M.values / delta.smoothed, curve_ids=M.curve_ids
    )


def default_bandwidth(grid: Grid) -> float:
    """Twice the mean grid spacing; the package-wide smoothing default."""
    return 2.0 * grid.length / (grid.T - 1)
