"""Small synthetic series and a least-squares reference forecaster."""

from __future__ import annotations

import numpy as np

from .data import TimeSeriesDataset, from_array

# (period, amplitude, phase) of the driver signal's components
DEFAULT_COMPONENTS = ((24.0, 1.0, 0.0), (57.0, 0.6, 0.5), (133.0, 0.4, 1.3))


def lagged_pair(n_steps: int = 3000, lag: int = 12, noise: float = 0.05, seed: int = 0,
                components=DEFAULT_COMPONENTS) -> TimeSeriesDataset:
    """Two variables: ``y1`` a sum of sinusoids, ``y2[t] = y1[t - lag] + noise * N(0, 1)``.

    ``y2`` is a delayed copy of ``y1``, so its next ``lag`` steps are visible in
    ``y1``'s history; only a model that looks across variables can use that.
    """
    rng = np.random.default_rng(seed)
    t = np.arange(n_steps + lag, dtype=np.float64)
    y1 = sum(a * np.sin(2 * np.pi * t / p + ph) for p, a, ph in components)
    y2 = y1[:-lag] + noise * rng.standard_normal(n_steps)
    values = np.stack([y1[lag:], y2], axis=1)
    ds = from_array(values, ["y1", "y2"])
    return TimeSeriesDataset(ds.values, ds.variable_names, tuple(str(i) for i in range(n_steps)))


def ols_forecast(train: tuple[np.ndarray, np.ndarray], histories: np.ndarray,
                 ridge: float = 0.0) -> np.ndarray:
    """Per-variable least squares ``L -> O`` map with intercept, fitted on ``train`` windows.

    ``train`` is ``(histories[n, L, C], targets[n, O, C])``; each variable gets
    its own weights and only sees its own history.
    """
    hist, tgt = train
    n, L, C = hist.shape
    out = np.empty((histories.shape[0], tgt.shape[1], C))
    for c in range(C):
        a = np.hstack([hist[:, :, c], np.ones((n, 1))])
        if ridge:
            w = np.linalg.solve(a.T @ a + ridge * np.eye(L + 1), a.T @ tgt[:, :, c])
        else:
            w, *_ = np.linalg.lstsq(a, tgt[:, :, c], rcond=None)
        q = np.hstack([histories[:, :, c], np.ones((histories.shape[0], 1))])
        out[:, :, c] = q @ w
    return out
