"""Local-level (random walk plus noise) smoothing of bin-level series.

Model, per collection and bin index b:

    y_b  = mu_b + eps_b,      eps_b ~ N(0, sigma2_eps)
    mu_b = mu_{b-1} + eta_b,  eta_b ~ N(0, sigma2_eta)

The level is initialized diffusely by absorbing the first non-missing
observation (posterior mean y_t0, variance sigma2_eps), which is the exact
diffuse limit for this model; the likelihood then sums over the remaining
innovations.  Missing observations skip the measurement update.  Variances
are estimated by maximum likelihood over the signal-to-noise ratio
q = sigma2_eta / sigma2_eps with sigma2_eps profiled out, searched on a log-q
grid refined by golden section.  Smoothed levels are the fixed-interval
(Rauch-Tung-Striebel) posterior means given all observations.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import pandas as pd

#: Lower bound applied to estimated variances so degenerate (constant-series)
#: fits stay strictly positive.
VARIANCE_FLOOR = 1e-12

_LOG_Q_GRID = np.linspace(-18.0, 18.0, 61)
_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass
class LocalLevelFit:
    sigma2_eps: float
    sigma2_eta: float
    loglik: float
    smoothed_levels: np.ndarray
    converged: bool
    n_obs: int


def kalman_smooth(
    y: np.ndarray, sigma2_eps: float, sigma2_eta: float
) -> tuple[np.ndarray, float]:
    """Smoothed levels and exact-diffuse log-likelihood at fixed variances.

    ``y`` may contain NaN for missing bins; smoothed levels are returned for
    every index (indices before the first observation extend the first
    smoothed level backward, which is the diffuse-prior posterior mean).
    """
    y = np.asarray(y, dtype=float)
    n = y.size
    observed = np.isfinite(y)
    obs_idx = np.flatnonzero(observed)
    if obs_idx.size == 0:
        return np.full(n, np.nan), np.nan
    t0 = int(obs_idx[0])

    a_pred = np.zeros(n)
    p_pred = np.zeros(n)
    a_filt = np.zeros(n)
    p_filt = np.zeros(n)
    loglik = 0.0

    a_filt[t0] = y[t0]
    p_filt[t0] = sigma2_eps
    a_pred[t0] = y[t0]
    p_pred[t0] = sigma2_eps
    for t in range(t0 + 1, n):
        a_pred[t] = a_filt[t - 1]
        p_pred[t] = p_filt[t - 1] + sigma2_eta
        if observed[t]:
            innovation = y[t] - a_pred[t]
            f = p_pred[t] + sigma2_eps
            gain = p_pred[t] / f
            a_filt[t] = a_pred[t] + gain * innovation
            p_filt[t] = (1.0 - gain) * p_pred[t]
            loglik -= 0.5 * (math.log(2.0 * math.pi) + math.log(f) + innovation**2 / f)
        else:
            a_filt[t] = a_pred[t]
            p_filt[t] = p_pred[t]

    smoothed = np.empty(n)
    smoothed[n - 1] = a_filt[n - 1]
    for t in range(n - 2, t0 - 1, -1):
        c = p_filt[t] / p_pred[t + 1]
        smoothed[t] = a_filt[t] + c * (smoothed[t + 1] - a_pred[t + 1])
    smoothed[:t0] = smoothed[t0]
    return smoothed, loglik


def _profile(y: np.ndarray, observed: np.ndarray, t0: int, log_q: float) -> tuple[float, float]:
    """Profile log-likelihood over sigma2_eps at signal-to-noise ratio exp(log_q).

    Runs the filter in sigma2_eps = 1 units; the ML scale is the mean
    normalized squared innovation over the non-diffuse terms.
    """
    q = math.exp(log_q)
    n = y.size
    a = y[t0]
    p = 1.0
    sum_sq = 0.0
    sum_logf = 0.0
    count = 0
    for t in range(t0 + 1, n):
        p = p + q
        if observed[t]:
            f = p + 1.0
            v = y[t] - a
            gain = p / f
            a = a + gain * v
            p = (1.0 - gain) * p
            sum_sq += v * v / f
            sum_logf += math.log(f)
            count += 1
    if count == 0:
        return -np.inf, np.nan
    sigma2_eps = sum_sq / count
    if sigma2_eps <= 0.0:
        return -np.inf, 0.0
    loglik = -0.5 * (
        count * math.log(2.0 * math.pi) + count * math.log(sigma2_eps) + sum_logf + count
    )
    return loglik, sigma2_eps


def fit_local_level(y: np.ndarray) -> LocalLevelFit:
    """Maximum-likelihood local-level fit of one (possibly gappy) series.

    Fewer than two observations: the series passes through unchanged with
    ``converged=False``.  A constant series is returned exactly, with both
    variances at the floor.
    """
    y = np.asarray(y, dtype=float)
    observed = np.isfinite(y)
    obs_idx = np.flatnonzero(observed)
    n_obs = int(obs_idx.size)
    if n_obs < 2:
        return LocalLevelFit(0.0, 0.0, np.nan, y.copy(), False, n_obs)
    t0 = int(obs_idx[0])
    values = y[observed]
    if np.all(values == values[0]):
        smoothed = np.full(y.size, values[0], dtype=float)
        _, loglik = kalman_smooth(y, VARIANCE_FLOOR, VARIANCE_FLOOR)
        return LocalLevelFit(VARIANCE_FLOOR, VARIANCE_FLOOR, loglik, smoothed, True, n_obs)

    grid_vals = [_profile(y, observed, t0, lq)[0] for lq in _LOG_Q_GRID]
    best_i = int(np.argmax(grid_vals))
    lo = _LOG_Q_GRID[max(best_i - 1, 0)]
    hi = _LOG_Q_GRID[min(best_i + 1, len(_LOG_Q_GRID) - 1)]
    # Golden-section refinement inside the bracketing grid cell.
    x1 = hi - _GOLDEN * (hi - lo)
    x2 = lo + _GOLDEN * (hi - lo)
    f1 = _profile(y, observed, t0, x1)[0]
    f2 = _profile(y, observed, t0, x2)[0]
    for _ in range(80):
        if hi - lo < 1e-10:
            break
        if f1 < f2:
            lo, x1, f1 = x1, x2, f2
            x2 = lo + _GOLDEN * (hi - lo)
            f2 = _profile(y, observed, t0, x2)[0]
        else:
            hi, x2, f2 = x2, x1, f1
            x1 = hi - _GOLDEN * (hi - lo)
            f1 = _profile(y, observed, t0, x1)[0]
    log_q = x1 if f1 >= f2 else x2
    loglik_hat, sigma2_eps = _profile(y, observed, t0, log_q)
    if not np.isfinite(loglik_hat) or loglik_hat < grid_vals[best_i]:
        log_q = float(_LOG_Q_GRID[best_i])
        loglik_hat, sigma2_eps = _profile(y, observed, t0, log_q)
    sigma2_eps = max(float(sigma2_eps), VARIANCE_FLOOR)
    sigma2_eta = max(float(math.exp(log_q) * sigma2_eps), VARIANCE_FLOOR)
    smoothed, loglik = kalman_smooth(y, sigma2_eps, sigma2_eta)
    converged = bool(np.isfinite(loglik))
    return LocalLevelFit(sigma2_eps, sigma2_eta, loglik, smoothed, converged, n_obs)


def smooth_series(
    panel: pd.DataFrame, variable: str
) -> tuple[pd.Series, pd.DataFrame]:
    """Per-collection local-level smoothing of one bin-panel column.

    Returns the smoothed column (aligned to ``panel``) and a per-collection
    diagnostics frame.  Collections where the fit degenerates pass the raw
    series through; the run never aborts.
    """
    if variable not in panel.columns:
        raise ValueError(f"unknown panel variable {variable!r}")
    ordered = panel.sort_values(["collection_code", "bin_index"], kind="stable")
    out = pd.Series(np.nan, index=panel.index, dtype=float)
    diagnostics = []
    for code, idx in ordered.groupby("collection_code", sort=True).indices.items():
        rows = ordered.index[idx]
        fit = fit_local_level(ordered.loc[rows, variable].to_numpy(dtype=float))
        out.loc[rows] = fit.smoothed_levels
        diagnostics.append(
            {
                "collection_code": code,
                "variable": variable,
                "sigma2_eps": fit.sigma2_eps,
                "sigma2_eta": fit.sigma2_eta,
                "loglik": fit.loglik,
                "converged": fit.converged,
                "n_obs": fit.n_obs,
            }
        )
    return out, pd.DataFrame(diagnostics)
