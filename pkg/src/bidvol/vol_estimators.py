"""Per-round integrated-variance moment proxies from intra-round log returns.

Two estimators feed the regression features:

    realized variance      RV  = sum_t r_t^2
    long-run variance      NW  = T * (g_0 + 2 * sum_{k=1}^{L} w_k * g_k)

where g_k is the lag-k autocovariance of squared returns with divisor T
(not T - k) and w_k = 1 - k / (L + 1) are Bartlett weights.  RV proxies the
expected integrated variance of the round; NW proxies the variance of that
estimate.  The divisor-T autocovariance form can go slightly negative on
short windows, so the public estimator floors at zero and the flooring is
flagged per round.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError

# Floor substituted for a zero moment before it enters any log (scale model,
# log-log design).  Pre-scaling units, i.e. applied to RV / NW directly.
LOG_FLOOR = 1e-30


def _as_returns(returns) -> np.ndarray:
    r = np.asarray(returns, dtype=float)
    if r.ndim != 1 or r.size == 0:
        raise ValidationError("returns must be a non-empty 1-d vector")
    if not np.all(np.isfinite(r)):
        raise ValidationError("returns contain NaN or inf")
    return r


def realized_variance(returns) -> float:
    """Sum of squared log returns over the window."""
    r = _as_returns(returns)
    return float(np.dot(r, r))


def sq_return_autocov(returns, k: int) -> float:
    """Lag-k autocovariance of squared returns, divisor T."""
    r = _as_returns(returns)
    T = r.size
    if not 0 <= k <= T - 2:
        raise ValueError(f"lag k={k} outside [0, {T - 2}]")
    r2 = r * r
    d = r2 - r2.mean()
    return float(np.dot(d[k:], d[: T - k]) / T)


def bartlett_weight(k: int, L: int) -> float:
    return 1.0 - k / (L + 1.0)


def newey_west_raw(returns, L: int) -> float:
    """Unfloored long-run variance T * (g_0 + 2 * sum w_k g_k)."""
    r = _as_returns(returns)
    T = r.size
    if L < 0 or L >= T - 1:
        raise ValueError(f"lag truncation L={L} must satisfy 0 <= L <= {T - 2}")
    acc = sq_return_autocov(r, 0)
    for k in range(1, L + 1):
        acc += 2.0 * bartlett_weight(k, L) * sq_return_autocov(r, k)
    return float(T * acc)


def newey_west_var_iv(returns, L: int = 5) -> float:
    """Long-run variance of squared returns, floored at zero."""
    return max(newey_west_raw(returns, L), 0.0)


@dataclass(frozen=True)
class IvMoments:
    """Per-round moment proxies: mean (e_iv) and variance (var_iv) of IV."""

    round_id: int
    e_iv: float
    var_iv: float
    T: int
    L: int
    var_floored: bool


def round_moments(window, L: int = 5) -> IvMoments:
    """Compose both estimators over one round's return window."""
    raw = newey_west_raw(window.returns, L)
    return IvMoments(
        round_id=window.round_id,
        e_iv=realized_variance(window.returns),
        var_iv=max(raw, 0.0),
        T=int(np.asarray(window.returns).size),
        L=L,
        var_floored=raw < 0.0,
    )
