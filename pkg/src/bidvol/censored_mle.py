"""Heteroskedastic left-censored regression (Tobit) with Student-t or Gaussian errors.

Per observation i with features (x1, x2) and bid b:

    b_i        = max(C, v_i)                                  observed, left-censored
    v_i        = theta0 + theta1 * x1 + theta2 * x2 + eps_i   latent valuation
    log s_i    = gamma0 + gamma1 * log x1 + gamma2 * log x2   conditional scale
    eps_i/s_i  ~ t(nu)  or  N(0, 1)

The reduced variant drops x2 from BOTH equations.  The log-log form applies
the same likelihood to the log bid (natural log of the raw wei amount by
default) and log features, with the censor point transformed accordingly.

The log-likelihood sums -log(s) + log f((b - mu)/s) over uncensored rows and
log F((C - mu)/s) over censored rows.  Fitting maximizes it by quasi-Newton
iteration with nu reparameterized as nu = 0.1 + exp(eta); standard errors come
from the inverse observed information (numerical Hessian, central
differences).  The score is analytic in theta and gamma; the nu component is
a central difference because the t CDF has no closed-form dof derivative.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace
from typing import NamedTuple

import numpy as np
from scipy import optimize, special, stats

from .errors import EstimationError, ValidationError
from .market_data import WEI_PER_UNIT, X1_SCALE, X2_SCALE, RoundDataset
from .vol_estimators import LOG_FLOOR

log = logging.getLogger(__name__)

NU_FLOOR = 0.1
# Floors applied to the scaled features before any log; LOG_FLOOR is in
# pre-scaling units, so each feature gets its own scale constant.
X1_FLOOR = LOG_FLOOR * X1_SCALE
X2_FLOOR = LOG_FLOOR * X2_SCALE

FORMS = ("linear", "loglog")
FAMILIES = ("student_t", "gaussian")


@dataclass(frozen=True)
class TobitSpec:
    """Model form: linear or log-log, t or Gaussian errors, full or reduced."""

    form: str = "linear"
    error_family: str = "student_t"
    include_var_iv: bool = True          # full model; False drops x2 everywhere
    censor_point: float = 1.0            # C in bid units (1.0 = 0.001 ETH)
    feature_transform: str = "contemporaneous"   # or "lagged"; bookkeeping only
    loglog_bid_base: str = "wei"         # "wei" or "eth" response base for loglog

    def __post_init__(self):
        if self.form not in FORMS:
            raise ValueError(f"form must be one of {FORMS}")
        if self.error_family not in FAMILIES:
            raise ValueError(f"error_family must be one of {FAMILIES}")
        if self.loglog_bid_base not in ("wei", "eth"):
            raise ValueError("loglog_bid_base must be 'wei' or 'eth'")
        if self.censor_point <= 0:
            raise ValueError("censor_point must be positive")


@dataclass
class TobitParams:
    """Location/scale coefficients and (for t errors) the tail parameter."""

    theta: np.ndarray
    gamma: np.ndarray
    nu: float | None = None

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=float)
        self.gamma = np.asarray(self.gamma, dtype=float)


@dataclass
class TobitFit:
    """Fitted model: estimates, standard errors and fit statistics."""

    spec: TobitSpec
    param_names: list[str]
    estimates: np.ndarray
    std_errors: np.ndarray | None
    loglik: float
    aic: float
    bic: float
    n_obs: int
    n_censored: int
    n_params: int
    converged: bool
    mcfadden_r2: float | None = None

    @property
    def params(self) -> TobitParams:
        p = sum(1 for name in self.param_names if name.startswith("theta"))
        q = sum(1 for name in self.param_names if name.startswith("gamma"))
        nu = self.estimates[-1] if "nu" in self.param_names else None
        return TobitParams(
            theta=self.estimates[:p], gamma=self.estimates[p : p + q], nu=nu
        )

    def estimate(self, name: str) -> float:
        return float(self.estimates[self.param_names.index(name)])

    def std_error(self, name: str) -> float | None:
        if self.std_errors is None:
            return None
        return float(self.std_errors[self.param_names.index(name)])

    def to_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("parameter,estimate,std_error\n")
            for i, name in enumerate(self.param_names):
                se = "" if self.std_errors is None else repr(float(self.std_errors[i]))
                fh.write(f"{name},{float(self.estimates[i])!r},{se}\n")
            nu = self.params.nu
            stats_block = [
                ("loglik", repr(float(self.loglik))),
                ("aic", repr(float(self.aic))),
                ("bic", repr(float(self.bic))),
                ("mcfadden_r2", "" if self.mcfadden_r2 is None else repr(float(self.mcfadden_r2))),
                ("nu", "" if nu is None else repr(float(nu))),
                ("n_obs", str(self.n_obs)),
                ("n_censored", str(self.n_censored)),
                ("converged", "true" if self.converged else "false"),
            ]
            for key, val in stats_block:
                fh.write(f"{key},{val},\n")


def t_log_density(x, nu: float):
    """Log density of the standard Student-t with nu degrees of freedom."""
    if nu <= 0:
        raise ValueError("nu must be positive")
    arr = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise ValidationError("non-finite residual passed to t_log_density")
    c = (
        special.gammaln((nu + 1.0) / 2.0)
        - special.gammaln(nu / 2.0)
        - 0.5 * math.log(nu * math.pi)
    )
    out = c - 0.5 * (nu + 1.0) * np.log1p(arr * arr / nu)
    return float(out) if arr.ndim == 0 else out


def t_log_cdf(x, nu: float):
    """Log CDF of the standard Student-t via the regularized incomplete beta.

    For x <= 0, F(x) = 0.5 * I_z(nu/2, 1/2) with z = nu / (nu + x^2); the
    positive branch uses symmetry.  A leading-order expansion covers deep-tail
    underflow of the beta integral.
    """
    if nu <= 0:
        raise ValueError("nu must be positive")
    arr = np.asarray(x, dtype=float)
    a = nu / 2.0
    z = nu / (nu + arr * arr)
    ib = special.betainc(a, 0.5, z)
    with np.errstate(divide="ignore"):
        left = np.log(0.5 * ib)
    tiny = ~np.isfinite(left)
    if np.any(tiny):
        asym = a * np.log(z) - math.log(a) - special.betaln(a, 0.5) + math.log(0.5)
        left = np.where(tiny, asym, left)
    right = np.log1p(-0.5 * ib)
    out = np.where(arr <= 0, left, right)
    return float(out) if arr.ndim == 0 else out


def _norm_log_density(x):
    return -0.5 * x * x - 0.5 * math.log(2.0 * math.pi)


_norm_log_cdf = special.log_ndtr


def loglog_view(data: RoundDataset, base: str = "wei") -> RoundDataset:
    """Log-transformed copy: bid -> log raw wei (or log ETH), features -> logs."""
    if np.any(data.bid_scaled <= 0):
        raise ValidationError("non-positive bid cannot be log-transformed")
    if base == "wei":
        bid = np.log(data.bid_scaled * float(WEI_PER_UNIT))
    elif base == "eth":
        bid = np.log(data.bid_scaled * 1e-3)
    else:
        raise ValueError("base must be 'wei' or 'eth'")
    return RoundDataset(
        round_id=data.round_id.copy(),
        bidder=data.bidder.copy(),
        bid_scaled=bid,
        censored=data.censored.copy(),
        x1=np.log(np.maximum(data.x1, X1_FLOOR)),
        x2=np.log(np.maximum(data.x2, X2_FLOOR)),
        p_start=data.p_start.copy(),
        round_start_ms=None if data.round_start_ms is None else data.round_start_ms.copy(),
    )


@dataclass
class _Design:
    y: np.ndarray
    x_loc: np.ndarray
    x_scale: np.ndarray
    censored: np.ndarray
    censor_value: float
    loc_names: list[str]
    scale_names: list[str]


def _design(data: RoundDataset, spec: TobitSpec, intercept_only: bool = False) -> _Design:
    if len(data) == 0:
        raise ValidationError("empty dataset")
    n = len(data)
    ones = np.ones(n)
    lx1 = np.log(np.maximum(data.x1, X1_FLOOR))
    lx2 = np.log(np.maximum(data.x2, X2_FLOOR))

    if spec.form == "linear":
        y = data.bid_scaled
        censor = spec.censor_point
        loc_feats = [data.x1, data.x2]
    else:
        view = loglog_view(data, base=spec.loglog_bid_base)
        y = view.bid_scaled
        if spec.loglog_bid_base == "wei":
            censor = math.log(spec.censor_point * WEI_PER_UNIT)
        else:
            censor = math.log(spec.censor_point * 1e-3)
        loc_feats = [lx1, lx2]

    if intercept_only:
        x_loc = ones[:, None]
        x_scale = ones[:, None]
        loc_names = ["theta0"]
        scale_names = ["gamma0"]
    elif spec.include_var_iv:
        x_loc = np.column_stack([ones, loc_feats[0], loc_feats[1]])
        x_scale = np.column_stack([ones, lx1, lx2])
        loc_names = ["theta0", "theta1", "theta2"]
        scale_names = ["gamma0", "gamma1", "gamma2"]
    else:
        x_loc = np.column_stack([ones, loc_feats[0]])
        x_scale = np.column_stack([ones, lx1])
        loc_names = ["theta0", "theta1"]
        scale_names = ["gamma0", "gamma1"]

    cens = data.censored.astype(bool)
    if np.any(y[~cens] < censor - 1e-9 * max(1.0, abs(censor))):
        bad = int(np.flatnonzero(~cens & (y < censor - 1e-9 * max(1.0, abs(censor))))[0])
        raise ValidationError(
            f"row {bad}: uncensored bid below the censor point {censor!r}"
        )
    return _Design(
        y=y,
        x_loc=x_loc,
        x_scale=x_scale,
        censored=cens,
        censor_value=censor,
        loc_names=loc_names,
        scale_names=scale_names,
    )


def _check_params(params: TobitParams, des: _Design, spec: TobitSpec) -> None:
    if params.theta.size != des.x_loc.shape[1]:
        raise ValueError(
            f"theta has {params.theta.size} coefficients, design needs {des.x_loc.shape[1]}"
        )
    if params.gamma.size != des.x_scale.shape[1]:
        raise ValueError(
            f"gamma has {params.gamma.size} coefficients, design needs {des.x_scale.shape[1]}"
        )
    if spec.error_family == "student_t":
        if params.nu is None or params.nu <= 0:
            raise ValueError("student_t family requires nu > 0")
    elif params.nu is not None:
        raise ValueError("nu must be None for the gaussian family")


def _loglik_terms(theta, gamma, nu, des: _Design, family: str) -> np.ndarray:
    """Per-row contributions; degenerate scales (exp under/overflow) give -inf."""
    mu = des.x_loc @ theta
    log_s = des.x_scale @ gamma
    out = np.full(des.y.size, -np.inf)
    with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
        s = np.exp(log_s)
        unc = ~des.censored
        if np.any(unc):
            u = (des.y[unc] - mu[unc]) / s[unc]
            ok = np.isfinite(u)
            if family == "student_t":
                vals = -log_s[unc][ok] + t_log_density(u[ok], nu)
            else:
                vals = -log_s[unc][ok] + _norm_log_density(u[ok])
            tmp = np.full(u.size, -np.inf)
            tmp[ok] = vals
            out[unc] = tmp
        cen = des.censored
        if np.any(cen):
            c = (des.censor_value - mu[cen]) / s[cen]
            ok = np.isfinite(c)
            if family == "student_t":
                vals = t_log_cdf(c[ok], nu)
            else:
                vals = _norm_log_cdf(c[ok])
            tmp = np.full(c.size, -np.inf)
            tmp[ok] = np.atleast_1d(vals)
            # a censor point infinitely far above the location is certainty
            tmp[~ok & (c == np.inf)] = 0.0
            out[cen] = tmp
    return out


def tobit_loglik(params: TobitParams, data: RoundDataset, spec: TobitSpec) -> float:
    """Total censored log-likelihood of the dataset under the given spec."""
    des = _design(data, spec)
    _check_params(params, des, spec)
    nu = params.nu if spec.error_family == "student_t" else None
    terms = _loglik_terms(params.theta, params.gamma, nu, des, spec.error_family)
    if not np.all(np.isfinite(terms)):
        bad = int(np.flatnonzero(~np.isfinite(terms))[0])
        raise EstimationError(f"non-finite log-likelihood contribution at row {bad}")
    return float(terms.sum())


def _score(theta, gamma, nu, des: _Design, family: str) -> np.ndarray:
    """Gradient of the total log-likelihood wrt (theta, gamma[, nu])."""
    mu = des.x_loc @ theta
    log_s = des.x_scale @ gamma
    s = np.exp(log_s)
    n = des.y.size
    w_loc = np.zeros(n)    # per-row weight on x_loc / s
    w_scale = np.zeros(n)  # per-row weight on x_scale
    unc = ~des.censored
    cen = des.censored
    if np.any(unc):
        u = (des.y[unc] - mu[unc]) / s[unc]
        if family == "student_t":
            dlf = (nu + 1.0) * u / (nu + u * u)   # -d log f / du
        else:
            dlf = u
        w_loc[unc] = dlf / s[unc]
        w_scale[unc] = dlf * u - 1.0
    if np.any(cen):
        c = (des.censor_value - mu[cen]) / s[cen]
        if family == "student_t":
            hazard = np.exp(t_log_density(c, nu) - t_log_cdf(c, nu))
        else:
            hazard = np.exp(_norm_log_density(c) - _norm_log_cdf(c))
        w_loc[cen] = -hazard / s[cen]
        w_scale[cen] = -hazard * c
    g_theta = des.x_loc.T @ w_loc
    g_gamma = des.x_scale.T @ w_scale
    if family != "student_t":
        return np.concatenate([g_theta, g_gamma])
    h = 1e-5 * max(1.0, nu)
    ll_hi = _loglik_terms(theta, gamma, nu + h, des, family).sum()
    ll_lo = _loglik_terms(theta, gamma, nu - h, des, family).sum()
    return np.concatenate([g_theta, g_gamma, [(ll_hi - ll_lo) / (2.0 * h)]])


def tobit_score(params: TobitParams, data: RoundDataset, spec: TobitSpec) -> np.ndarray:
    """Score vector in the natural parameterization (theta, gamma[, nu])."""
    des = _design(data, spec)
    _check_params(params, des, spec)
    nu = params.nu if spec.error_family == "student_t" else None
    return _score(params.theta, params.gamma, nu, des, spec.error_family)


def _fd_hessian(f, x: np.ndarray, rel: float = 1e-4) -> np.ndarray:
    k = x.size
    h = rel * np.maximum(1.0, np.abs(x))
    H = np.empty((k, k))
    f0 = f(x)

    def at(*deltas):
        xx = x.copy()
        for i, d in deltas:
            xx[i] += d
        return f(xx)

    for i in range(k):
        H[i, i] = (at((i, h[i])) - 2.0 * f0 + at((i, -h[i]))) / h[i] ** 2
        for j in range(i + 1, k):
            val = (
                at((i, h[i]), (j, h[j]))
                - at((i, h[i]), (j, -h[j]))
                - at((i, -h[i]), (j, h[j]))
                + at((i, -h[i]), (j, -h[j]))
            ) / (4.0 * h[i] * h[j])
            H[i, j] = H[j, i] = val
    return H


def _initial_starts(des: _Design, family: str, starts: int, seed: int, fix_nu):
    """Moment-based start plus deterministic jittered alternatives."""
    unc = ~des.censored
    p, q = des.x_loc.shape[1], des.x_scale.shape[1]
    theta0 = np.zeros(p)
    resid_sd = 1.0
    if unc.sum() >= p:
        sol, *_ = np.linalg.lstsq(des.x_loc[unc], des.y[unc], rcond=None)
        theta0 = sol
        resid = des.y[unc] - des.x_loc[unc] @ sol
        resid_sd = max(float(resid.std()), 1e-3)
    else:
        theta0[0] = float(des.y[unc].mean()) if unc.any() else des.censor_value
    gamma0 = np.zeros(q)
    gamma0[0] = math.log(resid_sd)

    with_nu = family == "student_t" and fix_nu is None
    base = np.concatenate([theta0, gamma0, [math.log(5.0 - NU_FLOOR)] if with_nu else []])
    out = [base]
    rng = np.random.default_rng(seed)
    nu_ladder = [1.5, 3.0, 8.0, 25.0]
    for j in range(max(0, starts - 1)):
        cand = base.copy()
        cand[: p + q] += rng.normal(0.0, 0.5 * (np.abs(base[: p + q]) + 0.1))
        if with_nu:
            nu_j = nu_ladder[j % len(nu_ladder)] * math.exp(rng.normal(0.0, 0.2))
            cand[-1] = math.log(max(nu_j - NU_FLOOR, 1e-3))
        out.append(cand)
    return out


def fit_tobit(
    data: RoundDataset,
    spec: TobitSpec,
    *,
    starts: int = 5,
    max_iter: int = 500,
    tol: float = 1e-6,
    start_seed: int = 0,
    fix_nu: float | None = None,
    intercept_only: bool = False,
) -> TobitFit:
    """Maximum-likelihood fit by multi-start L-BFGS-B on the mean log-likelihood.

    ``fix_nu`` pins the t tail parameter (excluded from the free-parameter
    count); ``intercept_only`` fits the null model used for McFadden R^2.
    """
    des = _design(data, spec, intercept_only=intercept_only)
    n = des.y.size
    if not np.any(~des.censored):
        raise EstimationError("all rows are censored; the model is not estimable")
    p, q = des.x_loc.shape[1], des.x_scale.shape[1]
    family = spec.error_family
    with_nu = family == "student_t" and fix_nu is None
    k = p + q + (1 if with_nu else 0)
    if n <= k:
        raise EstimationError(f"{n} observations cannot identify {k} parameters")

    def unpack(vec):
        theta = vec[:p]
        gamma = vec[p : p + q]
        if family != "student_t":
            return theta, gamma, None
        nu = NU_FLOOR + math.exp(vec[-1]) if with_nu else fix_nu
        return theta, gamma, nu

    def objective(vec):
        theta, gamma, nu = unpack(vec)
        with np.errstate(over="ignore", invalid="ignore"):
            terms = _loglik_terms(theta, gamma, nu, des, family)
            total = terms.sum()
            if not np.isfinite(total):
                return 1e12, np.zeros(vec.size)
            grad = _score(theta, gamma, nu, des, family)
        if with_nu:
            grad = grad.copy()
            grad[-1] *= nu - NU_FLOOR  # chain rule through nu = floor + exp(eta)
        elif family == "student_t":
            grad = grad[:-1]
        if not np.all(np.isfinite(grad)):
            return 1e12, np.zeros(vec.size)
        return -total / n, -grad / n

    best = None
    for x0 in _initial_starts(des, family, starts, start_seed, fix_nu):
        try:
            res = optimize.minimize(
                objective,
                x0,
                jac=True,
                method="L-BFGS-B",
                options={"maxiter": max_iter, "ftol": 1e-14, "gtol": tol / 10.0},
            )
        except (ValueError, FloatingPointError) as exc:  # pragma: no cover
            log.warning("optimizer start failed: %s", exc)
            continue
        if np.isfinite(res.fun) and (best is None or res.fun < best.fun):
            best = res
    if best is None:
        raise EstimationError("no optimizer start converged to a finite likelihood")

    theta, gamma, nu = unpack(best.x)
    loglik = float(_loglik_terms(theta, gamma, nu, des, family).sum())
    grad_mean = objective(best.x)[1]
    converged = bool(np.max(np.abs(grad_mean)) <= tol)
    if not converged:
        log.warning("gradient max-norm %.3g above tolerance %.3g", np.max(np.abs(grad_mean)), tol)

    names = list(des.loc_names[:p]) + list(des.scale_names[:q])
    estimates = np.concatenate([theta, gamma])
    if with_nu:
        names.append("nu")
        estimates = np.append(estimates, nu)

    def natural_loglik(vec):
        th = vec[:p]
        gm = vec[p : p + q]
        nunat = vec[-1] if with_nu else (fix_nu if family == "student_t" else None)
        with np.errstate(over="ignore", invalid="ignore"):
            val = _loglik_terms(th, gm, nunat, des, family).sum()
        return val if np.isfinite(val) else -1e12

    std_errors = None
    try:
        H = _fd_hessian(natural_loglik, estimates)
        cov = np.linalg.inv(-H)
        diag = np.diag(cov)
        if np.all(diag > 0):
            std_errors = np.sqrt(diag)
        else:
            log.warning("observed information not positive definite; SEs unavailable")
    except np.linalg.LinAlgError:
        log.warning("singular Hessian; SEs unavailable")

    return TobitFit(
        spec=spec,
        param_names=names,
        estimates=estimates,
        std_errors=std_errors,
        loglik=loglik,
        aic=-2.0 * loglik + 2.0 * k,
        bic=-2.0 * loglik + k * math.log(n),
        n_obs=n,
        n_censored=int(des.censored.sum()),
        n_params=k,
        converged=converged,
    )


class LrResult(NamedTuple):
    chi2: float
    df: int
    p: float


def lr_test(full: TobitFit, reduced: TobitFit) -> LrResult:
    """Likelihood-ratio test; the reduced fit must be nested in the full one."""
    if (
        full.spec.form != reduced.spec.form
        or full.spec.error_family != reduced.spec.error_family
        or full.spec.censor_point != reduced.spec.censor_point
        or full.n_obs != reduced.n_obs
        or full.n_params <= reduced.n_params
    ):
        raise ValueError("fits are not nested on the same data")
    chi2 = 2.0 * (full.loglik - reduced.loglik)
    chi2 = max(chi2, 0.0)  # optimizer tolerance can leave a tiny negative
    df = full.n_params - reduced.n_params
    return LrResult(chi2, df, float(stats.chi2.sf(chi2, df)))


def mcfadden_r2(fit: TobitFit, null_fit: TobitFit) -> float:
    """1 - LL_fit / LL_null against the intercept-only model on the same data."""
    expected_null = {"theta0", "gamma0"} | (
        {"nu"} if fit.spec.error_family == "student_t" else set()
    )
    if set(null_fit.param_names) != expected_null:
        raise ValueError("null_fit must be the intercept-only model")
    if null_fit.n_obs != fit.n_obs or null_fit.spec.form != fit.spec.form:
        raise ValueError("null fit is not on the same data/form")
    if null_fit.loglik == 0.0:
        raise ValueError("null log-likelihood is zero; McFadden R^2 undefined")
    return 1.0 - fit.loglik / null_fit.loglik


def reduced_spec(spec: TobitSpec) -> TobitSpec:
    """The nested variant of a spec with x2 removed from both equations."""
    return replace(spec, include_var_iv=False)
