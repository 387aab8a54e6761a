"""Bidder valuation theory for per-minute priority auctions, plus a simulator.

A round's arbitrage reward is driven by integrated variance: the adverse-
selection rate of a constant-product pool is (L * sqrt(P) / 4) * sigma^2, so
the round reward is approximately (L * sqrt(P0) / 4) * IV.  A bidder with
extraction efficiency beta and fixed component alpha nets

    profit = alpha + beta * IV * sqrt(P)

and, under mean-variance preferences with risk aversion rho, values the round
at the certainty equivalent

    value = alpha + beta * m * sqrt(P) - (rho / 2) * beta^2 * v * P

where (m, v) are the bidder's forecast mean and variance of IV.  In the
sealed-bid second-price auction, bidding this value is weakly dominant.

``simulate_rounds`` generates synthetic bid datasets with known ground truth:
log round variance follows a stationary AR(1), the per-round forecast moments
are the process's conditional moments, and the observed bid is the latent
valuation left-censored at the reserve with heteroskedastic Student-t noise.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, fields
from typing import NamedTuple

import numpy as np

from .errors import ConfigError
from .kvconfig import as_floats, parse_kv_file
from .market_data import X1_SCALE, X2_SCALE, RoundDataset

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class BidderParams:
    """Per-bidder valuation parameters; gamma is derived, never stored."""

    alpha: float  # USD, volatility-independent net profit component
    beta: float   # USD per unit IV*sqrt(USD), extraction efficiency
    rho: float    # risk aversion, per USD^2

    def __post_init__(self):
        if self.rho <= 0:
            raise ValueError("rho must be positive (risk aversion is required)")

    @property
    def gamma(self) -> float:
        return self.rho * self.beta**2 / 2.0


@dataclass(frozen=True)
class BidderBelief:
    """Forecast mean and variance of the round's integrated variance."""

    m_iv: float
    v_iv: float

    def __post_init__(self):
        if self.m_iv < 0 or self.v_iv < 0:
            raise ValueError("forecast moments must be non-negative")


def lvr_rate(liquidity: float, price: float, sigma2: float) -> float:
    """Instantaneous adverse-selection (rebalancing-loss) rate, USD per unit time."""
    if price <= 0:
        raise ValueError("price must be positive")
    if liquidity < 0 or sigma2 < 0:
        raise ValueError("liquidity and sigma2 must be non-negative")
    return liquidity * math.sqrt(price) / 4.0 * sigma2


def round_reward(liquidity: float, p_start: float, iv: float) -> float:
    """Arbitrage reward over one round: (L * sqrt(P0) / 4) * IV."""
    if p_start <= 0:
        raise ValueError("p_start must be positive")
    if liquidity < 0 or iv < 0:
        raise ValueError("liquidity and iv must be non-negative")
    return liquidity * math.sqrt(p_start) / 4.0 * iv


def profit(params: BidderParams, iv: float, p_start: float) -> float:
    """Net profit from winning a round with realized integrated variance iv."""
    if p_start <= 0:
        raise ValueError("p_start must be positive")
    return params.alpha + params.beta * iv * math.sqrt(p_start)


def certainty_equivalent(mean: float, variance: float, rho: float) -> float:
    """Mean-variance certainty equivalent E[X] - (rho/2) Var(X)."""
    if rho <= 0:
        raise ValueError("rho must be positive")
    if variance < 0:
        raise ValueError("variance must be non-negative")
    return mean - rho / 2.0 * variance


def valuation(params: BidderParams, belief: BidderBelief, p_start: float) -> float:
    """Certainty-equivalent value of the round under the bidder's forecast."""
    if p_start <= 0:
        raise ValueError("p_start must be positive")
    return (
        params.alpha
        + params.beta * belief.m_iv * math.sqrt(p_start)
        - params.gamma * belief.v_iv * p_start
    )


class TruthfulBid(NamedTuple):
    bid: float       # bid units (valuation / price), floored at the reserve
    censored: bool   # True when the unfloored bid is at or below the reserve


def truthful_bid(valuation_usd: float, p_start: float, reserve: float) -> TruthfulBid:
    """Convert a USD valuation to bid units; submissions below reserve sit at it."""
    if p_start <= 0:
        raise ValueError("p_start must be positive")
    raw = valuation_usd / p_start
    return TruthfulBid(bid=max(raw, reserve), censored=raw <= reserve)


@dataclass(frozen=True)
class AuctionOutcome:
    round_id: int
    winner: int | None   # bidder index, ties broken by lowest index
    payment: float       # second-highest bid clipped below by the reserve; 0 if no winner
    all_bids: np.ndarray


def clear_auction(bids, reserve: float, *, round_id: int = -1) -> AuctionOutcome:
    """Second-price clearing with a reserve: winner pays max(second bid, reserve)."""
    b = np.asarray(bids, dtype=float)
    if b.ndim != 1 or b.size == 0:
        raise ValueError("bids must be a non-empty vector")
    top = int(np.argmax(b))  # first occurrence wins ties
    if b[top] <= reserve:
        return AuctionOutcome(round_id=round_id, winner=None, payment=0.0, all_bids=b)
    others = np.delete(b, top)
    second = float(others.max()) if others.size else reserve
    return AuctionOutcome(
        round_id=round_id, winner=top, payment=max(second, reserve), all_bids=b
    )


@dataclass
class SimConfig:
    """Reduced-form round generator configuration.

    The latent valuation is theta0 + theta1*x1 + theta2*x2 + eps with
    eps/sigma_r ~ t(nu) and log sigma_r = gamma0 + gamma1*log(x1) +
    gamma2*log(x2); the observed bid is max(reserve, latent).  Features come
    from a stationary AR(1) in log round variance whose per-round innovation
    sd is jittered (``vol_of_vol``) so the two conditional moments are not
    log-collinear; set vol_of_vol = 0 for the pure AR(1) process.
    """

    n_rounds: int = 1000
    n_bidders: int = 2
    reserve: float = 1.0                                   # bid units
    theta: tuple = (1.0, 0.35, -2.1)                       # location coefficients
    scale: tuple = (-2.3, 1.1, -0.3)                       # log-scale coefficients
    nu: float = 1.3                                        # error-tail dof
    vol_mean: float = -13.8                                # mean log round variance
    vol_persistence: float = 0.97
    vol_innovation_sd: float = 0.5
    vol_of_vol: float = 0.35
    price0: float = 2500.0                                 # USD, constant per run
    seed: int = 0
    start_time_ms: int = 1_746_057_600_000                 # 2025-05-01T00:00:00Z

    def validate(self) -> None:
        if self.n_rounds < 1:
            raise ConfigError("n_rounds must be >= 1")
        if self.n_bidders < 2:
            raise ConfigError("n_bidders must be >= 2")
        if not -1.0 < self.vol_persistence < 1.0:
            raise ConfigError("vol_persistence must lie in (-1, 1)")
        if self.vol_innovation_sd <= 0 or self.vol_of_vol < 0:
            raise ConfigError("vol_innovation_sd must be > 0 and vol_of_vol >= 0")
        if self.nu <= 0 or self.reserve <= 0 or self.price0 <= 0:
            raise ConfigError("nu, reserve and price0 must be positive")
        if len(self.theta) != 3 or len(self.scale) != 3:
            raise ConfigError("theta and scale must each have 3 coefficients")

    @classmethod
    def from_mapping(cls, raw: dict) -> "SimConfig":
        kwargs = {}
        for f in fields(cls):
            if f.name not in raw:
                continue
            val = raw[f.name]
            if f.name in ("theta", "scale"):
                kwargs[f.name] = as_floats(val)
            elif f.name in ("n_rounds", "n_bidders", "seed", "start_time_ms"):
                kwargs[f.name] = int(val)
            else:
                kwargs[f.name] = float(val)
        return cls(**kwargs)

    @classmethod
    def from_file(cls, path) -> "SimConfig":
        return cls.from_mapping(parse_kv_file(path))


def _volatility_paths(cfg: SimConfig, rng: np.random.Generator):
    """AR(1) log-variance path plus per-round conditional moments of IV."""
    n = cfg.n_rounds
    mu, phi, sbar, w = (
        cfg.vol_mean,
        cfg.vol_persistence,
        cfg.vol_innovation_sd,
        cfg.vol_of_vol,
    )
    if w > 0:
        s = sbar * np.exp(w * rng.standard_normal(n) - w * w / 2.0)
    else:
        s = np.full(n, sbar)
    # stationary variance of h uses E[s^2] = sbar^2 * exp(w^2)
    sd0 = sbar * math.exp(w * w / 2.0) / math.sqrt(1.0 - phi * phi)
    z = rng.standard_normal(n)
    h_prev = mu + sd0 * rng.standard_normal()
    m = np.empty(n)
    for r in range(n):
        m[r] = mu + phi * (h_prev - mu)
        h_prev = m[r] + s[r] * z[r]
    s2 = s * s
    e_iv = np.exp(m + s2 / 2.0)
    var_iv = np.exp(2.0 * m + s2) * np.expm1(s2)
    return e_iv, var_iv


def simulate_rounds(config: SimConfig) -> tuple[RoundDataset, dict]:
    """Generate a synthetic bid dataset and its ground-truth record."""
    config.validate()
    rng = np.random.default_rng(config.seed)
    n, nb = config.n_rounds, config.n_bidders

    e_iv, var_iv = _volatility_paths(config, rng)
    x1 = e_iv / math.sqrt(config.price0) * X1_SCALE
    x2 = var_iv * X2_SCALE

    th0, th1, th2 = config.theta
    g0, g1, g2 = config.scale
    mu = th0 + th1 * x1 + th2 * x2
    sigma = np.exp(g0 + g1 * np.log(x1) + g2 * np.log(x2))
    latent = mu[:, None] + sigma[:, None] * rng.standard_t(config.nu, size=(n, nb))
    bids = np.maximum(config.reserve, latent)
    censored = latent <= config.reserve

    width = len(str(nb - 1))
    names = np.asarray([f"bidder_{i:0{width}d}" for i in range(nb)], dtype=object)
    ds = RoundDataset(
        round_id=np.repeat(np.arange(n, dtype=np.int64), nb),
        bidder=np.tile(names, n),
        bid_scaled=bids.ravel(),
        censored=censored.ravel(),
        x1=np.repeat(x1, nb),
        x2=np.repeat(x2, nb),
        p_start=np.full(n * nb, config.price0),
        round_start_ms=np.repeat(
            config.start_time_ms + np.arange(n, dtype=np.int64) * 60_000, nb
        ),
    )
    truth = {
        "theta0": th0,
        "theta1": th1,
        "theta2": th2,
        "gamma0": g0,
        "gamma1": g1,
        "gamma2": g2,
        "nu": config.nu,
        "reserve": config.reserve,
        "price0": config.price0,
        "n_rounds": n,
        "n_bidders": nb,
        "seed": config.seed,
        "vol_mean": config.vol_mean,
        "vol_persistence": config.vol_persistence,
        "vol_innovation_sd": config.vol_innovation_sd,
        "vol_of_vol": config.vol_of_vol,
    }
    return ds, truth


@dataclass
class StructuralSimConfig:
    """Structural generator: draws (alpha, beta, rho) and clears the auctions."""

    n_rounds: int = 1000
    n_bidders: int = 2
    reserve: float = 1.0
    alpha_mean: float = 500.0
    alpha_sd: float = 200.0
    beta_mean: float = 4.0e8
    beta_sd: float = 1.0e8
    rho_mean: float = 1.0e-5
    rho_sd: float = 3.0e-6
    forecast_noise: float = 0.1    # lognormal sd on private forecast moments
    vol_mean: float = -13.8
    vol_persistence: float = 0.97
    vol_innovation_sd: float = 0.5
    vol_of_vol: float = 0.35
    price0: float = 2500.0
    seed: int = 0


def simulate_structural_rounds(
    config: StructuralSimConfig,
) -> tuple[list[AuctionOutcome], np.ndarray]:
    """Truthful bidding with drawn (alpha, beta, rho); returns outcomes and bids.

    Bid matrix is (n_rounds, n_bidders) in bid units, floored at the reserve.
    """
    rng = np.random.default_rng(config.seed)
    sim = SimConfig(
        n_rounds=config.n_rounds,
        n_bidders=max(config.n_bidders, 2),
        vol_mean=config.vol_mean,
        vol_persistence=config.vol_persistence,
        vol_innovation_sd=config.vol_innovation_sd,
        vol_of_vol=config.vol_of_vol,
        price0=config.price0,
        seed=config.seed,
    )
    e_iv, var_iv = _volatility_paths(sim, rng)

    n, nb = config.n_rounds, config.n_bidders
    bids = np.empty((n, nb))
    outcomes = []
    for r in range(n):
        for i in range(nb):
            params = BidderParams(
                alpha=rng.normal(config.alpha_mean, config.alpha_sd),
                beta=abs(rng.normal(config.beta_mean, config.beta_sd)),
                rho=abs(rng.normal(config.rho_mean, config.rho_sd)) + 1e-12,
            )
            noise_m = math.exp(rng.normal(0.0, config.forecast_noise))
            noise_v = math.exp(rng.normal(0.0, config.forecast_noise))
            belief = BidderBelief(m_iv=e_iv[r] * noise_m, v_iv=var_iv[r] * noise_v)
            value = valuation(params, belief, config.price0)
            bids[r, i] = truthful_bid(value, config.price0, config.reserve).bid
        outcomes.append(clear_auction(bids[r], config.reserve, round_id=r))
    return outcomes, bids
