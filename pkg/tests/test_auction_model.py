import math

import numpy as np
import pytest
from scipy import stats

from bidvol import (
    BidderBelief,
    BidderParams,
    ConfigError,
    SimConfig,
    StructuralSimConfig,
    certainty_equivalent,
    clear_auction,
    lvr_rate,
    profit,
    round_reward,
    simulate_rounds,
    simulate_structural_rounds,
    truthful_bid,
    valuation,
)
from bidvol.market_data import X1_SCALE


# --- reward formulas ---------------------------------------------------------


def test_lvr_rate_zero_liquidity():
    assert lvr_rate(0.0, 50.0, 0.3) == 0.0


def test_lvr_rate_unit_case():
    assert lvr_rate(4.0, 1.0, 1.0) == 1.0


def test_lvr_rate_domain():
    with pytest.raises(ValueError):
        lvr_rate(1.0, -2.0, 0.1)
    with pytest.raises(ValueError):
        lvr_rate(-1.0, 2.0, 0.1)


def test_round_reward_zero_iv():
    assert round_reward(10.0, 2000.0, 0.0) == 0.0


def test_round_reward_unit_case():
    assert round_reward(4.0, 4.0, 0.5) == 1.0


def test_round_reward_matches_constant_path_discretization():
    # constant price and variance: bar-sum of the instantaneous rate is exact
    L, P, sig2, T, dt = 7.0, 2500.0, 3e-7, 60, 1.0
    total = sum(lvr_rate(L, P, sig2) * dt for _ in range(T))
    assert round_reward(L, P, sig2 * T * dt) == pytest.approx(total, rel=1e-12)


def test_lvr_rate_integral_matches_reward_on_stochastic_path():
    # small per-step vol keeps the price near its start, so the approximation
    # that pulls sqrt(P) out of the integral is within 0.5%
    rng = np.random.default_rng(12)
    T, dt = 600, 1.0
    sig = np.full(T, 4e-4)
    steps = sig * rng.standard_normal(T)
    prices = 2500.0 * np.exp(np.concatenate([[0.0], np.cumsum(steps)]))
    L = 5.0
    integral = sum(lvr_rate(L, prices[t], sig[t] ** 2) * dt for t in range(T))
    iv = float(np.sum(sig**2 * dt))
    reward = round_reward(L, prices[0], iv)
    assert reward == pytest.approx(integral, rel=5e-3)


# --- profit / certainty equivalent / valuation --------------------------------


def test_profit_constant_component():
    params = BidderParams(alpha=1.0, beta=0.0, rho=1.0)
    for iv in (0.0, 0.5, 3.0):
        assert profit(params, iv, 2000.0) == 1.0


def test_profit_unit_case():
    params = BidderParams(alpha=0.0, beta=2.0, rho=1.0)
    assert profit(params, 3.0, 4.0) == 12.0


def test_profit_mean_matches_monte_carlo():
    rng = np.random.default_rng(3)
    params = BidderParams(alpha=2.0, beta=5.0, rho=1.0)
    m, p0 = 0.8, 400.0
    draws = rng.lognormal(mean=math.log(m) - 0.125, sigma=0.5, size=200_000)
    draws *= m / draws.mean()  # control variate: center the sample exactly
    sample = np.array([profit(params, iv, p0) for iv in draws[:5000]])
    expected = params.alpha + params.beta * m * math.sqrt(p0)
    mc = params.alpha + params.beta * draws.mean() * math.sqrt(p0)
    assert mc == pytest.approx(expected, rel=1e-12)
    se = sample.std() / math.sqrt(sample.size)
    assert sample.mean() == pytest.approx(
        params.alpha + params.beta * draws[:5000].mean() * math.sqrt(p0), abs=4 * se
    )


def test_certainty_equivalent_cases():
    assert certainty_equivalent(5.0, 0.0, 2.0) == 5.0
    assert certainty_equivalent(2.0, 4.0, 1.0) == 0.0
    with pytest.raises(ValueError):
        certainty_equivalent(1.0, 1.0, 0.0)
    with pytest.raises(ValueError):
        certainty_equivalent(1.0, -1.0, 1.0)


def test_certainty_equivalent_monotone_in_variance():
    values = [certainty_equivalent(3.0, v, 0.7) for v in np.linspace(0, 10, 25)]
    assert all(a > b for a, b in zip(values, values[1:]))


def test_valuation_risk_neutral_limit():
    belief = BidderBelief(m_iv=0.9, v_iv=2.0)
    base = BidderParams(alpha=1.0, beta=3.0, rho=1e-14)
    expected = 1.0 + 3.0 * 0.9 * math.sqrt(25.0)
    assert valuation(base, belief, 25.0) == pytest.approx(expected, rel=1e-10)


def test_valuation_unit_case():
    params = BidderParams(alpha=0.0, beta=1.0, rho=2.0)
    belief = BidderBelief(m_iv=1.0, v_iv=1.0)
    assert valuation(params, belief, 4.0) == pytest.approx(-2.0, rel=1e-15)


@pytest.mark.parametrize("seed", range(4))
def test_valuation_equals_ce_of_profit_moments(seed):
    rng = np.random.default_rng(seed)
    for _ in range(2500):
        params = BidderParams(
            alpha=rng.normal(0, 10),
            beta=rng.lognormal(0, 1),
            rho=rng.lognormal(-1, 1),
        )
        belief = BidderBelief(m_iv=rng.lognormal(-1, 1), v_iv=rng.lognormal(-2, 1))
        p0 = rng.lognormal(5, 1)
        mean = params.alpha + params.beta * belief.m_iv * math.sqrt(p0)
        variance = params.beta**2 * belief.v_iv * p0
        lhs = valuation(params, belief, p0)
        rhs = certainty_equivalent(mean, variance, params.rho)
        scale = abs(params.alpha) + abs(mean - params.alpha) + abs(params.gamma * belief.v_iv * p0) + 1.0
        assert abs(lhs - rhs) <= 1e-12 * scale


def test_valuation_monotone_in_forecast_moments():
    params = BidderParams(alpha=0.5, beta=2.0, rho=0.3)
    p0 = 1600.0
    ms = np.linspace(0.1, 2.0, 20)
    vals_m = [valuation(params, BidderBelief(m_iv=m, v_iv=1.0), p0) for m in ms]
    assert all(a < b for a, b in zip(vals_m, vals_m[1:]))
    vs = np.linspace(0.0, 2.0, 20)
    vals_v = [valuation(params, BidderBelief(m_iv=1.0, v_iv=v), p0) for v in vs]
    assert all(a > b for a, b in zip(vals_v, vals_v[1:]))


def test_bidder_params_gamma_identity():
    params = BidderParams(alpha=1.0, beta=3.0, rho=0.4)
    assert params.gamma == 0.4 * 9.0 / 2.0
    with pytest.raises(ValueError):
        BidderParams(alpha=0.0, beta=1.0, rho=0.0)


# --- truthful bids and clearing ------------------------------------------------


def test_truthful_bid_zero_valuation_censored():
    res = truthful_bid(0.0, 2000.0, 1.0)
    assert res.bid == 1.0 and res.censored


def test_truthful_bid_unit_conversion():
    res = truthful_bid(2.0 * 2000.0, 2000.0, 0.5)
    assert res.bid == 2.0 and not res.censored


def test_truthful_bid_negative_valuation():
    res = truthful_bid(-500.0, 2000.0, 1.0)
    assert res.bid == 1.0 and res.censored


def test_clear_auction_basic():
    out = clear_auction([3.0, 5.0, 2.0], reserve=1.0)
    assert out.winner == 1 and out.payment == 3.0


def test_clear_auction_single_live_bid_pays_reserve():
    out = clear_auction([5.0, 1.0, 1.0], reserve=1.0)
    assert out.winner == 0 and out.payment == 1.0


def test_clear_auction_no_winner_at_reserve():
    out = clear_auction([1.0, 1.0], reserve=1.0)
    assert out.winner is None and out.payment == 0.0


def test_clear_auction_tie_lowest_index():
    out = clear_auction([4.0, 4.0, 2.0], reserve=1.0)
    assert out.winner == 0 and out.payment == 4.0


def test_clear_auction_empty():
    with pytest.raises(ValueError):
        clear_auction([], reserve=1.0)


def test_clear_auction_payment_bounds():
    rng = np.random.default_rng(8)
    for _ in range(300):
        bids = rng.lognormal(0, 1, rng.integers(1, 6))
        out = clear_auction(bids, reserve=1.0)
        if out.winner is not None:
            assert out.payment <= bids[out.winner]
            assert out.payment >= 1.0


def test_revenue_invariant_to_winning_bid_level():
    # payment decouples from the winner's own bid above the second-highest
    base = np.array([2.0, 7.0, 3.5])
    out1 = clear_auction(base, reserve=1.0)
    bumped = base.copy()
    bumped[1] = 70.0
    out2 = clear_auction(bumped, reserve=1.0)
    assert out1.payment == out2.payment == 3.5


def _second_price_payoff(value_units, my_bid, opponents, reserve):
    out = clear_auction(np.concatenate([[my_bid], opponents]), reserve)
    if out.winner == 0:
        return value_units - out.payment
    return 0.0


@pytest.mark.parametrize("seed", range(3))
def test_truthful_bidding_dominance(seed):
    rng = np.random.default_rng(seed)
    reserve = 1.0
    for _ in range(200):
        p0 = rng.lognormal(7.0, 0.5)
        value_usd = rng.normal(2.0, 3.0) * p0
        opponents = rng.lognormal(0.5, 1.0, rng.integers(1, 5))
        mine = truthful_bid(value_usd, p0, reserve).bid
        value_units = value_usd / p0
        truthful_payoff = _second_price_payoff(value_units, mine, opponents, reserve)
        grid = np.linspace(0.0, max(2.0 * abs(value_units), 2.0 * opponents.max(), 4.0), 50)
        for dev in grid:
            dev_payoff = _second_price_payoff(value_units, dev, opponents, reserve)
            assert truthful_payoff >= dev_payoff - 1e-12


# --- simulator -----------------------------------------------------------------


def test_simulate_rounds_deterministic(tmp_path):
    cfg = SimConfig(n_rounds=300, seed=42)
    ds1, truth1 = simulate_rounds(cfg)
    ds2, truth2 = simulate_rounds(cfg)
    f1, f2 = tmp_path / "a.csv", tmp_path / "b.csv"
    ds1.to_csv(f1)
    ds2.to_csv(f2)
    assert f1.read_bytes() == f2.read_bytes()
    assert truth1 == truth2


def test_simulate_rounds_null_var_effect_recovered():
    from bidvol import TobitSpec, fit_tobit

    cfg = SimConfig(
        n_rounds=8000, theta=(1.0, 0.35, 0.0), scale=(-2.3, 1.1, 0.0), seed=5
    )
    ds, _ = simulate_rounds(cfg)
    fit = fit_tobit(ds.filter_bidder("bidder_0"), TobitSpec(), starts=2)
    se = fit.std_error("theta2")
    assert abs(fit.estimate("theta2")) <= 3.5 * se


def test_simulate_censoring_matches_tcdf_oracle():
    cfg = SimConfig(n_rounds=4000, n_bidders=3, seed=9)
    ds, truth = simulate_rounds(cfg)
    th = np.array([truth["theta0"], truth["theta1"], truth["theta2"]])
    gm = np.array([truth["gamma0"], truth["gamma1"], truth["gamma2"]])
    rounds = ds.subset(ds.bidder == "bidder_0")
    mu = th[0] + th[1] * rounds.x1 + th[2] * rounds.x2
    sigma = np.exp(gm[0] + gm[1] * np.log(rounds.x1) + gm[2] * np.log(rounds.x2))
    p_cens = stats.t.cdf((truth["reserve"] - mu) / sigma, truth["nu"]).mean()
    n = len(ds)
    empirical = ds.n_censored / n
    se = math.sqrt(p_cens * (1 - p_cens) / n) * 2  # bidders share rounds
    assert empirical == pytest.approx(p_cens, abs=max(4 * se, 0.01))


def test_simulate_stationary_moments_pure_ar1():
    # vol_of_vol = 0 recovers the exact AR(1) process with known stationary moments
    cfg = SimConfig(
        n_rounds=200_000,
        n_bidders=2,
        vol_persistence=0.6,
        vol_innovation_sd=0.4,
        vol_of_vol=0.0,
        seed=17,
    )
    ds, truth = simulate_rounds(cfg)
    rounds = ds.subset(ds.bidder == "bidder_0")
    iv = rounds.x1 * math.sqrt(cfg.price0) / X1_SCALE  # invert the feature scaling
    # x1 stores conditional means E[IV_r | h_{r-1}]; their stationary mean/var:
    vh = cfg.vol_innovation_sd**2 / (1 - cfg.vol_persistence**2)
    vm = cfg.vol_persistence**2 * vh  # stationary variance of the conditional mean m_r
    s2 = cfg.vol_innovation_sd**2
    mean_true = math.exp(cfg.vol_mean + vm / 2 + s2 / 2)
    second_true = math.exp(2 * cfg.vol_mean + 2 * vm + s2)
    n_blocks = 100
    blocks = iv[: len(iv) // n_blocks * n_blocks].reshape(n_blocks, -1)
    bm = blocks.mean(axis=1)
    se_mean = bm.std(ddof=1) / math.sqrt(n_blocks)
    assert iv.mean() == pytest.approx(mean_true, abs=3 * se_mean)
    b2 = (blocks**2).mean(axis=1)
    se_second = b2.std(ddof=1) / math.sqrt(n_blocks)
    assert (iv**2).mean() == pytest.approx(second_true, abs=3 * se_second)


def test_simconfig_validation():
    with pytest.raises(ConfigError):
        simulate_rounds(SimConfig(n_bidders=1))
    with pytest.raises(ConfigError):
        simulate_rounds(SimConfig(vol_persistence=1.5))
    with pytest.raises(ConfigError):
        simulate_rounds(SimConfig(nu=-1.0))


def test_simconfig_from_file(tmp_path):
    cfg_file = tmp_path / "sim.cfg"
    cfg_file.write_text(
        "n_rounds = 50\nn_bidders = 3\ntheta = 1.0, 0.4, -1.5\nseed = 3\n# comment\n"
    )
    cfg = SimConfig.from_file(cfg_file)
    assert cfg.n_rounds == 50 and cfg.n_bidders == 3
    assert cfg.theta == (1.0, 0.4, -1.5)


def test_structural_simulation_outcomes():
    cfg = StructuralSimConfig(n_rounds=300, n_bidders=3, seed=2)
    outcomes, bids = simulate_structural_rounds(cfg)
    assert bids.shape == (300, 3)
    assert np.all(bids >= cfg.reserve)
    for out in outcomes:
        if out.winner is not None:
            assert out.payment <= out.all_bids[out.winner]
            assert out.payment >= cfg.reserve
    winners = sum(1 for o in outcomes if o.winner is not None)
    assert winners > 150  # most rounds clear with 3 bidders
