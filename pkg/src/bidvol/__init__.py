"""Priority-auction bid valuation vs short-horizon volatility.

Ingests candle and auction-bid exports, estimates per-round integrated-
variance moments, simulates synthetic rounds with known ground truth, and
fits heteroskedastic censored regressions with model comparison.
"""

from .auction_model import (
    AuctionOutcome,
    BidderBelief,
    BidderParams,
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
from .censored_mle import (
    TobitFit,
    TobitParams,
    TobitSpec,
    fit_tobit,
    loglog_view,
    lr_test,
    mcfadden_r2,
    reduced_spec,
    t_log_cdf,
    t_log_density,
    tobit_loglik,
    tobit_score,
)
from .errors import (
    BidvolError,
    ConfigError,
    CoverageError,
    EstimationError,
    ParseError,
    ValidationError,
)
from .market_data import (
    BidRecord,
    CandleSeries,
    ReturnWindow,
    RoundDataset,
    build_dataset,
    load_bids,
    load_candles,
    round_returns,
    scale_bid_wei,
)
from .vol_estimators import (
    IvMoments,
    newey_west_raw,
    newey_west_var_iv,
    realized_variance,
    round_moments,
    sq_return_autocov,
)
from .analysis import (
    ComparisonResult,
    ReportTable,
    RunConfig,
    compare_fits,
    render_table,
    run_pipeline,
    scatter_export,
    split_monthly,
    split_regime,
)

__version__ = "0.1.0"
