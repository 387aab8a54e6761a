"""Pipeline orchestration, subsample splits, and result-table rendering.

Tables mirror the four-panel layout used for censored-regression results:
location coefficients, scale coefficients, fit statistics, and the
full-vs-reduced comparison, with standard errors in parentheses beneath the
estimates and significance stars at p < 0.05 / 0.01 / 0.001.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np
from scipy import stats

from .auction_model import SimConfig, simulate_rounds
from .censored_mle import (
    TobitFit,
    TobitSpec,
    fit_tobit,
    lr_test,
    mcfadden_r2,
    reduced_spec,
)
from .errors import BidvolError, ConfigError
from .kvconfig import as_bool, as_strs, parse_kv_file
from .market_data import RoundDataset, build_dataset, load_bids, load_candles
from .market_data import X1_SCALE, X2_SCALE

log = logging.getLogger(__name__)

FORM_TITLES = {"linear": "Linear", "loglog": "Log-Log"}
FAMILY_TITLES = {"student_t": "t-dist Errors", "gaussian": "Gaussian Errors"}

LABEL_W = 28
VALUE_W = 17


def split_monthly(data: RoundDataset) -> dict[str, RoundDataset]:
    """Partition rows by UTC calendar month of the round start; empty months omitted."""
    if data.round_start_ms is None:
        raise ValueError("dataset rows carry no round_start timestamps")
    months = np.datetime_as_string(
        data.round_start_ms.astype("datetime64[ms]").astype("datetime64[M]")
    )
    return {key: data.subset(months == key) for key in np.unique(months)}


def split_regime(data: RoundDataset, threshold: float | None = None) -> dict[str, RoundDataset]:
    """Low/high volatility regimes split at the median of x1.

    The threshold defaults to the median of the data passed in; callers that
    partition per-bidder subsets should pass the full-dataset median.
    """
    if threshold is None:
        threshold = float(np.median(data.x1))
    low = data.x1 <= threshold
    return {"low": data.subset(low), "high": data.subset(~low)}


@dataclass(frozen=True)
class ComparisonResult:
    chi2: float
    df: int
    p: float
    d_aic: float
    d_bic: float


def compare_fits(full: TobitFit, reduced: TobitFit) -> ComparisonResult:
    chi2, df, p = lr_test(full, reduced)
    return ComparisonResult(
        chi2=chi2, df=df, p=p, d_aic=full.aic - reduced.aic, d_bic=full.bic - reduced.bic
    )


def _stars(p: float | None) -> str:
    if p is None:
        return ""
    if p < 0.001:
        return "***"
    if p < 0.01:
        return "**"
    if p < 0.05:
        return "*"
    return ""


def _num(value: float, fmt: str) -> str:
    s = fmt % value
    if float(s) == 0.0:
        s = fmt % 0.0  # avoid "-0.0000"
    return s


def _coef_cells(fit: TobitFit, name: str) -> tuple[str, str]:
    if name not in fit.param_names:
        return "--", "--"
    est = fit.estimate(name)
    se = fit.std_error(name)
    if se is None or se <= 0:
        return _num(est, "%.4f"), "(n/a)"
    p = 2.0 * stats.norm.sf(abs(est / se))
    return _num(est, "%.4f") + _stars(p), "(" + _num(se, "%.4f") + ")"


def _loc_labels(form: str) -> list[tuple[str, str]]:
    if form == "linear":
        x1 = "E[IV]/sqrt(P) (theta1)"
        x2 = "Var(IV) (theta2)"
    else:
        x1 = "log(E[IV]/sqrt(P)) (theta1)"
        x2 = "log(Var(IV)) (theta2)"
    return [("theta0", "Intercept (theta0)"), ("theta1", x1), ("theta2", x2)]


SCALE_LABELS = [
    ("gamma0", "Intercept (gamma0)"),
    ("gamma1", "log(E[IV]/sqrt(P)) (gamma1)"),
    ("gamma2", "log(Var(IV)) (gamma2)"),
]


@dataclass
class ReportTable:
    """Rendered four-panel result table: fixed-width text plus CSV rows."""

    title: str
    bidder: str
    text: str
    rows: list[tuple[str, str, str, str]] = field(default_factory=list)

    def to_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("panel,label,reduced,full\n")
            for row in self.rows:
                fh.write(",".join(row) + "\n")


def render_table(
    reduced_fit: TobitFit,
    full_fit: TobitFit,
    comparison: ComparisonResult,
    bidder: str = "",
) -> ReportTable:
    """Four-panel table of a reduced/full fit pair with stars and SEs."""
    spec = full_fit.spec
    title = f"Heteroskedastic Tobit ({FORM_TITLES[spec.form]}, {FAMILY_TITLES[spec.error_family]})"
    width = LABEL_W + 2 * VALUE_W
    lines = [title]
    rows: list[tuple[str, str, str, str]] = []
    if bidder:
        lines.append(f"Bidder: {bidder}")
    lines.append("=" * width)
    lines.append(f"{'':<{LABEL_W}}{'Reduced':>{VALUE_W}}{'Full':>{VALUE_W}}")
    lines.append("-" * width)

    def coef_panel(panel: str, heading: str, labels) -> None:
        lines.append(heading)
        for name, label in labels:
            r_est, r_se = _coef_cells(reduced_fit, name)
            f_est, f_se = _coef_cells(full_fit, name)
            lines.append(f"{label:<{LABEL_W}}{r_est:>{VALUE_W}}{f_est:>{VALUE_W}}")
            lines.append(f"{'':<{LABEL_W}}{r_se:>{VALUE_W}}{f_se:>{VALUE_W}}")
            rows.append((panel, label, r_est, f_est))
            rows.append((panel, label + " SE", r_se, f_se))
        lines.append("-" * width)

    coef_panel("A", "Panel A: Location Coefficients", _loc_labels(spec.form))
    coef_panel("B", "Panel B: Scale Coefficients", SCALE_LABELS)

    lines.append("Panel C: Model Fit Statistics")
    stats_rows: list[tuple[str, str, str]] = [
        ("Observations", str(reduced_fit.n_obs), str(full_fit.n_obs)),
        ("Censored", str(reduced_fit.n_censored), str(full_fit.n_censored)),
    ]
    if spec.error_family == "student_t":
        r_nu, f_nu = reduced_fit.params.nu, full_fit.params.nu
        stats_rows.append(
            (
                "Student t nu",
                "--" if r_nu is None else _num(r_nu, "%.2f"),
                "--" if f_nu is None else _num(f_nu, "%.2f"),
            )
        )
    stats_rows += [
        ("Log Likelihood", _num(reduced_fit.loglik, "%.2f"), _num(full_fit.loglik, "%.2f")),
        ("AIC", _num(reduced_fit.aic, "%.2f"), _num(full_fit.aic, "%.2f")),
        ("BIC", _num(reduced_fit.bic, "%.2f"), _num(full_fit.bic, "%.2f")),
        (
            "McFadden R2",
            "--" if reduced_fit.mcfadden_r2 is None else _num(reduced_fit.mcfadden_r2, "%.3f"),
            "--" if full_fit.mcfadden_r2 is None else _num(full_fit.mcfadden_r2, "%.3f"),
        ),
    ]
    for label, r_val, f_val in stats_rows:
        lines.append(f"{label:<{LABEL_W}}{r_val:>{VALUE_W}}{f_val:>{VALUE_W}}")
        rows.append(("C", label, r_val, f_val))
    lines.append("-" * width)

    lines.append("Panel D: Full vs Reduced Model Comparison")
    d_rows = [
        ("Delta AIC (Full - Reduced)", _num(comparison.d_aic, "%.2f")),
        ("Delta BIC (Full - Reduced)", _num(comparison.d_bic, "%.2f")),
        ("LR Test chi2 (p-val)", _num(comparison.chi2, "%.2f") + _stars(comparison.p)),
    ]
    for label, value in d_rows:
        lines.append(f"{label:<{LABEL_W}}{value:>{2 * VALUE_W}}")
        rows.append(("D", label, "", value))
    lines.append("-" * width)
    lines.append("* p<0.05, ** p<0.01, *** p<0.001")

    return ReportTable(title=title, bidder=bidder, text="\n".join(lines) + "\n", rows=rows)


def scatter_export(data: RoundDataset, n_groups: int = 10):
    """Tidy (bid, x1, x2, percentile-group) rows for external plotting."""
    if len(data) == 0:
        return []
    ranks = stats.rankdata(data.x1, method="average") / len(data)
    group = np.minimum((ranks * n_groups).astype(int) + 1, n_groups)
    return [
        (float(data.bid_scaled[i]), float(data.x1[i]), float(data.x2[i]), int(group[i]))
        for i in range(len(data))
    ]


@dataclass
class RunConfig:
    """Full pipeline configuration; see README for the config-file schema."""

    mode: str = "data"              # "data" or "simulate"
    bids: str | None = None
    candles: str | None = None
    out: str = "out"
    bidders: list[str] = field(default_factory=list)   # empty = all bidders
    T: int = 60
    L: int = 5
    lagged: bool = False
    forms: list[str] = field(default_factory=lambda: ["linear"])
    families: list[str] = field(default_factory=lambda: ["student_t"])
    subsamples: list[str] = field(default_factory=list)  # "monthly", "regime"
    seed: int = 0
    starts: int = 5
    max_fills: int = 5
    x1_scale: float = X1_SCALE
    x2_scale: float = X2_SCALE
    sim: SimConfig | None = None

    def validate(self) -> None:
        if self.mode not in ("data", "simulate"):
            raise ConfigError("mode must be 'data' or 'simulate'")
        if self.mode == "data" and (not self.bids or not self.candles):
            raise ConfigError("data mode requires bids and candles paths")
        if not self.forms or not self.families:
            raise ConfigError("spec matrix is empty (no forms or no families)")
        for form in self.forms:
            if form not in FORM_TITLES:
                raise ConfigError(f"unknown form {form!r}")
        for family in self.families:
            if family not in FAMILY_TITLES:
                raise ConfigError(f"unknown family {family!r}")
        for sub in self.subsamples:
            if sub not in ("monthly", "regime"):
                raise ConfigError(f"unknown subsample plan {sub!r}")

    @classmethod
    def from_mapping(cls, raw: dict, overrides: dict | None = None) -> "RunConfig":
        merged = dict(raw)
        for key, val in (overrides or {}).items():
            if val is not None:
                merged[key] = val
        kwargs = {}
        for f in fields(cls):
            if f.name not in merged or f.name == "sim":
                continue
            val = merged[f.name]
            if isinstance(val, str):
                if f.name in ("T", "L", "seed", "starts", "max_fills"):
                    val = int(val)
                elif f.name in ("x1_scale", "x2_scale"):
                    val = float(val)
                elif f.name == "lagged":
                    val = as_bool(val)
                elif f.name in ("bidders", "forms", "families", "subsamples"):
                    val = [canonical_family(tok) for tok in as_strs(val)] if f.name == "families" else as_strs(val)
            kwargs[f.name] = val
        cfg = cls(**kwargs)
        if cfg.mode == "simulate":
            sim_raw = {k: v for k, v in merged.items() if not isinstance(v, (list,))}
            cfg.sim = SimConfig.from_mapping({k: str(v) for k, v in sim_raw.items()})
        return cfg

    @classmethod
    def from_file(cls, path, overrides: dict | None = None) -> "RunConfig":
        return cls.from_mapping(parse_kv_file(path), overrides)


def canonical_family(token: str) -> str:
    mapping = {
        "t": "student_t",
        "student_t": "student_t",
        "gauss": "gaussian",
        "gaussian": "gaussian",
    }
    if token not in mapping:
        raise ConfigError(f"unknown error family {token!r}")
    return mapping[token]


def _fit_pair(data, spec, cfg):
    full = fit_tobit(data, spec, starts=cfg.starts, start_seed=cfg.seed)
    red = fit_tobit(data, reduced_spec(spec), starts=cfg.starts, start_seed=cfg.seed)
    null = fit_tobit(data, spec, starts=cfg.starts, start_seed=cfg.seed, intercept_only=True)
    full.mcfadden_r2 = mcfadden_r2(full, null)
    red.mcfadden_r2 = mcfadden_r2(red, null)
    return full, red


def _write_text(path, text: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def run_pipeline(config: RunConfig) -> int:
    """Ingest (or simulate), fit every configured spec per bidder, write reports.

    Returns 0 on full success, 2 when any cell failed (a failure manifest is
    written and the remaining cells still run).
    """
    config.validate()
    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)
    failures: list[tuple[str, str, str, str, str, str]] = []

    if config.mode == "simulate":
        sim = config.sim or SimConfig(seed=config.seed)
        data, truth = simulate_rounds(sim)
        data.to_csv(out / "dataset.csv")
        with open(out / "ground_truth.csv", "w", encoding="utf-8", newline="\n") as fh:
            fh.write("key,value\n")
            for key, val in truth.items():
                fh.write(f"{key},{val!r}\n")
    else:
        bids = load_bids(config.bids)
        candles = load_candles(config.candles)
        data = build_dataset(
            bids,
            candles,
            T=config.T,
            L=config.L,
            lagged=config.lagged,
            max_fills=config.max_fills,
            x1_scale=config.x1_scale,
            x2_scale=config.x2_scale,
        )
        data.to_csv(out / "dataset.csv")

    regime_threshold = float(np.median(data.x1)) if len(data) else 0.0
    bidders = config.bidders or data.bidders()
    transform = "lagged" if config.lagged else "contemporaneous"

    for bidder in bidders:
        sub = data.filter_bidder(bidder)
        if len(sub) == 0:
            log.warning("no observations for bidder %s", bidder)
            for form in config.forms:
                for family in config.families:
                    _write_text(
                        out / f"report_{bidder}_{form}_{family}.txt",
                        f"Bidder: {bidder}\nNo observations; empty panel.\n",
                    )
            continue

        scatter = scatter_export(sub)
        with open(out / f"scatter_{bidder}.csv", "w", encoding="utf-8", newline="\n") as fh:
            fh.write("bid_scaled,x1,x2,pctile_group\n")
            for bid, x1, x2, grp in scatter:
                fh.write(f"{bid!r},{x1!r},{x2!r},{grp}\n")

        for form in config.forms:
            for family in config.families:
                spec = TobitSpec(form=form, error_family=family, feature_transform=transform)
                tag = f"{bidder}_{form}_{family}"
                try:
                    full, red = _fit_pair(sub, spec, config)
                    comparison = compare_fits(full, red)
                    full.to_csv(out / f"fit_{tag}_full.csv")
                    red.to_csv(out / f"fit_{tag}_reduced.csv")
                    table = render_table(red, full, comparison, bidder=bidder)
                    _write_text(out / f"report_{tag}.txt", table.text)
                    table.to_csv(out / f"report_{tag}.csv")
                except BidvolError as exc:
                    log.warning("fit failed for %s: %s", tag, exc)
                    failures.append(("fit", bidder, form, family, "", str(exc)))
                    continue

                if not config.subsamples:
                    continue
                parts: list[tuple[str, RoundDataset]] = []
                if "monthly" in config.subsamples:
                    parts += list(split_monthly(sub).items())
                if "regime" in config.subsamples:
                    parts += list(split_regime(sub, threshold=regime_threshold).items())
                lines = [
                    "subsample,n,theta1_reduced,theta1_full,theta2_full,"
                    "lr_chi2,d_aic,d_bic,x1_min,x1_max,x2_min,x2_max"
                ]
                for name, part in parts:
                    try:
                        p_full, p_red = _fit_pair(part, spec, config)
                        p_cmp = compare_fits(p_full, p_red)
                        lines.append(
                            f"{name},{p_full.n_obs},"
                            f"{p_red.estimate('theta1')!r},{p_full.estimate('theta1')!r},"
                            f"{p_full.estimate('theta2')!r},"
                            f"{float(p_cmp.chi2)!r},{float(p_cmp.d_aic)!r},{float(p_cmp.d_bic)!r},"
                            f"{float(part.x1.min())!r},{float(part.x1.max())!r},"
                            f"{float(part.x2.min())!r},{float(part.x2.max())!r}"
                        )
                    except BidvolError as exc:
                        log.warning("subsample fit failed for %s/%s: %s", tag, name, exc)
                        failures.append(("subsample", bidder, form, family, name, str(exc)))
                _write_text(out / f"subsample_{tag}.csv", "\n".join(lines) + "\n")

    if failures:
        with open(out / "failure_manifest.csv", "w", encoding="utf-8", newline="\n") as fh:
            fh.write("stage,bidder,form,family,subsample,error\n")
            for row in failures:
                fh.write(",".join(item.replace(",", ";") for item in row) + "\n")
        return 2
    return 0
