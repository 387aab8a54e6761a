"""Command-line interface: ingest, moments, fit, simulate, report, pipeline."""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from .analysis import (
    RunConfig,
    canonical_family,
    compare_fits,
    render_table,
    run_pipeline,
)
from .auction_model import SimConfig, simulate_rounds
from .censored_mle import TobitSpec, fit_tobit, mcfadden_r2, reduced_spec
from .errors import BidvolError
from .market_data import RoundDataset, build_dataset, load_bids, load_candles, round_returns
from .vol_estimators import round_moments

log = logging.getLogger(__name__)


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--out", default="out", help="output directory")
    p.add_argument("--seed", type=int, default=None, help="rng / multi-start seed")


def _add_window(p: argparse.ArgumentParser) -> None:
    p.add_argument("--T", type=int, default=60, help="returns per round window")
    p.add_argument("--L", type=int, default=5, help="lag truncation for Var(IV)")


def _add_spec(p: argparse.ArgumentParser) -> None:
    p.add_argument("--form", choices=["linear", "loglog"], default="linear")
    p.add_argument("--family", choices=["t", "gauss"], default="t")
    p.add_argument("--bidder", default=None, help="restrict to one bidder")
    p.add_argument("--starts", type=int, default=5, help="optimizer multi-starts")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bidvol",
        description="Priority-auction bids vs short-horizon volatility: "
        "moment estimation, censored-regression fits, and reporting.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="build the regression dataset from exports")
    p.add_argument("--bids", required=True)
    p.add_argument("--candles", required=True)
    p.add_argument("--lagged", action="store_true", help="use previous-round features")
    _add_window(p)
    _add_common(p)

    p = sub.add_parser("moments", help="per-round volatility moment estimates")
    p.add_argument("--bids", required=True)
    p.add_argument("--candles", required=True)
    _add_window(p)
    _add_common(p)

    p = sub.add_parser("fit", help="fit one censored-regression spec")
    p.add_argument("--dataset", required=True)
    p.add_argument("--reduced", action="store_true", help="drop the Var(IV) terms")
    _add_spec(p)
    _add_common(p)

    p = sub.add_parser("simulate", help="generate a synthetic dataset with ground truth")
    p.add_argument("--config", default=None, help="key = value simulation config")
    p.add_argument("--n-rounds", type=int, default=None)
    p.add_argument("--n-bidders", type=int, default=None)
    _add_common(p)

    p = sub.add_parser("report", help="full/reduced fits plus a four-panel table")
    p.add_argument("--dataset", required=True)
    _add_spec(p)
    _add_common(p)

    p = sub.add_parser("pipeline", help="run the full analysis pipeline")
    p.add_argument("--config", default=None, help="key = value run config")
    p.add_argument("--bids", default=None)
    p.add_argument("--candles", default=None)
    p.add_argument("--bidder", action="append", default=None, help="repeatable filter")
    p.add_argument("--form", choices=["linear", "loglog"], default=None)
    p.add_argument("--family", choices=["t", "gauss"], default=None)
    p.add_argument("--lagged", action="store_true", default=None)
    p.add_argument("--T", type=int, default=None)
    p.add_argument("--L", type=int, default=None)
    _add_common(p)
    return parser


def _load_filtered(path: str, bidder: str | None) -> RoundDataset:
    data = RoundDataset.from_csv(path)
    if bidder:
        data = data.filter_bidder(bidder)
        if len(data) == 0:
            raise BidvolError(f"no rows for bidder {bidder!r}")
    return data


def _cmd_ingest(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    bids = load_bids(args.bids)
    candles = load_candles(args.candles)
    data = build_dataset(bids, candles, T=args.T, L=args.L, lagged=args.lagged)
    data.to_csv(out / "dataset.csv")
    print(
        f"dataset.csv: {len(data)} rows, {data.n_censored} censored, "
        f"{data.dropped_rows} dropped, {data.floored_rounds} floored round(s)"
    )
    return 0


def _cmd_moments(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    bids = load_bids(args.bids)
    candles = load_candles(args.candles)
    starts = sorted({(rec.round_id, rec.round_start) for rec in bids})
    with open(out / "moments.csv", "w", encoding="utf-8", newline="\n") as fh:
        fh.write("round_id,e_iv,var_iv,T,L,var_floored\n")
        for rid, start in starts:
            win = round_returns(candles, start, args.T, round_id=rid)
            mom = round_moments(win, args.L)
            fh.write(
                f"{rid},{mom.e_iv!r},{mom.var_iv!r},{mom.T},{mom.L},"
                f"{'true' if mom.var_floored else 'false'}\n"
            )
    print(f"moments.csv: {len(starts)} rounds")
    return 0


def _cmd_fit(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    data = _load_filtered(args.dataset, args.bidder)
    spec = TobitSpec(form=args.form, error_family=canonical_family(args.family))
    if args.reduced:
        spec = reduced_spec(spec)
    seed = args.seed if args.seed is not None else 0
    fit = fit_tobit(data, spec, starts=args.starts, start_seed=seed)
    kind = "reduced" if args.reduced else "full"
    path = out / f"fit_{args.form}_{spec.error_family}_{kind}.csv"
    fit.to_csv(path)
    for name, est in zip(fit.param_names, fit.estimates):
        se = fit.std_error(name)
        print(f"{name:8s} {est: .6g}" + (f"  (se {se:.3g})" if se else ""))
    print(f"loglik {fit.loglik:.4f}  aic {fit.aic:.2f}  bic {fit.bic:.2f} -> {path}")
    return 0


def _cmd_simulate(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.config:
        sim = SimConfig.from_file(args.config)
    else:
        sim = SimConfig()
    if args.seed is not None:
        sim.seed = args.seed
    if args.n_rounds is not None:
        sim.n_rounds = args.n_rounds
    if args.n_bidders is not None:
        sim.n_bidders = args.n_bidders
    data, truth = simulate_rounds(sim)
    data.to_csv(out / "dataset.csv")
    with open(out / "ground_truth.csv", "w", encoding="utf-8", newline="\n") as fh:
        fh.write("key,value\n")
        for key, val in truth.items():
            fh.write(f"{key},{val!r}\n")
    print(f"dataset.csv: {len(data)} rows ({data.n_censored} censored), ground_truth.csv")
    return 0


def _cmd_report(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    data = _load_filtered(args.dataset, args.bidder)
    spec = TobitSpec(form=args.form, error_family=canonical_family(args.family))
    seed = args.seed if args.seed is not None else 0
    full = fit_tobit(data, spec, starts=args.starts, start_seed=seed)
    red = fit_tobit(data, reduced_spec(spec), starts=args.starts, start_seed=seed)
    null = fit_tobit(data, spec, starts=args.starts, start_seed=seed, intercept_only=True)
    full.mcfadden_r2 = mcfadden_r2(full, null)
    red.mcfadden_r2 = mcfadden_r2(red, null)
    table = render_table(red, full, compare_fits(full, red), bidder=args.bidder or "all")
    tag = f"{args.bidder or 'all'}_{args.form}_{spec.error_family}"
    with open(out / f"report_{tag}.txt", "w", encoding="utf-8", newline="\n") as fh:
        fh.write(table.text)
    table.to_csv(out / f"report_{tag}.csv")
    print(table.text)
    return 0


def _cmd_pipeline(args) -> int:
    overrides = {
        "bids": args.bids,
        "candles": args.candles,
        "out": args.out,
        "seed": args.seed,
        "bidders": args.bidder,
        "forms": [args.form] if args.form else None,
        "families": [canonical_family(args.family)] if args.family else None,
        "lagged": args.lagged,
        "T": args.T,
        "L": args.L,
    }
    if args.config:
        config = RunConfig.from_file(args.config, overrides)
    else:
        config = RunConfig.from_mapping({}, overrides)
    code = run_pipeline(config)
    print(f"pipeline finished with exit code {code}; outputs in {config.out}")
    return code


def main(argv=None) -> int:
    logging.basicConfig(
        level=os.environ.get("BIDVOL_LOG", "INFO").upper(),
        format="%(levelname)s %(name)s: %(message)s",
    )
    args = build_parser().parse_args(argv)
    handlers = {
        "ingest": _cmd_ingest,
        "moments": _cmd_moments,
        "fit": _cmd_fit,
        "simulate": _cmd_simulate,
        "report": _cmd_report,
        "pipeline": _cmd_pipeline,
    }
    try:
        return handlers[args.command](args)
    except BidvolError as exc:
        log.error("%s", exc)
        return 1


if __name__ == "__main__":
    sys.exit(main())
