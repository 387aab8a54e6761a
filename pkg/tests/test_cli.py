import numpy as np

from bidvol.cli import main

T0 = 1_746_057_600_000


def write_inputs(tmp_path, n_rounds=3):
    rng = np.random.default_rng(0)
    n_bars = n_rounds * 60 + 1
    closes = 2500 * np.exp(np.cumsum(rng.normal(0, 0.0004, n_bars)))
    candle_lines = ["open_time_ms,open,high,low,close,volume"]
    for i in range(n_bars):
        c = closes[i]
        candle_lines.append(f"{T0 + i * 1000},{c},{c},{c},{c},1.0")
    candles = tmp_path / "candles.csv"
    candles.write_text("\n".join(candle_lines) + "\n")

    bid_lines = ["round_id,bidder,bid_wei,round_start_ms"]
    for r in range(n_rounds):
        bid_lines.append(f"{r},0xaa,{2 * 10**15 + r * 10**14},{T0 + r * 60_000}")
        bid_lines.append(f"{r},0xbb,{10**15},{T0 + r * 60_000}")
    bids = tmp_path / "bids.csv"
    bids.write_text("\n".join(bid_lines) + "\n")
    return bids, candles


def test_ingest_command(tmp_path, capsys):
    bids, candles = write_inputs(tmp_path)
    out = tmp_path / "out"
    code = main(["ingest", "--bids", str(bids), "--candles", str(candles), "--out", str(out)])
    assert code == 0
    assert (out / "dataset.csv").exists()
    assert "6 rows" in capsys.readouterr().out


def test_moments_command(tmp_path):
    bids, candles = write_inputs(tmp_path)
    out = tmp_path / "out"
    code = main(["moments", "--bids", str(bids), "--candles", str(candles), "--out", str(out)])
    assert code == 0
    lines = (out / "moments.csv").read_text().splitlines()
    assert lines[0] == "round_id,e_iv,var_iv,T,L,var_floored"
    assert len(lines) == 4


def test_simulate_fit_report_roundtrip(tmp_path, capsys):
    out = tmp_path / "sim"
    code = main(["simulate", "--out", str(out), "--seed", "3", "--n-rounds", "800"])
    assert code == 0
    dataset = out / "dataset.csv"
    assert dataset.exists() and (out / "ground_truth.csv").exists()

    code = main(
        ["fit", "--dataset", str(dataset), "--bidder", "bidder_0",
         "--form", "linear", "--family", "t", "--starts", "2", "--out", str(out)]
    )
    assert code == 0
    assert (out / "fit_linear_student_t_full.csv").exists()
    assert "loglik" in capsys.readouterr().out

    code = main(
        ["report", "--dataset", str(dataset), "--bidder", "bidder_0",
         "--form", "linear", "--family", "t", "--starts", "2", "--out", str(out)]
    )
    assert code == 0
    text = (out / "report_bidder_0_linear_student_t.txt").read_text()
    assert "Panel D: Full vs Reduced Model Comparison" in text
    assert "McFadden R2" in text


def test_fit_reduced_flag(tmp_path):
    out = tmp_path / "sim"
    main(["simulate", "--out", str(out), "--seed", "5", "--n-rounds", "500"])
    code = main(
        ["fit", "--dataset", str(out / "dataset.csv"), "--reduced",
         "--form", "linear", "--family", "gauss", "--starts", "1", "--out", str(out)]
    )
    assert code == 0
    text = (out / "fit_linear_gaussian_reduced.csv").read_text()
    assert "theta2" not in text


def test_pipeline_command_with_config(tmp_path):
    cfg = tmp_path / "run.cfg"
    out = tmp_path / "out"
    cfg.write_text(
        "mode = simulate\n"
        f"out = {out}\n"
        "forms = linear\nfamilies = t\nseed = 2\nstarts = 2\nn_rounds = 400\n"
    )
    code = main(["pipeline", "--config", str(cfg), "--out", str(out)])
    assert code == 0
    assert (out / "report_bidder_0_linear_student_t.txt").exists()


def test_unknown_bidder_fit_fails_cleanly(tmp_path):
    out = tmp_path / "sim"
    main(["simulate", "--out", str(out), "--seed", "1", "--n-rounds", "300"])
    code = main(
        ["fit", "--dataset", str(out / "dataset.csv"), "--bidder", "nobody",
         "--out", str(out)]
    )
    assert code == 1


def test_pipeline_data_mode_end_to_end(tmp_path):
    bids, candles = write_inputs(tmp_path, n_rounds=150)
    out = tmp_path / "out"
    code = main(
        ["pipeline", "--bids", str(bids), "--candles", str(candles),
         "--bidder", "0xaa", "--form", "linear", "--family", "gauss",
         "--out", str(out), "--seed", "1"]
    )
    assert code == 0
    assert (out / "dataset.csv").exists()
    report = (out / "report_0xaa_linear_gaussian.txt").read_text()
    assert "Heteroskedastic Tobit (Linear, Gaussian Errors)" in report
    assert (out / "scatter_0xaa.csv").exists()


def test_pipeline_partial_failure_manifest(tmp_path):
    # bidder 0xbb always bids the reserve: an all-censored cell that cannot
    # be fit is recorded in the manifest while the other bidder still runs
    bids, candles = write_inputs(tmp_path, n_rounds=120)
    out = tmp_path / "out"
    code = main(
        ["pipeline", "--bids", str(bids), "--candles", str(candles),
         "--form", "linear", "--family", "gauss", "--out", str(out), "--seed", "1"]
    )
    assert code == 2
    manifest = (out / "failure_manifest.csv").read_text()
    assert "0xbb" in manifest and "censored" in manifest
    assert (out / "report_0xaa_linear_gaussian.txt").exists()
