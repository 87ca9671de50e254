import datetime as dt
import math

import numpy as np
import pytest

from cossqformer.data import POLLUTANTS, PP_FEATURE, RAW_FEATURES, SampleRecord, build_windows
from cossqformer.evaluation import (
    BENCH_HEADER,
    REPORT_HEADER,
    MetricReport,
    TrainSettings,
    ablate_seq_len,
    ablation_csv,
    bench_attention,
    mape,
    metric_row,
    persistence_baseline,
    rmse,
)
from cossqformer.synthetic import make_lagged_fixture

from oracles import mape_loop, rmse_loop

TINY = TrainSettings(epochs=1, d_model=8, n_heads=2, n_layers=1, d_ff=16)
LAGGED = TrainSettings(epochs=20, d_model=16, n_heads=2, n_layers=1, d_ff=32, lr=3e-3)


def series_windows(levels, seq_len=3, city="X"):
    recs = []
    for t, v in enumerate(levels):
        feats = {f: 1.0 for f in RAW_FEATURES}
        feats[PP_FEATURE] = 0.0
        recs.append(SampleRecord(city, dt.date(2020, 1, 1) + dt.timedelta(days=t), {p: float(v) for p in POLLUTANTS}, feats))
    return build_windows(recs, "pm25", seq_len)


class TestMetrics:
    def test_rmse(self):
        assert rmse([1.0, 2.0], [1.0, 2.0]) == 0.0
        assert rmse([0.0, 0.0], [3.0, 4.0]) == pytest.approx(math.sqrt(12.5), abs=1e-15)

    def test_mape(self):
        assert mape([4.0, 5.0], [4.0, 5.0]) == 0.0
        assert mape([10.0], [12.0]) == pytest.approx(20.0, abs=1e-12)

    def test_mape_zero_guard(self):
        v = mape([0.0, 10.0], [0.0, 11.0])
        assert v == pytest.approx(5.0, abs=1e-12) and math.isfinite(v)
        assert math.isfinite(mape([0.0], [1.0]))

    def test_errors(self):
        for fn in (rmse, mape):
            with pytest.raises(ValueError):
                fn([1.0], [1.0, 2.0])
            with pytest.raises(ValueError):
                fn([], [])

    def test_scalar_loop_agreement(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            y = rng.uniform(-5, 50, 30)
            y[rng.integers(0, 30)] = 0.0
            yh = y + rng.normal(size=30)
            assert abs(rmse(y, yh) - rmse_loop(y.tolist(), yh.tolist())) < 1e-12
            assert abs(mape(y, yh) - mape_loop(y.tolist(), yh.tolist())) <= 1e-12 * max(1.0, mape(y, yh))


class TestPersistence:
    def test_constant_series(self):
        rep = persistence_baseline(series_windows([7.0] * 20))
        assert rep.get("pm25", "persistence").rmse == 0.0

    def test_linear_ramp(self):
        rep = persistence_baseline(series_windows([3.0 + 2.5 * t for t in range(30)]))
        assert rep.get("pm25", "persistence").rmse == pytest.approx(2.5, abs=1e-12)

    def test_random_walk_matches_loop(self):
        rng = np.random.default_rng(1)
        levels = 50 + np.cumsum(rng.normal(size=80))
        ws = series_windows(levels.tolist(), seq_len=5)
        row = persistence_baseline(ws, seed=3).rows[0]
        y = levels[5:].tolist()
        yh = levels[4:-1].tolist()
        assert row.n_samples == 75 and row.seed == 3 and row.model == "persistence"
        assert abs(row.rmse - rmse_loop(y, yh)) < 1e-12
        assert abs(row.mape_pct - mape_loop(y, yh)) < 1e-12


class TestReport:
    def test_csv(self):
        rep = MetricReport([metric_row("pm25", "m", [1.0, 2.0], [1.5, 2.0], 42)])
        lines = rep.to_csv().splitlines()
        assert lines[0] == ",".join(REPORT_HEADER)
        assert lines[1] == f"pm25,m,{rmse([1.0, 2.0], [1.5, 2.0])!r},{mape([1.0, 2.0], [1.5, 2.0])!r},2,42"

    def test_text_is_labelled(self):
        rep = MetricReport([metric_row("pm25", "m", [1.0], [1.0], 1)])
        text = rep.to_text()
        assert "published" in text and "11.68" in text and "PM2.5" in text

    def test_no_nan_with_zero_targets(self):
        row = metric_row("so2", "m", [0.0, 0.0, 0.2], [0.0, 0.1, 0.2], 0)
        assert math.isfinite(row.rmse) and math.isfinite(row.mape_pct)


class TestAblation:
    def test_self_ratio(self):
        rows = ablate_seq_len(make_lagged_fixture(n_days=240), ["pm25"], [7], 7, TINY)
        assert rows[0].rrmse == 1.0 and rows[0].error == ""

    def test_base_must_be_listed(self):
        with pytest.raises(ValueError):
            ablate_seq_len([], ["pm25"], [3, 14], 7, TINY)

    def test_reproducible(self):
        recs = make_lagged_fixture(n_days=240)
        a = ablate_seq_len(recs, ["pm25"], [3, 7], 7, TINY)
        b = ablate_seq_len(recs, ["pm25"], [3, 7], 7, TINY)
        assert ablation_csv(a) == ablation_csv(b)

    def test_parallel_matches_serial(self):
        recs = make_lagged_fixture(n_days=240)
        serial = ablate_seq_len(recs, ["pm25"], [3, 7], 7, TINY, workers=1)
        parallel = ablate_seq_len(recs, ["pm25"], [3, 7], 7, TINY, workers=2)
        assert ablation_csv(serial) == ablation_csv(parallel)

    def test_failed_run_is_named(self):
        rows = ablate_seq_len(make_lagged_fixture(n_days=240), ["pm25"], [7, 300], 7, TINY)
        bad = next(r for r in rows if r.seq_len == 300)
        assert bad.rmse is None and "no training windows" in bad.error
        assert "300" in ablation_csv(rows)

    def test_longer_context_helps_on_lagged_series(self):
        rows = ablate_seq_len(make_lagged_fixture(), ["pm25"], [3, 7, 14], 7, LAGGED)
        by_len = {r.seq_len: r.rrmse for r in rows}
        assert by_len[14] < by_len[3]


class TestBench:
    def test_csv_and_agreement(self):
        res = bench_attention([32, 64], d=8, repeats=3)
        lines = res.to_csv().splitlines()
        assert lines[0] == ",".join(BENCH_HEADER)
        assert len(lines) == 1 + 4
        assert all(v < 1e-10 for v in res.max_rel_diff.values())
        assert res.median_ms("linear", 64) > 0

    def test_preconditions(self):
        with pytest.raises(ValueError):
            bench_attention([64, 32])
        with pytest.raises(ValueError):
            bench_attention([32], repeats=2)
