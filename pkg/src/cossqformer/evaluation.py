"""Metrics, the persistence baseline, sequence-length ablation and attention timing."""

from __future__ import annotations

import csv
import io
import math
import statistics
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Iterable, Optional, Sequence

import numpy as np

from .attention import AttentionConfig, Variant, cos_square_attention_linear, reweighted_attention_direct
from .data import POLLUTANT_LABELS, SeriesWindow, prepare_windows
from .numkit import Tensor

MAPE_DELTA = 1e-8
REPORT_HEADER = ("pollutant", "model", "rmse", "mape_pct", "n_samples", "seed")
BENCH_HEADER = ("variant", "n", "d", "median_ms", "repeats")

# Published cosSquareFormer scores (RMSE, MAPE %), shown for context only.
PUBLISHED_SCORES = {
    "pm25": (11.68, 34.7),
    "pm10": (8.06, 45.9),
    "no2": (3.49, 43.5),
    "o3": (8.14, 146.6),
    "co": (5.42, 125.4),
    "so2": (1.75, 69.1),
}
# Published 25/50/75% quartiles of the full multi-city dataset.
PUBLISHED_QUARTILES = {
    "pm25": (21.0, 28.0, 39.0),
    "pm10": (10.0, 15.0, 21.0),
    "no2": (3.8, 6.4, 10.2),
    "o3": (14.5, 20.8, 27.2),
    "so2": (0.3, 1.1, 1.5),
    "co": (1.8, 2.5, 3.6),
    "traffic_mmiles": (19.54, 31.32, 49.44),
    "pp_feature": (0.40, 1.69, 6.95),
}


def _pair(y, y_hat) -> tuple:
    y = np.asarray(y, dtype=np.float64).ravel()
    y_hat = np.asarray(y_hat, dtype=np.float64).ravel()
    if y.size != y_hat.size:
        raise ValueError(f"length mismatch: {y.size} vs {y_hat.size}")
    if y.size == 0:
        raise ValueError("empty series")
    return y, y_hat


def rmse(y, y_hat) -> float:
    y, y_hat = _pair(y, y_hat)
    return math.sqrt(float(np.mean((y - y_hat) ** 2)))


def mape(y, y_hat) -> float:
    """Percent; each term's denominator is ``max(|y|, 1e-8)``."""
    y, y_hat = _pair(y, y_hat)
    return 100.0 * float(np.mean(np.abs(y - y_hat) / np.maximum(np.abs(y), MAPE_DELTA)))


@dataclass(frozen=True)
class MetricRow:
    pollutant: str
    model: str
    rmse: float
    mape_pct: float
    n_samples: int
    seed: int


@dataclass
class MetricReport:
    rows: list = field(default_factory=list)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(REPORT_HEADER)
        for r in self.rows:
            w.writerow([r.pollutant, r.model, repr(r.rmse), repr(r.mape_pct), r.n_samples, r.seed])
        return buf.getvalue()

    def to_text(self) -> str:
        lines = [
            f"{'pollutant':<10} {'model':<22} {'rmse':>10} {'mape %':>10} {'n':>6} {'seed':>6}"
            f" {'published rmse':>15} {'published mape %':>17}"
        ]
        for r in self.rows:
            pub = PUBLISHED_SCORES.get(r.pollutant)
            extra = f" {pub[0]:>15.2f} {pub[1]:>17.1f}" if pub else ""
            lines.append(
                f"{POLLUTANT_LABELS.get(r.pollutant, r.pollutant):<10} {r.model:<22} {r.rmse:>10.4f}"
                f" {r.mape_pct:>10.2f} {r.n_samples:>6d} {r.seed:>6d}{extra}"
            )
        lines.append("published columns: reported scores on the full multi-city dataset, not reproduced here")
        return "\n".join(lines) + "\n"

    def get(self, pollutant: str, model: str) -> MetricRow:
        for r in self.rows:
            if r.pollutant == pollutant and r.model == model:
                return r
        raise KeyError((pollutant, model))


def metric_row(pollutant: str, model: str, y, y_hat, seed: int) -> MetricRow:
    y, y_hat = _pair(y, y_hat)
    return MetricRow(pollutant, model, rmse(y, y_hat), mape(y, y_hat), int(y.size), int(seed))


def persistence_baseline(windows: Sequence[SeriesWindow], seed: int = 0) -> MetricReport:
    """Predict each window's previous-day level; one row per pollutant."""
    groups: dict = {}
    for w in windows:
        groups.setdefault(w.pollutant, []).append(w)
    report = MetricReport()
    for pollutant, ws in sorted(groups.items()):
        report.rows.append(
            metric_row(pollutant, "persistence", [w.target for w in ws], [w.prev_value for w in ws], seed)
        )
    return report


def model_name(model) -> str:
    return f"{model.config.attention.variant.value}-L{model.config.seq_len}"


def evaluate_model(model, windows: Sequence[SeriesWindow], with_baseline: bool = True) -> MetricReport:
    from .model import predict

    if not windows:
        raise ValueError("no evaluation windows")
    pred = predict(model, windows)
    pollutant = windows[0].pollutant
    report = MetricReport([metric_row(pollutant, model_name(model), [w.target for w in windows], pred, model.config.seed)])
    if with_baseline:
        report.rows.extend(persistence_baseline(windows, model.config.seed).rows)
    return report


@dataclass(frozen=True)
class TrainSettings:
    """Everything ``fit_and_score`` needs besides the data and sequence length."""

    variant: str = "cossquare"
    causal: bool = True
    form: str = "linear"
    d_model: int = 32
    n_heads: int = 4
    n_layers: int = 3
    d_ff: int = 64
    lam: float = 0.5
    gamma: float = 1.0
    epochs: int = 30
    lr: float = 1e-3
    segment_len: int = 8
    segments_per_batch: int = 4
    seed: int = 42


def fit(records, pollutant: str, seq_len: int, settings: TrainSettings):
    """Train one model; returns ``(model, report, train_windows, test_windows)``."""
    from .losses import LossConfig
    from .model import BatchSpec, ModelConfig, build_model, train

    train_w, test_w = prepare_windows(records, pollutant, seq_len)
    if not train_w:
        raise ValueError(f"{pollutant}: no training windows at seq_len={seq_len}")
    cfg = ModelConfig(
        seq_len=seq_len,
        d_model=settings.d_model,
        n_heads=settings.n_heads,
        n_layers=settings.n_layers,
        d_ff=settings.d_ff,
        attention=AttentionConfig(Variant(settings.variant), causal=settings.causal),
        attention_form=settings.form,
        seed=settings.seed,
    )
    model = build_model(cfg)
    report = train(
        model,
        train_w,
        LossConfig(settings.lam, settings.gamma),
        settings.epochs,
        settings.lr,
        BatchSpec(settings.segment_len, settings.segments_per_batch),
    )
    return model, report, train_w, test_w


def fit_and_score(records, pollutant: str, seq_len: int, settings: TrainSettings) -> float:
    from .model import predict

    model, _, _, test_w = fit(records, pollutant, seq_len, settings)
    if not test_w:
        raise ValueError(f"{pollutant}: no test windows at seq_len={seq_len}")
    return rmse([w.target for w in test_w], predict(model, test_w))


@dataclass(frozen=True)
class AblationRow:
    pollutant: str
    seq_len: int
    rmse: Optional[float]
    rrmse: Optional[float]
    error: str = ""


def _ablation_job(args):
    records, pollutant, length, settings = args
    try:
        return fit_and_score(records, pollutant, length, settings), ""
    except Exception as exc:  # reported per run, the rest of the table still completes
        return None, f"{type(exc).__name__}: {exc}"


def ablate_seq_len(
    records,
    pollutants: Sequence[str],
    lengths: Sequence[int],
    base_len: int = 7,
    settings: TrainSettings = TrainSettings(),
    workers: int = 1,
) -> list:
    """RMSE per sequence length relative to the ``base_len`` run, per pollutant."""
    lengths = list(lengths)
    if base_len not in lengths:
        raise ValueError(f"base length {base_len} must be one of {lengths}")
    jobs = [(records, p, n, settings) for p in pollutants for n in lengths]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_ablation_job, jobs))
    else:
        results = [_ablation_job(j) for j in jobs]
    by_key = {(j[1], j[2]): r for j, r in zip(jobs, results)}
    rows = []
    for p in pollutants:
        base = by_key[(p, base_len)][0]
        for n in lengths:
            score, err = by_key[(p, n)]
            if score is not None and base is None:
                err = err or f"base run (seq_len={base_len}) failed"
            rr = None if score is None or base is None else score / base
            rows.append(AblationRow(p, n, score, rr, err))
    return rows


def ablation_csv(rows: Iterable[AblationRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("pollutant", "seq_len", "rmse", "rrmse", "error"))
    for r in rows:
        w.writerow([r.pollutant, r.seq_len, "" if r.rmse is None else repr(r.rmse), "" if r.rrmse is None else repr(r.rrmse), r.error])
    return buf.getvalue()


@dataclass
class BenchResult:
    rows: list
    max_rel_diff: dict

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(BENCH_HEADER)
        for variant, n, d, ms, reps in self.rows:
            w.writerow([variant, n, d, f"{ms:.4f}", reps])
        return buf.getvalue()

    def median_ms(self, variant: str, n: int) -> float:
        for row in self.rows:
            if row[0] == variant and row[1] == n:
                return row[3]
        raise KeyError((variant, n))


def _time(fn, repeats: int, min_sample_s: float = 0.05) -> float:
    """Median per-call milliseconds; fast calls are looped so each sample spans ``min_sample_s``."""
    loops = 1
    while True:
        t0 = time.perf_counter()
        for _ in range(loops):
            fn()
        if time.perf_counter() - t0 >= min_sample_s or loops >= 1 << 16:
            break
        loops *= 2
    samples = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        for _ in range(loops):
            fn()
        samples.append((time.perf_counter() - t0) * 1e3 / loops)
    return statistics.median(samples)


def bench_attention(
    n_values: Sequence[int],
    d: int = 32,
    repeats: int = 3,
    causal: bool = False,
    seed: int = 0,
    variants: Sequence[str] = ("direct", "linear"),
) -> BenchResult:
    """Median forward time of direct vs streaming cos-square attention per N.

    Each size also re-checks that the two forms agree (relative max-norm).
    """
    n_values = list(n_values)
    if n_values != sorted(n_values):
        raise ValueError("n_values must be ascending")
    if repeats < 3:
        raise ValueError("repeats must be >= 3")
    rng = np.random.default_rng(seed)
    rows = []
    diffs = {}
    for n in n_values:
        q, k, v = (Tensor.wrap(rng.uniform(-1, 1, size=(n, d))) for _ in range(3))
        cfg = AttentionConfig(Variant.COS_SQUARE, causal=causal)
        funcs = {
            "direct": lambda: reweighted_attention_direct(q, k, v, cfg),
            "linear": lambda: cos_square_attention_linear(q, k, v, cfg),
        }
        outs = {}
        for name in variants:
            outs[name] = funcs[name]().output.data
            rows.append((name, n, d, _time(funcs[name], repeats), repeats))
        if "direct" in outs and "linear" in outs:
            ref = outs["direct"]
            diffs[n] = float(np.abs(outs["linear"] - ref).max() / max(np.abs(ref).max(), 1e-300))
    return BenchResult(rows, diffs)
