"""Command-line entry point: ``cossq <subcommand> ...``.

Exit codes: 0 success, 1 usage error, 2 data error.
"""

from __future__ import annotations

import argparse
import os
import sys
from typing import Optional, Sequence

from . import kernels
from .data import POLLUTANTS, DataError, load_directory, prepare_windows, serialize_records, summarize_distribution
from .evaluation import (
    PUBLISHED_QUARTILES,
    TrainSettings,
    ablate_seq_len,
    ablation_csv,
    bench_attention,
    evaluate_model,
    fit,
)
from .synthetic import fixture_dir

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def default_seed() -> int:
    raw = os.environ.get("COSLIN_SEED")
    if raw is None:
        return 42
    try:
        return int(raw)
    except ValueError:
        raise UsageError(f"COSLIN_SEED must be an integer, got {raw!r}") from None


def _int_list(text: str) -> list:
    try:
        values = [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not values or any(v < 1 for v in values):
        raise argparse.ArgumentTypeError(f"expected positive integers, got {text!r}")
    return values


def _pollutant_list(text: str) -> list:
    values = [x.strip() for x in text.split(",") if x.strip()]
    bad = [v for v in values if v not in POLLUTANTS]
    if bad or not values:
        raise argparse.ArgumentTypeError(f"unknown pollutant(s) {bad}; choose from {', '.join(POLLUTANTS)}")
    return values


def _add_data(p):
    p.add_argument("--data", default=None, help="directory with samples.csv (+ cities.csv, plants.csv); default: bundled synthetic fixture")


def _add_training(p, seed):
    p.add_argument("--seq-len", type=int, default=7)
    p.add_argument("--variant", choices=["softmax", "linear", "cos", "cossquare"], default="cossquare")
    p.add_argument("--form", choices=["linear", "direct"], default="linear", help="cos-square evaluation form used in training")
    p.add_argument("--causal", dest="causal", action="store_true", default=True)
    p.add_argument("--non-causal", dest="causal", action="store_false")
    p.add_argument("--lambda", dest="lam", type=float, default=0.5)
    p.add_argument("--gamma", type=float, default=1.0)
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--seed", type=int, default=seed)
    p.add_argument("--d-model", type=int, default=32)
    p.add_argument("--heads", type=int, default=4)
    p.add_argument("--layers", type=int, default=3)
    p.add_argument("--d-ff", type=int, default=64)
    p.add_argument("--segment-len", type=int, default=8)
    p.add_argument("--segments-per-batch", type=int, default=4)


def _settings(args) -> TrainSettings:
    return TrainSettings(
        variant=args.variant,
        causal=args.causal,
        form=args.form,
        d_model=args.d_model,
        n_heads=args.heads,
        n_layers=args.layers,
        d_ff=args.d_ff,
        lam=args.lam,
        gamma=args.gamma,
        epochs=args.epochs,
        lr=args.lr,
        segment_len=args.segment_len,
        segments_per_batch=args.segments_per_batch,
        seed=args.seed,
    )


def build_parser() -> argparse.ArgumentParser:
    seed = default_seed()
    parser = _Parser(prog="cossq", description="Cos-square attention forecaster for daily air-pollution series.")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("ingest", help="validate CSVs and summarize distributions")
    _add_data(p)
    p.add_argument("--out", help="write samples with the computed pp_feature column")

    p = sub.add_parser("train", help="train one model per pollutant and save a checkpoint")
    _add_data(p)
    p.add_argument("--pollutant", choices=POLLUTANTS, default="pm25")
    _add_training(p, seed)
    p.add_argument("--out", required=True, help="checkpoint path")

    p = sub.add_parser("eval", help="score a checkpoint on the test segment")
    _add_data(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--csv", help="also write the report CSV here")
    p.add_argument("--form", choices=["linear", "direct"], default=None)

    p = sub.add_parser("ablate", help="relative RMSE across sequence lengths")
    _add_data(p)
    p.add_argument("--pollutant", type=_pollutant_list, default=["pm25"])
    p.add_argument("--lengths", type=_int_list, required=True)
    p.add_argument("--base", type=int, default=7)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", help="write CSV here instead of stdout")
    _add_training(p, seed)

    p = sub.add_parser("bench", help="time direct vs streaming cos-square attention")
    p.add_argument("--sizes", type=_int_list, required=True)
    p.add_argument("--d", type=int, default=32)
    p.add_argument("--repeats", type=int, default=3)
    p.add_argument("--causal", action="store_true")
    p.add_argument("--variants", default="direct,linear")
    p.add_argument("--backend", choices=kernels.available_backends(), default=None)

    p = sub.add_parser("attn-map", help="mean-over-heads attention matrix of one layer as CSV")
    _add_data(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--layer", type=int, default=2)
    p.add_argument("--window", type=int, default=-1, help="index into the test windows (default: last)")
    p.add_argument("--out", help="write CSV here instead of stdout")
    return parser


def _records(args):
    return load_directory(args.data or fixture_dir())


def cmd_ingest(args) -> int:
    records = _records(args)
    cities = sorted({r.city for r in records})
    print(f"records: {len(records)}  cities: {len(cities)}")
    print(f"{'field':<16} {'q25':>10} {'q50':>10} {'q75':>10}   published q25/q50/q75")
    for name in POLLUTANTS + ("traffic_mmiles", "pp_feature"):
        try:
            q = summarize_distribution(records, name)
        except DataError:
            print(f"{name:<16} {'(none)':>10}")
            continue
        pub = PUBLISHED_QUARTILES.get(name)
        ref = "" if pub is None else f"   {pub[0]}/{pub[1]}/{pub[2]}"
        print(f"{name:<16} {q[0]:>10.3f} {q[1]:>10.3f} {q[2]:>10.3f}{ref}")
    if args.out:
        with open(args.out, "w", encoding="utf-8", newline="") as fh:
            serialize_records(records, fh, with_pp=True)
    return EXIT_OK


def cmd_train(args) -> int:
    from .model import save_checkpoint

    records = _records(args)
    model, report, train_w, test_w = fit(records, args.pollutant, args.seq_len, _settings(args))
    with open(args.out, "wb") as fh:
        save_checkpoint(model, fh)
    print(f"trained {args.pollutant} on {len(train_w)} windows in {report.seconds:.1f}s; "
          f"final loss {report.epoch_losses[-1]:.6f}; checkpoint {args.out}")
    return EXIT_OK


def _load_model(path):
    from .model import load_checkpoint

    try:
        with open(path, "rb") as fh:
            return load_checkpoint(fh)
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot read checkpoint {path}: {exc}") from exc


def cmd_eval(args) -> int:
    model = _load_model(args.checkpoint)
    _, test_w = prepare_windows(_records(args), model.pollutant, model.config.seq_len)
    if not test_w:
        raise DataError("no test windows in the data")
    if args.form:
        from dataclasses import replace

        model.config = replace(model.config, attention_form=args.form)
    report = evaluate_model(model, test_w)
    text = report.to_csv()
    if args.csv:
        with open(args.csv, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    sys.stdout.write(text)
    sys.stdout.write("\n")
    sys.stdout.write(report.to_text())
    return EXIT_OK


def cmd_ablate(args) -> int:
    rows = ablate_seq_len(_records(args), args.pollutant, args.lengths, args.base, _settings(args), args.workers)
    text = ablation_csv(rows)
    if args.out:
        with open(args.out, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    failed = [r for r in rows if r.error]
    for r in failed:
        print(f"run failed: {r.pollutant} seq_len={r.seq_len}: {r.error}", file=sys.stderr)
    return EXIT_DATA if failed else EXIT_OK


def cmd_bench(args) -> int:
    variants = [v.strip() for v in args.variants.split(",") if v.strip()]
    if not variants or any(v not in ("direct", "linear") for v in variants):
        raise UsageError(f"--variants takes direct and/or linear, got {args.variants!r}")
    previous = kernels.use_backend(args.backend) if args.backend else None
    try:
        result = bench_attention(args.sizes, args.d, args.repeats, args.causal, variants=variants)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    finally:
        if previous:
            kernels.use_backend(previous)
    sys.stdout.write(result.to_csv())
    for n, diff in result.max_rel_diff.items():
        print(f"n={n}: max relative difference direct vs linear {diff:.3e}", file=sys.stderr)
    return EXIT_OK


def cmd_attn_map(args) -> int:
    from .model import extract_attention

    model = _load_model(args.checkpoint)
    if not 0 <= args.layer < model.config.n_layers:
        raise UsageError(f"--layer must be in [0, {model.config.n_layers - 1}]")
    _, test_w = prepare_windows(_records(args), model.pollutant, model.config.seq_len)
    if not test_w:
        raise DataError("no test windows in the data")
    try:
        window = test_w[args.window]
    except IndexError:
        raise UsageError(f"--window {args.window} out of range ({len(test_w)} windows)") from None
    amap = extract_attention(model, window, args.layer).data
    lines = ["row," + ",".join(f"k{j}" for j in range(amap.shape[1]))]
    lines += [f"{i}," + ",".join(repr(float(x)) for x in row) for i, row in enumerate(amap)]
    text = "\n".join(lines) + "\n"
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


COMMANDS = {
    "ingest": cmd_ingest,
    "train": cmd_train,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
    "bench": cmd_bench,
    "attn-map": cmd_attn_map,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        parser = build_parser()
        if not argv:
            raise UsageError(parser.format_help())
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError(parser.format_help())
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(str(exc).rstrip(), file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
