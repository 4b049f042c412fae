"""Command-line experiment runner.

Subcommands mirror the experimental workflow: ``train`` fits a model and
reports test metrics, ``eval`` re-scores a checkpoint, ``hist`` collects
the relevance distribution of mined hard negatives over one epoch, and
``sweep`` trains a grid of strategy/threshold or margin settings. Every
command echoes its configuration as JSON and writes CSV tables plus PNG
figures into the output directory. Exit codes: 0 success, 1 usage error,
2 runtime error.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import figures
from .data import (
    Dataset,
    InvalidConfigError,
    SYNTHETIC_PRESETS,
    generate_synthetic,
    load_dataset,
    sample_batches,
    synthetic_preset,
)
from .metrics import MetricsReport, evaluate
from .mining import Strategy, mine_batch
from .model import (
    IncompatibleCheckpointError,
    ModelParams,
    TrainConfig,
    _EPOCH_STREAM,
    _INIT_STREAM,
    _forward_unclipped,
    init_params,
    load_checkpoint,
    save_checkpoint,
    split_relevance,
    train,
)

DEFAULT_TAUS = (0.75, 0.40, 0.15)
DEFAULT_DELTA_PS = (0.10, 0.15, 0.20, 0.25, 0.30)
HIST_BINS = 101


def _unit_interval(text: str) -> float:
    value = float(text)
    if not 0.0 <= value <= 1.0:
        raise argparse.ArgumentTypeError(f"{value} is not in [0, 1]")
    return value


def _nonnegative_int(text: str) -> int:
    value = int(text)
    if value < 0:
        raise argparse.ArgumentTypeError(f"{value} is negative")
    return value


def _batch_size(text: str) -> int:
    value = int(text)
    if value < 2:
        raise argparse.ArgumentTypeError(f"batch size must be >= 2, got {value}")
    return value


def _positive_float(text: str) -> float:
    value = float(text)
    if value <= 0:
        raise argparse.ArgumentTypeError(f"{value} is not positive")
    return value


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"{value} is not >= 1")
    return value


def _rho(text: str) -> float:
    value = float(text)
    if not 0.0 < value <= 1.0:
        raise argparse.ArgumentTypeError(f"rho must be in (0, 1], got {value}")
    return value


def _float_list(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(part) for part in text.split(","))
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad float list {text!r}") from exc


def _add_common_args(parser: argparse.ArgumentParser, command: str) -> None:
    source = parser.add_mutually_exclusive_group(required=True)
    source.add_argument("--dataset", type=Path, help="JSONL dataset file")
    source.add_argument("--synthetic", choices=sorted(SYNTHETIC_PRESETS),
                        help="generate a synthetic dataset preset (seeded by --seed)")
    parser.add_argument("--strategy", choices=[s.value for s in Strategy], default="ranp")
    parser.add_argument("--tau", type=_unit_interval, default=0.15,
                        help="relevance threshold separating negatives from positives")
    parser.add_argument("--delta-n", type=float, default=0.2, help="negative-term margin")
    parser.add_argument("--delta-p", type=float, default=0.2, help="positive-term margin")
    parser.add_argument("--rho", type=_rho, default=0.25,
                        help="caption-frequency threshold for video profiles")
    parser.add_argument("--epochs", type=_nonnegative_int, default=50)
    parser.add_argument("--batch-size", type=_batch_size, default=64)
    parser.add_argument("--lr", type=_positive_float, default=0.1)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--embed-dim", type=_positive_int, default=32)
    parser.add_argument("--t2v-weight", type=float, default=1.0,
                        help="weight of the text-to-video loss direction")
    parser.add_argument("--empty-empty", type=_unit_interval, default=1.0,
                        help="Jaccard value when both class sets are empty")
    parser.add_argument("--out", type=Path, default=Path("runs") / command,
                        help="output directory for tables and figures")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="relmine",
        description="Relevance-aware online mining for cross-modal retrieval",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train a model and report test metrics")
    _add_common_args(p_train, "train")
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint on a dataset split")
    _add_common_args(p_eval, "eval")
    p_eval.add_argument("--checkpoint", type=Path, required=True)
    p_eval.add_argument("--split", choices=("train", "val", "test"), default="test")
    p_eval.add_argument("--swap-directions", action="store_true",
                        help="swap the t2v and v2t report columns")
    p_eval.set_defaults(func=cmd_eval)

    p_hist = sub.add_parser("hist", help="relevance histogram of mined hard negatives")
    _add_common_args(p_hist, "hist")
    p_hist.add_argument("--checkpoint", type=Path, default=None,
                        help="mine with trained weights instead of the seeded init")
    p_hist.set_defaults(func=cmd_hist)

    p_sweep = sub.add_parser("sweep", help="train a grid of configurations")
    _add_common_args(p_sweep, "sweep")
    p_sweep.add_argument("--grid", choices=("single", "tau", "margins"), default="tau")
    p_sweep.add_argument("--taus", type=_float_list, default=DEFAULT_TAUS,
                         help="comma-separated tau values for the tau grid")
    p_sweep.add_argument("--delta-ps", type=_float_list, default=DEFAULT_DELTA_PS,
                         help="comma-separated positive margins for the margins grid")
    p_sweep.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 1
    try:
        return args.func(args)
    except (InvalidConfigError, IncompatibleCheckpointError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def _load_data(args) -> Dataset:
    if args.dataset is not None:
        return load_dataset(args.dataset)
    return generate_synthetic(synthetic_preset(args.synthetic, seed=args.seed))


def _train_config(args) -> TrainConfig:
    return TrainConfig(
        strategy=Strategy(args.strategy),
        tau=args.tau,
        delta_n=args.delta_n,
        delta_p=args.delta_p,
        rho=args.rho,
        epochs=args.epochs,
        batch_size=args.batch_size,
        lr=args.lr,
        seed=args.seed,
        embed_dim=args.embed_dim,
        t2v_weight=args.t2v_weight,
        empty_empty=args.empty_empty,
    )


def _echo_config(args, out: Path, extra: dict | None = None) -> None:
    skip = {"func"}
    echo = {k: v for k, v in vars(args).items() if k not in skip}
    for key, value in list(echo.items()):
        if isinstance(value, Path):
            echo[key] = str(value)
    if extra:
        echo.update(extra)
    (out / "config.json").write_text(json.dumps(echo, indent=2, sort_keys=True) + "\n")


def _prepare_out(args, extra: dict | None = None) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _echo_config(args, out, extra)
    return out


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(cell) for cell in row])


def _write_metrics_csv(path: Path, report: MetricsReport) -> None:
    _write_csv(path, ["metric", "t2v", "v2t", "avg"], [
        ["ndcg", report.ndcg_t2v, report.ndcg_v2t, report.ndcg_avg],
        ["map", report.map_t2v, report.map_v2t, report.map_avg],
    ])


def _write_step_log(path: Path, step_logs) -> None:
    _write_csv(path, ["epoch", "step", "total", "l_n_sum", "l_p_sum", "skipped"], [
        [row.epoch, row.step, row.total, row.l_n_sum, row.l_p_sum, row.skipped]
        for row in step_logs
    ])


def cmd_train(args) -> int:
    dataset = _load_data(args)
    config = _train_config(args)
    out = _prepare_out(args)

    result = train(dataset, config)
    save_checkpoint(out / "checkpoint.json", result.params, config,
                    result.best_epoch, result.best_val_ndcg)
    _write_step_log(out / "training_log.csv", result.step_logs)
    if result.val_logs:
        _write_csv(out / "val_log.csv", ["epoch", "ndcg_avg", "ndcg_t2v", "ndcg_v2t"], [
            [row.epoch, row.ndcg_avg, row.ndcg_t2v, row.ndcg_v2t] for row in result.val_logs
        ])
    figures.save_training_curves(result.step_logs, result.val_logs, out / "training_curves.png")

    if dataset.splits.get("test"):
        report = evaluate(result.params, dataset, "test",
                          rho=config.rho, empty_empty=config.empty_empty)
        _write_metrics_csv(out / "metrics_test.csv", report)
        figures.save_metrics_figure(report, out / "metrics_test.png")
        print(f"test nDCG avg {report.ndcg_avg:.2f}% "
              f"(t2v {report.ndcg_t2v:.2f}%, v2t {report.ndcg_v2t:.2f}%)")
    print(f"artifacts written to {out}")
    return 0


def cmd_eval(args) -> int:
    dataset = _load_data(args)
    params, _meta = load_checkpoint(args.checkpoint)
    if params.w_video.shape[0] != dataset.d_video or params.w_text.shape[0] != dataset.d_text:
        raise IncompatibleCheckpointError(
            f"checkpoint expects features {params.w_video.shape[0]}/{params.w_text.shape[0]}, "
            f"dataset provides {dataset.d_video}/{dataset.d_text}"
        )
    out = _prepare_out(args)
    report = evaluate(params, dataset, args.split, rho=args.rho, empty_empty=args.empty_empty)
    if args.swap_directions:
        report = report.swapped()
    _write_metrics_csv(out / "metrics.csv", report)
    figures.save_metrics_figure(report, out / "metrics.png")
    print(f"{args.split} nDCG avg {report.ndcg_avg:.2f}% "
          f"(t2v {report.ndcg_t2v:.2f}%, v2t {report.ndcg_v2t:.2f}%)")
    return 0


def collect_negative_relevances(
    dataset: Dataset,
    params: ModelParams,
    config: TrainConfig,
    split: str = "train",
) -> tuple[np.ndarray, int]:
    """Relevance of every mined hard negative over one epoch of batches in
    both retrieval directions, plus the count of skipped anchors."""
    rel_full, video_pos, caption_pos = split_relevance(dataset, config, split)
    values: list[float] = []
    skipped = 0
    batches = sample_batches(dataset, split, config.batch_size,
                             seed=[config.seed, _EPOCH_STREAM, 0])
    gt_cache: dict[int, np.ndarray] = {}
    for batch in batches:
        v_feats = dataset.video_feature_matrix(batch.video_ids)
        q_feats = dataset.caption_feature_matrix(batch.caption_ids)
        v_idx = [video_pos[v] for v in batch.video_ids]
        q_idx = [caption_pos[c] for c in batch.caption_ids]
        rel = rel_full[np.ix_(v_idx, q_idx)]
        _, _, _, _, sims = _forward_unclipped(v_feats, q_feats, params)
        n = sims.shape[0]
        gt = gt_cache.setdefault(n, np.arange(n))
        for direction_sims, direction_rel in ((sims, rel), (sims.T, rel.T)):
            mined = mine_batch(direction_sims, direction_rel, gt, config.tau, config.strategy)
            for i in range(n):
                if mined.skipped_negative[i]:
                    skipped += 1
                else:
                    values.append(float(direction_rel[i, mined.negative_indices[i]]))
    return np.asarray(values), skipped


def histogram_counts(values: np.ndarray) -> np.ndarray:
    """Counts per integer-percent bin 0..100, flooring each value so that
    everything strictly below a percent boundary stays below it."""
    values = np.asarray(values, dtype=float)
    counts = np.zeros(HIST_BINS, dtype=np.int64)
    if values.size:
        bins = np.clip(np.floor(values * 100).astype(np.int64), 0, 100)
        for b in bins:
            counts[b] += 1
    return counts


def forbidden_bin_start(tau: float) -> int:
    """First histogram bin that relevance-aware negative mining must leave
    empty: everything at or above tau, in integer percent."""
    return int(math.ceil(tau * 100 - 1e-9))


def cmd_hist(args) -> int:
    dataset = _load_data(args)
    config = _train_config(args)
    if args.checkpoint is not None:
        params, _meta = load_checkpoint(args.checkpoint)
    else:
        rng = np.random.default_rng([config.seed, _INIT_STREAM])
        params = init_params(dataset.d_video, dataset.d_text, config.embed_dim, rng)
    out = _prepare_out(args)

    values, skipped = collect_negative_relevances(dataset, params, config)
    counts = histogram_counts(values)
    total = int(counts.sum())
    _write_csv(out / "histogram.csv", ["bin_percent", "count", "frequency"], [
        [b, int(counts[b]), (int(counts[b]) / total if total else 0.0)]
        for b in range(HIST_BINS)
    ])
    cutoff = config.tau if config.strategy in (Strategy.RAN, Strategy.RANP) else None
    figures.save_histogram_figure(counts.tolist(), cutoff, out / "histogram.png")
    print(f"mined negatives: {total}, skipped anchors: {skipped}")

    if cutoff is not None:
        start = forbidden_bin_start(config.tau)
        mass_above = int(counts[start:].sum())
        if mass_above:
            print(f"verification FAILED: {mass_above} mined negatives in bins >= {start}",
                  file=sys.stderr)
            return 2
        print(f"verified: no mined-negative relevance in bins >= {start} (tau={config.tau})")
    return 0


def _sweep_points(args) -> list[dict]:
    if args.grid == "single":
        return [{
            "label": f"{args.strategy} tau={args.tau:g}",
            "strategy": Strategy(args.strategy), "tau": args.tau,
            "delta_n": args.delta_n, "delta_p": args.delta_p,
        }]
    if args.grid == "tau":
        points = [{
            "label": "standard", "strategy": Strategy.STANDARD, "tau": args.tau,
            "delta_n": args.delta_n, "delta_p": args.delta_p,
        }]
        for strategy in (Strategy.RAN, Strategy.RANP):
            for tau in args.taus:
                points.append({
                    "label": f"{strategy.value} tau={tau:g}",
                    "strategy": strategy, "tau": tau,
                    "delta_n": args.delta_n, "delta_p": args.delta_p,
                })
        return points
    points = []
    for delta_p in args.delta_ps:
        points.append({
            "label": f"ranp dp={delta_p:g}",
            "strategy": Strategy.RANP, "tau": args.tau,
            "delta_n": args.delta_n, "delta_p": delta_p,
        })
    return points


def cmd_sweep(args) -> int:
    dataset = _load_data(args)
    base = _train_config(args)
    out = _prepare_out(args)

    rows = []
    for point in _sweep_points(args):
        config = replace(base, strategy=point["strategy"], tau=point["tau"],
                         delta_n=point["delta_n"], delta_p=point["delta_p"])
        result = train(dataset, config)
        report = evaluate(result.params, dataset, "test",
                          rho=config.rho, empty_empty=config.empty_empty)
        rows.append({**point, "report": report})
        print(f"{point['label']}: test nDCG avg {report.ndcg_avg:.2f}%")

    _write_csv(out / "sweep.csv",
               ["strategy", "tau", "delta_n", "delta_p",
                "ndcg_t2v", "ndcg_v2t", "ndcg_avg", "map_t2v", "map_v2t", "map_avg"],
               [[row["strategy"].value,
                 row["tau"] if row["strategy"] is not Strategy.STANDARD else None,
                 row["delta_n"], row["delta_p"],
                 row["report"].ndcg_t2v, row["report"].ndcg_v2t, row["report"].ndcg_avg,
                 row["report"].map_t2v, row["report"].map_v2t, row["report"].map_avg]
                for row in rows])
    figures.save_sweep_figure(
        [{"label": row["label"], "ndcg_avg": row["report"].ndcg_avg,
          "map_avg": row["report"].map_avg} for row in rows],
        out / "sweep.png",
    )
    print(f"sweep table written to {out / 'sweep.csv'}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
