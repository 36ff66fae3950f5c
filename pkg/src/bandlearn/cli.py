"""Command-line entry point.

Subcommands: gen, train, personalize, tta, poison-sweep, eval. Every command
is config-file driven (--config), deterministic per seed (--seed overrides
the config's global seed), writes machine-readable artifacts into --out, and
exits 0 on success, 1 on validation errors, 2 on runtime failures.
"""

import argparse
import csv
import dataclasses
import io
import json
import os
import sys

import numpy as np

from .config import RunConfig, load_config
from .evaluate import (
    evaluate_clips,
    forgetting_report,
    rate_metrics,
    read_rates_csv,
    write_rates_csv,
)
from .exceptions import BandlearnError, ConfigError, InvalidBandError, InvalidInputError
from .model import load_checkpoint, save_checkpoint
from .synth import clip_window, gen_dataset, gen_positive, load_clip, load_dataset, load_manifest
from .train import (
    personalize,
    poison_sweep,
    stream_gt_rates,
    train,
    tta_run,
    write_history,
)
from .util import atomic_write_text, derive_seed

__all__ = ["main"]


def _write_json(path: str, obj) -> None:
    atomic_write_text(path, json.dumps(obj, sort_keys=True, indent=2) + "\n")


def _load_run_config(args) -> RunConfig:
    if not args.config:
        raise ConfigError("--config is required for this command")
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    return cfg


def _require_path(value: str | None, name: str) -> str:
    if value is None:
        raise ConfigError(f"config paths.{name} is required for this command")
    if not os.path.exists(value):
        raise ConfigError(f"paths.{name} does not exist: {value}")
    return value


def _require_section(value, name: str):
    if value is None:
        raise ConfigError(f"config section '{name}' is required for this command")
    return value


def _dataset_clips(cfg: RunConfig, key: str = "dataset"):
    path = _require_path(getattr(cfg.paths, key), key)
    manifest = load_manifest(path)
    return manifest, load_dataset(manifest)


def cmd_gen(args) -> int:
    cfg = _load_run_config(args)
    spec = _require_section(cfg.gen, "gen")
    manifest = gen_dataset(spec, cfg.n_clips, args.out, cfg.source_len_factor)
    print(
        f"wrote {len(manifest.entries)} clips to {args.out} "
        f"(band [{cfg.band.a}, {cfg.band.b}] Hz, gen seed {spec.seed})"
    )
    return 0


def cmd_train(args) -> int:
    cfg = _load_run_config(args)
    model_cfg = _require_section(cfg.model, "model")
    train_cfg = _require_section(cfg.train, "train")
    manifest, clips = _dataset_clips(cfg)
    params, history = train(model_cfg, train_cfg, manifest)
    os.makedirs(args.out, exist_ok=True)
    save_checkpoint(os.path.join(args.out, "checkpoint.bin"), params)
    write_history(os.path.join(args.out, "history.jsonl"), history)
    if cfg.paths.eval_dataset:
        eval_clips = load_dataset(load_manifest(_require_path(cfg.paths.eval_dataset, "eval_dataset")))
    else:
        eval_clips = clips
    metrics = evaluate_clips(params, eval_clips, cfg.band, cfg.spectral, train_cfg.clip_len)
    _write_json(os.path.join(args.out, "metrics.json"), metrics.as_dict())
    final_loss = history.steps[-1].losses.total if history.steps else float("nan")
    print(f"trained {len(history.steps)} steps; final loss {final_loss:.4f}; "
          f"eval MAE {metrics.mae:.2f} bpm -> {args.out}")
    return 0


def cmd_personalize(args) -> int:
    cfg = _load_run_config(args)
    train_cfg = _require_section(cfg.train, "train")
    pretrained = load_checkpoint(_require_path(cfg.paths.checkpoint, "checkpoint"))
    subject = load_clip(_require_path(cfg.paths.subject_clip, "subject_clip"))
    adapted, history = personalize(pretrained, subject, train_cfg)
    os.makedirs(args.out, exist_ok=True)
    save_checkpoint(os.path.join(args.out, "adapted_checkpoint.bin"), adapted)
    write_history(os.path.join(args.out, "history.jsonl"), history)

    head_len = min(subject.n_frames, int(round(20.0 * subject.fps)))
    stride = train_cfg.clip_len // 2
    windows = [
        clip_window(subject, start, train_cfg.clip_len)
        for start in range(0, head_len - train_cfg.clip_len + 1, stride)
    ]
    report = {
        "subject_before": evaluate_clips(pretrained, windows, cfg.band, cfg.spectral).as_dict(),
        "subject_after": evaluate_clips(adapted, windows, cfg.band, cfg.spectral).as_dict(),
    }
    if cfg.paths.eval_dataset or cfg.paths.dataset:
        key = "eval_dataset" if cfg.paths.eval_dataset else "dataset"
        _, original_clips = _dataset_clips(cfg, key)
        grid = forgetting_report(
            pretrained, adapted, original_clips, windows, cfg.band, cfg.spectral,
            train_cfg.clip_len,
        )
        report["forgetting"] = grid.as_dict()
    _write_json(os.path.join(args.out, "metrics.json"), report)
    print(
        f"personalized over {len(windows)} windows; subject MAE "
        f"{report['subject_before']['mae']:.2f} -> {report['subject_after']['mae']:.2f} bpm"
    )
    return 0


def cmd_tta(args) -> int:
    cfg = _load_run_config(args)
    tta_cfg = _require_section(cfg.tta, "tta")
    pretrained = load_checkpoint(_require_path(cfg.paths.checkpoint, "checkpoint"))
    stream = load_clip(_require_path(cfg.paths.stream_clip, "stream_clip"))
    rates, adapted, history = tta_run(pretrained, stream, tta_cfg, cfg.band, cfg.spectral)
    os.makedirs(args.out, exist_ok=True)
    write_rates_csv(os.path.join(args.out, "rates.csv"), rates)
    save_checkpoint(os.path.join(args.out, "adapted_checkpoint.bin"), adapted)
    write_history(os.path.join(args.out, "history.jsonl"), history)
    summary = f"{len(rates.rates)} clips, {len(history.steps)} updates"
    if stream.gt_rate is not None:
        gt = stream_gt_rates(stream, tta_cfg.clip_len, tta_cfg.stride)
        write_rates_csv(os.path.join(args.out, "gt_rates.csv"), gt)
        metrics = rate_metrics(rates, gt)
        _write_json(os.path.join(args.out, "metrics.json"), metrics.as_dict())
        summary += f", MAE {metrics.mae:.2f} bpm"
    print(f"tta: {summary} -> {args.out}")
    return 0


def cmd_poison_sweep(args) -> int:
    cfg = _load_run_config(args)
    model_cfg = _require_section(cfg.model, "model")
    train_cfg = _require_section(cfg.train, "train")
    sweep = _require_section(cfg.sweep, "sweep")
    manifest, _ = _dataset_clips(cfg)
    cross_clips = None
    if cfg.paths.cross_dataset:
        cross_clips = load_dataset(load_manifest(_require_path(cfg.paths.cross_dataset, "cross_dataset")))
    elif cfg.cross_gen is not None:
        long_spec = dataclasses.replace(
            cfg.cross_gen, T=int(round(cfg.source_len_factor * cfg.cross_gen.T))
        )
        cross_clips = [
            gen_positive(long_spec, np.random.default_rng(derive_seed(cfg.cross_gen.seed, f"clip-{i}")))
            for i in range(cfg.cross_n_clips)
        ]
    rows = poison_sweep(
        sweep.alphas, sweep.folds, sweep.seeds_per_fold, model_cfg, train_cfg,
        manifest, cross_clips=cross_clips, jobs=args.jobs,
    )
    os.makedirs(args.out, exist_ok=True)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["alpha", "eval_set", "mae_mean", "mae_std"])
    for row in rows:
        writer.writerow([repr(row.alpha), row.eval_set, repr(row.mae_mean), repr(row.mae_std)])
    out_csv = os.path.join(args.out, "poison_sweep.csv")
    atomic_write_text(out_csv, buf.getvalue())
    print(f"poison sweep: {len(rows)} rows -> {out_csv}")
    return 0


def cmd_eval(args) -> int:
    pred = read_rates_csv(args.pred)
    gt = read_rates_csv(args.gt)
    metrics = rate_metrics(pred, gt)
    if args.config:
        cfg = _load_run_config(args)
        lo, hi = 60.0 * cfg.band.a, 60.0 * cfg.band.b
        out_of_band = np.sum((pred.rates < lo) | (pred.rates > hi))
        if out_of_band:
            print(f"warning: {out_of_band} predicted rates outside [{lo}, {hi}] bpm", file=sys.stderr)
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        _write_json(os.path.join(args.out, "metrics.json"), metrics.as_dict())
    r_txt = "undefined" if metrics.pearson_r is None else f"{metrics.pearson_r:.4f}"
    print(f"mae {metrics.mae:.4f} bpm  rmse {metrics.rmse:.4f} bpm  r {r_txt}  n {metrics.n}")
    return 0


def _add_common(parser: argparse.ArgumentParser, config_required: bool = True) -> None:
    parser.add_argument("--config", required=config_required, help="path to a JSON run config")
    parser.add_argument("--seed", type=int, default=None, help="override the config's global seed")
    parser.add_argument("--jobs", type=int, default=1, help="max parallel workers")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bandlearn",
        description="Unsupervised bandlimited-signal experiments: generate data, "
        "train, personalize, adapt at test time, sweep poisoning, evaluate.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic dataset")
    _add_common(p)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("train", help="unsupervised training on a dataset")
    _add_common(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("personalize", help="finetune a checkpoint on one subject clip")
    _add_common(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_personalize)

    p = sub.add_parser("tta", help="test-time adaptation over a long clip")
    _add_common(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_tta)

    p = sub.add_parser("poison-sweep", help="MAE vs poisoning-rate sweep")
    _add_common(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_poison_sweep)

    p = sub.add_parser("eval", help="metrics between predicted and ground-truth rate CSVs")
    p.add_argument("pred", help="predicted rates CSV (time_s,rate_bpm)")
    p.add_argument("gt", help="ground-truth rates CSV")
    _add_common(p, config_required=False)
    p.add_argument("--out", default=None, help="optional directory for metrics.json")
    p.set_defaults(func=cmd_eval)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, InvalidInputError, InvalidBandError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # runtime failure: single-line diagnostic, exit 2
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
