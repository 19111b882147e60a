"""Command-line surface: generate, train, eval, em-demo, compare.

Commands return an exit code; anything that raises a validation or file
error exits nonzero with a one-line message on stderr.
"""

from __future__ import annotations

import argparse
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import mog
from .config import (ExperimentConfig, config_values, from_values, load_config,
                     load_run_record, resolve_out_dir, RunRecord, save_config,
                     save_run_record, split_seeds)
from .features import image_features
from .metrics import compute_metrics, tolerant_counts, write_report
from .model import forward, load_checkpoint, save_checkpoint
from .synthdata import NoiseSpec, load_split, make_dataset, write_manifest, write_split
from .train import THRESHOLD, train, write_log


def _features_many(images, threads: int):
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(image_features, images))
    return [image_features(im) for im in images]


def _build_splits(cfg: ExperimentConfig):
    train_seed, test_seed = split_seeds(cfg.data_seed)
    train_samples = make_dataset(cfg.n_train, cfg.crack, cfg.scene, cfg.noise, train_seed)
    test_samples = []
    if cfg.n_test:
        # test labels stay clean: zero-noise spec, disjoint seed stream
        test_samples = make_dataset(cfg.n_test, cfg.crack, cfg.scene, NoiseSpec(), test_seed)
    return train_samples, test_samples


def cmd_generate(args) -> int:
    cfg = load_config(args.config)
    out_root = resolve_out_dir(args.out or cfg.out_dir)
    data_dir = out_root / "data"
    data_dir.mkdir(parents=True, exist_ok=True)
    train_samples, test_samples = _build_splits(cfg)
    noisy = cfg.noise.under_rate > 0 or cfg.noise.over_rate > 0 or cfg.noise.jitter_px > 0
    records = write_split(train_samples, data_dir, "train", label_noise=noisy)
    if test_samples:
        records += write_split(test_samples, data_dir, "test", label_noise=False)
    write_manifest(records, data_dir)
    save_config(out_root / "config.txt", cfg)
    print(f"wrote {len(records)} samples under {data_dir}")
    return 0


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    out_root = resolve_out_dir(args.out or cfg.out_dir)
    data_dir = out_root / "data"
    if not (data_dir / "manifest.jsonl").exists():
        print(f"error: no dataset at {data_dir}, run generate first", file=sys.stderr)
        return 2
    train_samples = load_split(data_dir, "train")
    test_samples = load_split(data_dir, "test")
    if not train_samples:
        print(f"error: manifest at {data_dir} lists no train samples", file=sys.stderr)
        return 2

    started = time.perf_counter()
    params, records = train(train_samples, cfg.train, eval_samples=test_samples or None,
                            radius=cfg.radius, soft_guidance=cfg.soft_guidance)
    wall = time.perf_counter() - started

    save_checkpoint(out_root / "checkpoint.bin", params)
    write_log(out_root / "train_log.csv", records)
    final = {"f1": None, "iou": None, "dice": None, "radius": cfg.radius}
    if test_samples:
        feats = _features_many([s.image for s in test_samples], args.threads)
        counts = [tolerant_counts(forward(f, params) >= THRESHOLD, s.clean_mask, cfg.radius)
                  for f, s in zip(feats, test_samples)]
        report = compute_metrics(counts)
        write_report(out_root / "report.jsonl", report, counts,
                     [s.id for s in test_samples])
        final = {"f1": report.f1, "iou": report.iou, "dice": report.dice,
                 "radius": cfg.radius}
    record = RunRecord(
        config=config_values(cfg), epochs=[asdict(r) for r in records], final=final,
        wall_clock=wall,
        artifacts={"checkpoint": "checkpoint.bin", "log": "train_log.csv",
                   "data": "data", "report": "report.jsonl" if test_samples else ""})
    save_run_record(out_root / "run_record.json", record)
    if final["f1"] is not None:
        print(f"{cfg.label}: f1={final['f1']:.4f} iou={final['iou']:.4f} "
              f"dice={final['dice']:.4f} ({wall:.1f}s)")
    else:
        print(f"{cfg.label}: trained {cfg.train.epochs} epochs ({wall:.1f}s)")
    return 0


def cmd_eval(args) -> int:
    params = load_checkpoint(args.checkpoint)
    data_dir = Path(args.data)
    samples = load_split(data_dir, args.split)
    if not samples:
        print(f"error: no {args.split} samples under {data_dir}", file=sys.stderr)
        return 2
    feats = _features_many([s.image for s in samples], args.threads)
    counts = [tolerant_counts(forward(f, params) >= THRESHOLD, s.clean_mask, args.radius)
              for f, s in zip(feats, samples)]
    report = compute_metrics(counts)
    for s, (f1, iou, dice) in zip(samples, report.per_image):
        print(f"{s.id}: f1={f1:.4f} iou={iou:.4f} dice={dice:.4f}")
    print(f"aggregate (r={args.radius}): f1={report.f1:.4f} iou={report.iou:.4f} "
          f"dice={report.dice:.4f}")
    if args.out:
        write_report(args.out, report, counts, [s.id for s in samples])
    return 0


def cmd_em_demo(args) -> int:
    """EM on a planted 1-D two-Gaussian sample, one table row per iteration."""
    planted_means = (0.0, 3.0)
    planted_weights = (0.35, 0.65)
    rng = np.random.default_rng(args.seed)
    n = 1000
    n0 = rng.binomial(n, planted_weights[0])
    points = np.concatenate([
        rng.normal(planted_means[0], 0.5, size=n0),
        rng.normal(planted_means[1], 0.5, size=n - n0)])[:, None]

    comps = [mog.GaussianComponent(np.array([1.0]), np.array([1.0]), 0.5, "demo"),
             mog.GaussianComponent(np.array([2.0]), np.array([1.0]), 0.5, "demo")]
    max_iter, tol = 50, 1e-6
    print(f"{'iter':>4} {'log_lik':>14} {'mean_0':>8} {'mean_1':>8} {'w_0':>6} {'w_1':>6}")
    rows = []
    prev_ll = None
    converged_at = None
    for it in range(max_iter):
        fit = mog.em_fit(points, comps, max_iter=1, tol=0.0)
        comps = fit.components
        ll = fit.log_likelihood[-1]
        means = [float(c.mean[0]) for c in comps]
        weights = [float(c.weight) for c in comps]
        rows.append((it, ll, *means, *weights))
        print(f"{it:>4} {ll:>14.6f} {means[0]:>8.4f} {means[1]:>8.4f} "
              f"{weights[0]:>6.3f} {weights[1]:>6.3f}")
        if prev_ll is not None:
            if ll < prev_ll - 1e-9:
                print(f"error: log-likelihood decreased at iteration {it}", file=sys.stderr)
                return 1
            if abs(ll - prev_ll) <= tol * (abs(prev_ll) + 1e-12):
                converged_at = it
                break
        prev_ll = ll

    out_path = resolve_out_dir(args.out)
    with open(out_path, "w") as fh:
        fh.write("iter,log_lik,mean_0,mean_1,w_0,w_1\n")
        for row in rows:
            fh.write(",".join(repr(v) for v in row) + "\n")
    print(f"table written to {out_path}")

    final = sorted(comps, key=lambda c: float(c.mean[0]))
    for got, want in zip(final, sorted(planted_means)):
        if abs(float(got.mean[0]) - want) > 0.05:
            print(f"error: recovered mean {float(got.mean[0]):.4f} is more than "
                  f"0.05 from planted {want}", file=sys.stderr)
            return 1
    if converged_at is None:
        print("error: EM did not converge before max_iter", file=sys.stderr)
        return 1
    print(f"converged at iteration {converged_at}; means within 0.05 of planted {planted_means}")
    return 0


_TEST_SET_KEYS = ("data.n_test", "data.seed", "eval.radius")


def cmd_compare(args) -> int:
    base = load_run_record(args.baseline)
    guided = load_run_record(args.guided)
    keys = [k for k in base.config
            if k.startswith(("crack.", "scene.")) or k in _TEST_SET_KEYS]
    mismatched = [k for k in keys if base.config.get(k) != guided.config.get(k)]
    if mismatched:
        print(f"error: run records were evaluated on different test sets "
              f"(differ on {', '.join(sorted(mismatched))})", file=sys.stderr)
        return 2
    if base.final["f1"] is None or guided.final["f1"] is None:
        print("error: both runs need final test metrics to compare", file=sys.stderr)
        return 2
    b_label = base.config.get("run.label", "baseline")
    g_label = guided.config.get("run.label", "guided")
    print(f"{'metric':<8} {b_label:>12} {g_label:>12} {'delta':>8}")
    for metric in ("f1", "iou", "dice"):
        b = 100.0 * base.final[metric]
        g = 100.0 * guided.final[metric]
        print(f"{metric:<8} {b:>12.2f} {g:>12.2f} {g - b:>+8.2f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="crackseg",
        description="synthetic crack segmentation with mixture-guided training")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a synthetic dataset")
    p.add_argument("--config", required=True, help="config file (key = value lines)")
    p.add_argument("--out", default=None, help="output root (default: run.out from config)")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="train on a generated dataset")
    p.add_argument("--config", required=True)
    p.add_argument("--out", default=None)
    p.add_argument("--threads", type=int, default=1, help="worker cap for feature extraction")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint against clean masks")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True, help="dataset directory (holds manifest.jsonl)")
    p.add_argument("--split", default="test")
    p.add_argument("--radius", type=int, default=3)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--out", default=None, help="optional metrics report path")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("em-demo", help="run EM on a planted 1-D mixture and print the trace")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="em_demo.csv")
    p.set_defaults(func=cmd_em_demo)

    p = sub.add_parser("compare", help="side-by-side metrics for two run records")
    p.add_argument("baseline", help="baseline run_record.json")
    p.add_argument("guided", help="guided run_record.json")
    p.set_defaults(func=cmd_compare)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, FileNotFoundError, NotADirectoryError, PermissionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
