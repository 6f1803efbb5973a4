"""Command-line front end: per-image segmentation runs, ablation tables,
and the gradient-check battery."""

from __future__ import annotations

import concurrent.futures
import csv
import json
import sys
import time
import zlib
from dataclasses import asdict
from pathlib import Path

import click
import numpy as np

from . import __version__
from .io import DatasetLayout, load_image, load_mask, save_labels_png
from .kmeans import KMeansConfig, kmeans_segment
from .losses import LossWeights
from .metrics import EvalReport, evaluate
from .train import ABLATION_WEIGHTS, TrainConfig, ablation_run, train_single_image

PROFILES = {"derm": 0.1, "us": 0.05}
DEFAULT_RESIZE = (128, 128)
ABLATION_ROW_NAMES = ("ce", "ce+ss", "ce+ss+cc")


def per_image_seed(global_seed: int, filename: str) -> int:
    """Reproducible yet distinct per-image seed."""
    return (global_seed ^ zlib.crc32(filename.encode("utf-8"))) & 0x7FFFFFFF


def _parse_resize(resize: str | None, no_resize: bool) -> tuple[int, int] | None:
    if no_resize:
        return None
    if resize is None:
        return DEFAULT_RESIZE
    try:
        w, h = resize.lower().split("x")
        return int(w), int(h)
    except ValueError:
        raise click.BadParameter(f"expected WxH, got {resize!r}")


def _parse_weights(weights: str | None) -> LossWeights:
    if weights is None:
        return LossWeights()
    try:
        ce, ss, cc = (float(v) for v in weights.split(","))
    except ValueError:
        raise click.BadParameter(f"expected CE,SS,CC floats, got {weights!r}")
    return LossWeights(ce, ss, cc)


def _dataset_options(fn):
    fn = click.option("--images", "images_dir", required=True,
                      type=click.Path(exists=True, file_okay=False),
                      help="Directory of input images.")(fn)
    fn = click.option("--masks", "masks_dir", default=None,
                      type=click.Path(exists=True, file_okay=False),
                      help="Directory of ground-truth masks (same stems).")(fn)
    fn = click.option("--mask-suffix", default="", show_default=True,
                      help="Suffix appended to the image stem to find its mask.")(fn)
    fn = click.option("--out", "out_dir", default="out", show_default=True,
                      type=click.Path(file_okay=False),
                      help="Output directory.")(fn)
    fn = click.option("--resize", default=None,
                      help="Resize input to WxH (default 128x128).")(fn)
    fn = click.option("--no-resize", is_flag=True,
                      help="Run at full resolution.")(fn)
    fn = click.option("--seed", default=0, show_default=True, type=int)(fn)
    fn = click.option("--threads", default=1, show_default=True, type=int)(fn)
    return fn


def _train_options(fn):
    fn = click.option("--profile", type=click.Choice(sorted(PROFILES)),
                      default="derm", show_default=True,
                      help="Learning-rate profile (dermoscopy / ultrasound).")(fn)
    fn = click.option("--weights", default=None,
                      help="Loss weights as CE,SS,CC (default 1,1,1).")(fn)
    fn = click.option("--max-iters", default=500, show_default=True, type=int)(fn)
    fn = click.option("--min-labels", default=3, show_default=True, type=int)(fn)
    return fn


def _write_metrics_csv(path: Path, rows: list[tuple[str, EvalReport]]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["image", "cluster_id", "dsc", "hm", "xor"])
        for name, rep in rows:
            writer.writerow([name, rep.matched_cluster_id,
                             f"{rep.dsc:.6f}", f"{rep.hm:.6f}",
                             f"{rep.xor:.6f}"])


def _aggregate(rows: list[tuple[str, EvalReport]]) -> dict[str, dict[str, float]]:
    agg = {}
    for metric in ("dsc", "hm", "xor"):
        vals = np.array([getattr(rep, metric) for _, rep in rows])
        agg[metric] = {"mean": float(vals.mean()), "std": float(vals.std())}
    return agg


def _write_manifest(out_dir: Path, command: str, config: dict,
                    image_seeds: dict[str, int], outputs: list[str]) -> None:
    manifest = {
        "tool": "sgscn",
        "version": __version__,
        "command": command,
        "config": config,
        "image_seeds": image_seeds,
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
        "outputs": sorted(outputs),
    }
    with open(out_dir / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2)


@click.group()
@click.version_option(__version__)
def main():
    """Self-supervised per-image clustering segmentation."""


@main.command()
@_dataset_options
@_train_options
@click.option("--method", type=click.Choice(["sgscn", "kmeans"]),
              default="sgscn", show_default=True)
@click.option("--k", default=3, show_default=True, type=int,
              help="Cluster count for k-means.")
def segment(images_dir, masks_dir, mask_suffix, out_dir, resize, no_resize,
            seed, threads, profile, weights, max_iters, min_labels,
            method, k):
    """Segment every image in a directory; write label maps and metrics."""
    resize_wh = _parse_resize(resize, no_resize)
    loss_weights = _parse_weights(weights)
    layout = DatasetLayout(Path(images_dir), Path(masks_dir) if masks_dir else None,
                           mask_suffix, resize_wh)
    out = Path(out_dir)
    (out / "labels").mkdir(parents=True, exist_ok=True)
    (out / "trace").mkdir(parents=True, exist_ok=True)

    pairs = layout.pairs()
    image_seeds = {p.name: per_image_seed(seed, p.name) for p, _ in pairs}

    def process(pair):
        image_path, mask_path = pair
        image = load_image(image_path, resize=resize_wh)
        img_seed = image_seeds[image_path.name]
        trace = None
        if method == "kmeans":
            labels = kmeans_segment(image, KMeansConfig(k=k, seed=img_seed))
        else:
            cfg = TrainConfig(lr=PROFILES[profile], weights=loss_weights,
                              max_iters=max_iters, min_labels=min_labels,
                              seed=img_seed)
            labels, trace = train_single_image(image, cfg)
        save_labels_png(out / "labels" / f"{image_path.stem}.png", labels)
        if trace is not None:
            trace.write_csv(out / "trace" / f"{image_path.stem}.csv")
        report = None
        if mask_path is not None:
            gt = load_mask(mask_path, resize=resize_wh)
            report = evaluate(labels, gt)
        return image_path.name, report

    failures = 0
    rows: list[tuple[str, EvalReport]] = []
    with concurrent.futures.ThreadPoolExecutor(max_workers=max(1, threads)) as ex:
        futures = {ex.submit(process, pair): pair[0] for pair in pairs}
        for fut in concurrent.futures.as_completed(futures):
            try:
                name, report = fut.result()
            except Exception as exc:
                failures += 1
                click.echo(f"{futures[fut].name}: {exc}", err=True)
                continue
            if report is not None:
                rows.append((name, report))

    rows.sort(key=lambda r: r[0])
    outputs = [f"labels/{p.stem}.png" for p, _ in pairs]
    if rows:
        _write_metrics_csv(out / "metrics.csv", rows)
        outputs.append("metrics.csv")
        agg = _aggregate(rows)
        for metric, stats in agg.items():
            click.echo(f"{metric}: {stats['mean']:.4f} +/- {stats['std']:.4f}")
    config = {
        "method": method, "k": k, "profile": profile,
        "weights": asdict(loss_weights), "max_iters": max_iters,
        "min_labels": min_labels, "seed": seed,
        "resize": list(resize_wh) if resize_wh else None,
        "mask_suffix": mask_suffix, "threads": threads,
    }
    _write_manifest(out, "segment", config, image_seeds, outputs)
    sys.exit(1 if failures else 0)


@main.command()
@_dataset_options
@_train_options
def ablate(images_dir, masks_dir, mask_suffix, out_dir, resize, no_resize,
           seed, threads, profile, weights, max_iters, min_labels):
    """Compare CE, CE+SS, and CE+SS+CC loss settings against ground truth."""
    if masks_dir is None:
        click.echo("ablate requires --masks (ground truth)", err=True)
        sys.exit(2)
    resize_wh = _parse_resize(resize, no_resize)
    layout = DatasetLayout(Path(images_dir), Path(masks_dir), mask_suffix,
                           resize_wh)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    pairs = [(p, m) for p, m in layout.pairs() if m is not None]
    if not pairs:
        click.echo("no image/mask pairs found", err=True)
        sys.exit(2)
    image_seeds = {p.name: per_image_seed(seed, p.name) for p, _ in pairs}

    def process(pair):
        image_path, mask_path = pair
        image = load_image(image_path, resize=resize_wh)
        gt = load_mask(mask_path, resize=resize_wh)
        cfg = TrainConfig(lr=PROFILES[profile], max_iters=max_iters,
                          min_labels=min_labels,
                          seed=image_seeds[image_path.name])
        reports = [evaluate(labels, gt)
                   for labels, _ in ablation_run(image, cfg)]
        return image_path.name, reports

    per_setting: list[list[EvalReport]] = [[], [], []]
    with concurrent.futures.ThreadPoolExecutor(max_workers=max(1, threads)) as ex:
        for name, reports in ex.map(process, pairs):
            for i, rep in enumerate(reports):
                per_setting[i].append(rep)

    with open(out / "ablation.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["losses", "mean_dsc", "mean_hm", "mean_xor"])
        for name, reports in zip(ABLATION_ROW_NAMES, per_setting):
            means = [float(np.mean([getattr(r, m) for r in reports]))
                     for m in ("dsc", "hm", "xor")]
            writer.writerow([name] + [f"{v:.6f}" for v in means])
            click.echo(f"{name:10s} dsc={means[0]:.4f} hm={means[1]:.4f} "
                       f"xor={means[2]:.4f}")
    config = {"profile": profile, "max_iters": max_iters,
              "min_labels": min_labels, "seed": seed,
              "resize": list(resize_wh) if resize_wh else None,
              "ablation_weights": [asdict(w) for w in ABLATION_WEIGHTS]}
    _write_manifest(out, "ablate", config, image_seeds, ["ablation.csv"])
    sys.exit(0)


@main.command()
@click.option("--seeds", default=20, show_default=True, type=int)
@click.option("--step", "h", default=1e-4, show_default=True, type=float)
def gradcheck(seeds, h):
    """Run the finite-difference gradient-check battery."""
    from .gradcheck_battery import run_battery

    worst = run_battery(num_seeds=seeds, h=h, echo=click.echo)
    ok = all(err < tol for _, err, tol in worst)
    click.echo("gradcheck: " + ("PASS" if ok else "FAIL"))
    sys.exit(0 if ok else 1)


if __name__ == "__main__":
    main()
