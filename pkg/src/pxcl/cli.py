"""Command-line experiment runner.

    pxcl run     --config exp.yaml [--out DIR] [--seed N] [--jobs N] [--quiet]
    pxcl sweep   --config exp.yaml [--out DIR] ...
    pxcl synth   --config exp.yaml --out data.pxclds
    pxcl convert (--images DIR | --tensor FILE.npy) --manifest M.csv --out data.pxclds

Exit codes: 0 success, 1 runtime failure, 2 configuration/validation failure.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import platform
import sys
from concurrent.futures import ProcessPoolExecutor
from datetime import datetime, timezone
from pathlib import Path
from typing import List, Sequence, Tuple

import numpy as np

from . import __version__, plotting, report
from .config import ConfigError, ExperimentConfig, load_config
from .domains import (IMAGE_SHAPE, SPLIT_TAGS, CanonicalFormatError, DatasetSplit, generate_synthetic,
                      load_canonical, write_canonical)
from .numeric import OptimizerConfig
from .trainer import DomainStreams, RunSummary, TrainConfig, prepare_streams, run_single

log = logging.getLogger("pxcl")

EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG = 0, 1, 2


class UsageError(Exception):
    """Bad inputs that map to exit code 2."""


# ---------------------------------------------------------------------------
# execution helpers
# ---------------------------------------------------------------------------


def load_dataset(cfg: ExperimentConfig):
    if cfg.dataset_path is not None:
        try:
            return load_canonical(cfg.dataset_path)
        except FileNotFoundError:
            raise UsageError(f"dataset file not found: {cfg.dataset_path}") from None
        except CanonicalFormatError as exc:
            raise UsageError(f"{cfg.dataset_path}: {exc}") from None
    if cfg.synthetic is not None:
        return generate_synthetic(cfg.synthetic)
    raise UsageError("config needs 'dataset.path' or 'dataset.synthetic'")


def _run_task(args):
    train_cfg, streams, run_index = args
    return run_single(train_cfg, streams, run_index)


def execute(train_cfgs: Sequence[TrainConfig], streams: DomainStreams, jobs: int) -> List[RunSummary]:
    """Run every (config, run index) pair; results come back in input order."""
    tasks = [(c, streams, r) for c in train_cfgs for r in range(c.num_runs)]
    log.info("%d training runs scheduled on %d worker(s)", len(tasks), jobs)
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=min(jobs, len(tasks))) as pool:
            results = list(pool.map(_run_task, tasks))
    else:
        results = []
        for task in tasks:
            results.append(_run_task(task))
            log.info("%s run %d: avg acc %.2f, forgetting %.2f", task[0].strategy, task[2],
                     results[-1].avg_accuracy, results[-1].avg_forgetting)
    summaries, pos = [], 0
    for c in train_cfgs:
        summaries.append(RunSummary.from_runs(c.strategy, results[pos : pos + c.num_runs]))
        pos += c.num_runs
    return summaries


def write_provenance(cfg: ExperimentConfig, out_dir: Path, command: str) -> None:
    seeds = [cfg.train.seed + r for r in range(cfg.train.num_runs)]
    block = {
        "command": command,
        "config": cfg.echo(),
        "run_seeds": seeds,
        "domain_seeds": {d.name: d.seed for d in cfg.domains},
        "timestamp": datetime.now(timezone.utc).isoformat(timespec="seconds"),
        "versions": {"pxcl": __version__, "numpy": np.__version__, "python": platform.python_version()},
    }
    (out_dir / "provenance.json").write_text(json.dumps(block, indent=2) + "\n")


def _prepare(cfg: ExperimentConfig) -> DomainStreams:
    dataset = load_dataset(cfg)
    log.info("building domain streams (%s split)", cfg.split_mode)
    try:
        return prepare_streams(dataset, cfg.domains, cfg.split_mode)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_run(cfg: ExperimentConfig, out_dir: Path) -> int:
    streams = _prepare(cfg)
    out_dir.mkdir(parents=True, exist_ok=True)
    train_cfgs = [dataclasses.replace(cfg.train, strategy=s) for s in cfg.strategies]
    summaries = execute(train_cfgs, streams, cfg.jobs)
    for s in summaries:
        report.write_matrix_csv(s, out_dir / f"accuracy_matrix_{s.strategy}.csv")
    report.write_summary_csv(summaries, out_dir / "summary.csv")
    plotting.comparison_bar([s.strategy for s in summaries], [s.avg_accuracy for s in summaries],
                            [s.std_accuracy for s in summaries], out_dir / "comparison.svg")

    if cfg.optimizers:
        opt_cfgs = [
            dataclasses.replace(cfg.train, strategy="Proposed",
                                optimizer=dataclasses.replace(cfg.train.optimizer, kind=kind))
            for kind in cfg.optimizers
        ]
        opt_summaries = execute(opt_cfgs, streams, cfg.jobs)
        for kind, s in zip(cfg.optimizers, opt_summaries):
            s.strategy = kind
        report.write_summary_csv(opt_summaries, out_dir / "optimizers.csv", label_column="optimizer")

    write_provenance(cfg, out_dir, "run")
    for s in summaries:
        log.info("%-9s avg accuracy %.2f  avg forgetting %.2f", s.strategy, s.avg_accuracy, s.avg_forgetting)
    return EXIT_OK


def cmd_sweep(cfg: ExperimentConfig, out_dir: Path) -> int:
    if not cfg.sweep:
        raise UsageError("'sweep' must list at least one buffer capacity")
    streams = _prepare(cfg)
    out_dir.mkdir(parents=True, exist_ok=True)
    train_cfgs = [dataclasses.replace(cfg.train, strategy="Proposed", buffer_capacity=cap) for cap in cfg.sweep]
    summaries = execute(train_cfgs, streams, cfg.jobs)
    report.write_sweep_csv(cfg.sweep, summaries, out_dir / "sweep.csv")
    plotting.sweep_line(cfg.sweep, [s.avg_accuracy for s in summaries],
                        [s.std_accuracy for s in summaries], out_dir / "sweep.svg")
    write_provenance(cfg, out_dir, "sweep")
    return EXIT_OK


def cmd_synth(cfg: ExperimentConfig, out_path: Path) -> int:
    if cfg.synthetic is None:
        raise UsageError("config has no 'dataset.synthetic' section")
    splits = generate_synthetic(cfg.synthetic)
    write_canonical(splits, out_path)
    log.info("wrote %s (%s samples)", out_path, "/".join(str(len(s)) for s in splits))
    return EXIT_OK


def read_manifest(path) -> List[Tuple[str, str, int]]:
    """Rows of (id, split, label) from a CSV with those three columns."""
    try:
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None or not {"id", "split", "label"} <= set(reader.fieldnames):
                raise UsageError(f"{path}: manifest needs columns id, split, label")
            rows = []
            for lineno, row in enumerate(reader, start=2):
                split = row["split"].strip()
                if split not in SPLIT_TAGS:
                    raise UsageError(f"{path}:{lineno}: unknown split {split!r}")
                try:
                    label = int(row["label"])
                except ValueError:
                    raise UsageError(f"{path}:{lineno}: label {row['label']!r} is not an integer") from None
                if label not in (0, 1):
                    raise UsageError(f"{path}:{lineno}: label {label} outside {{0, 1}}")
                rows.append((row["id"].strip(), split, label))
    except FileNotFoundError:
        raise UsageError(f"manifest not found: {path}") from None
    if not rows:
        raise UsageError(f"{path}: manifest is empty")
    return rows


def _to_uint8(img, where: str) -> np.ndarray:
    img = np.asarray(img)
    if img.shape != IMAGE_SHAPE:
        raise UsageError(f"{where}: expected a 28x28 image, got shape {img.shape}")
    if img.dtype == np.uint8:
        return img
    img = img.astype(np.float64)
    if img.min() < 0 or img.max() > 1:
        raise UsageError(f"{where}: float pixels must lie in [0, 1]")
    return np.rint(img * 255).astype(np.uint8)


def cmd_convert(images_dir, tensor_file, manifest_path, out_path: Path) -> int:
    rows = read_manifest(manifest_path)
    if (images_dir is None) == (tensor_file is None):
        raise UsageError("give exactly one of --images or --tensor")
    if tensor_file is not None:
        try:
            tensor = np.load(tensor_file)
        except FileNotFoundError:
            raise UsageError(f"tensor file not found: {tensor_file}") from None
        if tensor.ndim != 3:
            raise UsageError(f"{tensor_file}: expected an (N, 28, 28) array, got shape {tensor.shape}")

        def fetch(key):
            try:
                idx = int(key)
            except ValueError:
                raise UsageError(f"manifest id {key!r} is not an integer index") from None
            if not 0 <= idx < len(tensor):
                raise UsageError(f"manifest id {idx} outside the tensor's {len(tensor)} entries")
            return _to_uint8(tensor[idx], f"{tensor_file}[{idx}]")
    else:
        from PIL import Image

        root = Path(images_dir)

        def fetch(key):
            path = root / key
            if not path.is_file():
                raise UsageError(f"manifest entry {key!r} has no file in {root}")
            with Image.open(path) as im:
                return _to_uint8(np.asarray(im.convert("L")), str(path))

    buckets = {tag: ([], []) for tag in SPLIT_TAGS}
    for key, split, label in rows:
        buckets[split][0].append(fetch(key))
        buckets[split][1].append(label)
    for tag, (imgs, _) in buckets.items():
        if not imgs:
            raise UsageError(f"manifest has no {tag} samples")
    splits = [DatasetSplit(np.stack(imgs), np.array(labels), tag) for tag, (imgs, labels) in buckets.items()]
    write_canonical(splits, out_path)
    log.info("wrote %s (%s samples)", out_path, "/".join(str(len(s)) for s in splits))
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="experiment YAML file")
    common.add_argument("--out", type=Path, help="output directory (run/sweep) or file (synth/convert)")
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("--jobs", type=int, help="parallel training runs")
    common.add_argument("--quiet", action="store_true", help="only report errors")

    parser = argparse.ArgumentParser(prog="pxcl", description=__doc__.splitlines()[0] if __doc__ else None)
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("run", parents=[common], help="compare strategies on the domain sequence")
    sub.add_parser("sweep", parents=[common], help="Proposed strategy over several buffer sizes")
    sub.add_parser("synth", parents=[common], help="write a synthetic dataset file")
    conv = sub.add_parser("convert", parents=[common], help="convert raw images to a dataset file")
    conv.add_argument("--images", type=Path, help="directory of 28x28 grayscale images")
    conv.add_argument("--tensor", type=Path, help=".npy array of shape (N, 28, 28)")
    conv.add_argument("--manifest", type=Path, required=True, help="CSV with columns id, split, label")
    return parser


def _apply_overrides(cfg: ExperimentConfig, args) -> ExperimentConfig:
    if args.seed is not None:
        cfg.train = dataclasses.replace(cfg.train, seed=args.seed)
        if cfg.synthetic is not None:
            cfg.synthetic = dataclasses.replace(cfg.synthetic, seed=args.seed)
    if args.jobs is not None:
        if args.jobs < 1:
            raise UsageError("--jobs must be positive")
        cfg.jobs = args.jobs
    if args.out is not None:
        cfg.output_dir = args.out
    return cfg


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.ERROR if args.quiet else logging.INFO,
                        format="%(asctime)s %(levelname)s %(message)s", stream=sys.stderr)
    try:
        if args.command == "convert":
            if args.out is None:
                raise UsageError("convert needs --out")
            return cmd_convert(args.images, args.tensor, args.manifest, args.out)
        if args.config is None:
            raise UsageError(f"{args.command} needs --config")
        cfg = _apply_overrides(load_config(args.config), args)
        if args.command == "synth":
            if args.out is None:
                raise UsageError("synth needs --out")
            return cmd_synth(cfg, args.out)
        if args.command == "run":
            return cmd_run(cfg, cfg.output_dir)
        return cmd_sweep(cfg, cfg.output_dir)
    except (ConfigError, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001
        log.debug("runtime failure", exc_info=True)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
