"""
CLI 子命令的實作 (皆為 async，由 eland.cli.main 以 asyncio.run 執行)。
"""

import argparse
import json
import logging
import time
from pathlib import Path
from typing import List, Tuple

from eland import __version__
from eland.config import ELAND_CACHE_DIR, ELAND_MAX_WORKERS, ELAND_OUTPUT_DIR, load_run_config
from eland.errors import DataValidationError, ParameterError
from eland.models.config_models import RunConfig
from eland.models.graph_models import Dataset
from eland.models.result_models import RunManifest, SweepResult
from eland.services import datagen, evaluation
from eland.services.metrics import auc, average_precision
from eland.storage import dataset_store, param_io, run_store
from eland.utils.helpers import dumps_stable

logger = logging.getLogger(__name__)

METRICS_FILE = "metrics.csv"
MANIFEST_FILE = "manifest.json"
SCORES_FILE = "scores.csv"
AUGMENTATION_FILE = "augmentation.jsonl"
SUMMARY_FILE = "summary.csv"


def output_dir(args: argparse.Namespace, default_name: str) -> Path:
    return Path(args.out) if args.out else Path(ELAND_OUTPUT_DIR) / default_name


def single_fraction(args: argparse.Namespace) -> float:
    fractions = args.fractions or [1.0]
    if len(fractions) != 1:
        raise ParameterError(f"{args.command} takes exactly one fraction, got {fractions}")
    return fractions[0]


def method_seed(args: argparse.Namespace, config: RunConfig, method: str) -> int:
    if args.seed is not None:
        return args.seed
    if method == "eland-itr":
        return config.itr.seed
    if method == "eland-e2e":
        return config.e2e.seed
    return 0


async def load_dataset(args: argparse.Namespace, config: RunConfig) -> Dataset:
    """--data 指定時讀取資料集目錄，否則依 config.generator 即時產生"""
    if args.data:
        return await dataset_store.read_dataset(args.data)
    logger.info("no --data given, generating the dataset from the generator config")
    return datagen.generate(config.generator)


def manifest_for(args: argparse.Namespace, config: RunConfig, seeds: List[int], started: float, **extra) -> RunManifest:
    return RunManifest(
        command=args.command,
        config=config.model_dump(mode="json"),
        seeds=seeds,
        wall_time=time.perf_counter() - started,
        version=__version__,
        **extra,
    )


# ==================== generate ====================

async def generate_command(args: argparse.Namespace) -> None:
    config = load_run_config(args.config)
    generator = config.generator
    if args.seed is not None:
        generator = generator.model_copy(update={"seed": args.seed})
    dataset = datagen.generate(generator)
    manifest = {"generator": generator.model_dump(mode="json"), "version": __version__}
    if args.calibrate:
        manifest["calibration_auc"] = datagen.calibration_auc(dataset, seed=generator.seed)
    await dataset_store.write_dataset(dataset, output_dir(args, "dataset"), manifest)


# ==================== train ====================

async def train_command(args: argparse.Namespace) -> None:
    started = time.perf_counter()
    config = load_run_config(args.config)
    dataset = await load_dataset(args, config)
    fraction = single_fraction(args)
    seed = method_seed(args, config, args.method)
    out = output_dir(args, "train")

    outcome = evaluation.run_cell(dataset, fraction, args.method, seed, config)
    await run_store.write_metrics_csv(out / METRICS_FILE, [outcome.row])
    await run_store.write_scores(out / SCORES_FILE, outcome.run.scores)
    for name, params in sorted(outcome.run.params.items()):
        await param_io.save_params(params, out / f"params_{name}.bin")
    if outcome.run.plan is not None:
        await run_store.write_augmentation_dump(out / AUGMENTATION_FILE, outcome.run.plan)
    manifest = manifest_for(
        args,
        config,
        [seed],
        started,
        metrics={"fraction": fraction, "method": args.method, "auc": outcome.row.auc, "ap": outcome.row.ap},
        traces={args.method: outcome.run.trace},
    )
    await run_store.write_manifest(out / MANIFEST_FILE, manifest)
    logger.info(f"train {args.method} p={fraction} seed={seed}: auc={outcome.row.auc:.4f} ap={outcome.row.ap:.4f}")


# ==================== sweep ====================

def parse_grid(text: str) -> Tuple[str, List[int]]:
    """ "kappa=30,90,150" → ("kappa", [30, 90, 150]) """
    if "=" not in text:
        raise ParameterError(f"--grid expects name=v1,v2,..., got {text!r}")
    name, values = text.split("=", 1)
    try:
        parsed = [int(v) for v in values.split(",") if v.strip()]
    except ValueError:
        raise ParameterError(f"--grid values must be integers, got {values!r}")
    if not parsed:
        raise ParameterError("--grid needs at least one value")
    return name.strip(), parsed


async def write_sweep_outputs(out: Path, result: SweepResult) -> None:
    summary = evaluation.summarize(result)
    await run_store.write_metrics_csv(out / METRICS_FILE, result.rows)
    await run_store.write_summary(out / SUMMARY_FILE, summary)
    await run_store.write_curves(out / "curves", evaluation.curves(summary))


async def sweep_command(args: argparse.Namespace) -> None:
    started = time.perf_counter()
    config = load_run_config(args.config)
    dataset = await load_dataset(args, config)
    seeds = args.seeds if args.seeds is not None else list(config.sweep.seeds)
    workers = args.workers or max(config.sweep.max_workers, ELAND_MAX_WORKERS)
    cache_dir = args.cache_dir or ELAND_CACHE_DIR
    out = output_dir(args, "sweep")

    if args.grid:
        parameter, values = parse_grid(args.grid)
        fraction = single_fraction(args)
        result = await evaluation.sensitivity_sweep_async(
            dataset, fraction, parameter, values, seeds, config, workers, cache_dir
        )
        metrics = {"grid": {parameter: values}, "fraction": fraction}
    else:
        fractions = args.fractions or list(config.sweep.fractions)
        methods = args.method or list(config.sweep.methods)
        result = await evaluation.early_sweep_async(dataset, fractions, methods, seeds, config, workers, cache_dir)
        metrics = {
            "cells": len(result.rows),
            "predicate_pass_rate": result.pass_rate,
            "predicate_pass_rate_by_method": {
                method: result.pass_rate_for(method) for method in ("eland-itr", "eland-e2e") if method in methods
            },
            "predicates": [p.model_dump() for p in result.predicates],
        }

    await write_sweep_outputs(out, result)
    wall_times = {row.cell_key: row.wall_time for row in result.rows}
    manifest = manifest_for(args, config, seeds, started, metrics=metrics, traces={"cell_wall_time": wall_times})
    await run_store.write_manifest(out / MANIFEST_FILE, manifest)


# ==================== augment-dump ====================

async def augment_dump_command(args: argparse.Namespace) -> None:
    if args.method not in ("eland-itr", "eland-e2e"):
        raise ParameterError(f"augment-dump needs an ELAND method, got {args.method!r}")
    config = load_run_config(args.config)
    dataset = await load_dataset(args, config)
    fraction = single_fraction(args)
    seed = method_seed(args, config, args.method)
    actions = evaluation.truncate(dataset.actions, fraction, config.sweep.truncation)
    run = evaluation.run_method(dataset, actions, args.method, seed, config)
    path = output_dir(args, "augment") / AUGMENTATION_FILE
    if run.plan is None:
        logger.warning(f"{args.method} produced no predictions (all budgets zero), writing an empty dump")
        await run_store.write_text(path, "")
        return
    await run_store.write_augmentation_dump(path, run.plan)
    logger.info(f"{run.plan.total_predictions()} predicted actions for {len(run.plan.budgets)} users -> {path}")


# ==================== metrics ====================

async def metrics_command(args: argparse.Namespace) -> None:
    config = load_run_config(args.config)
    dataset = await load_dataset(args, config)
    scores = await run_store.read_scores(args.scores)
    if scores.shape[0] != dataset.m:
        raise DataValidationError(f"score file has {scores.shape[0]} users, dataset has {dataset.m}")
    users = slice(None) if args.split == "all" else getattr(dataset.split, args.split)
    values = {
        "split": args.split,
        "auc": auc(scores[users], dataset.labels[users]),
        "ap": average_precision(scores[users], dataset.labels[users]),
    }
    print(json.dumps(values, sort_keys=True))
    if args.out:
        await run_store.write_text(Path(args.out) / "metrics.json", dumps_stable(values) + "\n")
