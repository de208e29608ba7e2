"""End-to-end check of the toolkit on synthetic worlds.

One seed drives one full experiment: generate a world, train one model per
context cluster plus one context-free model on the pooled training data,
build every ensemble variant, then verify the orderings the toolkit is
supposed to produce.  Everything here is driven by exact ground-truth
labels, so a failed ordering points at the pipeline, not at noisy data.

Runs standalone:  python -m cosim.benchmark --seeds 5 --out results/
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .csmodel import TrainConfig, predict_batch, project_table, train_cs_model
from .dataio import split_cluster
from .ensemble import (
    STRATEGY_CREDIBILITY,
    STRATEGY_FILTERED,
    STRATEGY_MAJORITY,
    STRATEGY_REGRESSOR,
    EnsembleModel,
    build_default_maps,
    evaluate_ensemble,
    train_weight_regressors,
)
from .evalkit import SweepStrategy, combination_sweep, cross_validation, write_sweep_csv
from .seeding import derive_seed
from .synthbench import WorldConfig, generate_world

CHECK_NAMES = (
    "specialists_beat_transfer",
    "regressor_beats_majority_and_best_single",
    "global_below_regressor_ensemble",
    "sweep_full_beats_singletons",
)


@dataclass
class BenchmarkConfig:
    """Benchmark-owned knobs; deliberately smaller nets and fewer epochs
    than the library defaults so five seeds stay well under the budget."""

    world: WorldConfig = field(default_factory=lambda: WorldConfig(
        context_sharpness=4.0, anchor_spread=0.25))
    train: TrainConfig = field(default_factory=lambda: TrainConfig(
        epochs=25, batch_size=16, lr=3e-4, triplet_weight=1.0))
    proj_hidden: tuple = (128,)
    proj_dim: int = 64
    ranking_hidden: tuple = (128, 32)
    train_count: int = 667
    member_mode: str = "embedding"
    pca_dim: int = 64
    map_resolution: int = 12
    filter_threshold: float = 0.55
    regressor: TrainConfig = field(default_factory=lambda: TrainConfig(
        epochs=200, batch_size=32, lr=1e-2))


@dataclass
class SeedResult:
    seed: int
    crossval_model_names: list
    crossval_cluster_names: list
    crossval_cells: list
    member_test_accuracy: dict
    global_test_accuracy: float
    ensemble_test_accuracy: dict
    sweep_mean_by_r: dict
    checks: dict
    elapsed_seconds: float

    def to_json_dict(self) -> dict:
        # elapsed_seconds stays off the report so reruns are byte-identical
        return {
            "seed": self.seed,
            "crossval": {
                "models": self.crossval_model_names,
                "clusters": self.crossval_cluster_names,
                "cells": self.crossval_cells,
            },
            "member_test_accuracy": self.member_test_accuracy,
            "global_test_accuracy": self.global_test_accuracy,
            "ensemble_test_accuracy": self.ensemble_test_accuracy,
            "sweep_mean_by_r": {str(r): v for r, v in self.sweep_mean_by_r.items()},
            "checks": self.checks,
        }


def _specialists_beat_transfer(matrix) -> bool:
    """Every model must be better on its own cluster than off-cluster average."""
    cells = np.asarray(matrix.cells)
    for i, diag_col in enumerate(matrix.diag_cols):
        if diag_col is None:
            return False
        row = cells[i]
        off = np.delete(row, diag_col)
        if not row[diag_col] > float(np.mean(off)):
            return False
    return True


def run_seed(seed: int, cfg: Optional[BenchmarkConfig] = None):
    """One full experiment; returns (SeedResult, CrossValMatrix, sweep rows)."""
    cfg = cfg if cfg is not None else BenchmarkConfig()
    t0 = time.perf_counter()
    bundle, _ = generate_world(replace(cfg.world, seed=seed))
    emb = bundle.embeddings

    train_parts = []
    holdout_parts = []
    for cluster in bundle.clusters:
        tr, ho = split_cluster(cluster, cfg.train_count,
                               derive_seed(seed, f"split:{cluster.name}"))
        train_parts.append(tr)
        holdout_parts.append(ho)

    models = []
    for part in train_parts:
        tc = replace(cfg.train, seed=derive_seed(seed, f"train:{part.name}"))
        model, _ = train_cs_model(
            part.triples, emb, tc,
            name=f"cs_{part.name}",
            trained_on=[part.name],
            proj_hidden=cfg.proj_hidden,
            proj_dim=cfg.proj_dim,
            ranking_hidden=cfg.ranking_hidden,
        )
        models.append(model)

    matrix = cross_validation(models, holdout_parts, emb, mode=cfg.member_mode)
    check_a = _specialists_beat_transfer(matrix)

    pooled = [t for part in train_parts for t in part.triples]
    gc = replace(cfg.train, seed=derive_seed(seed, "train:global"))
    global_model, _ = train_cs_model(
        pooled, emb, gc,
        name="cs_global",
        trained_on=[part.name for part in train_parts],
        proj_hidden=cfg.proj_hidden,
        proj_dim=cfg.proj_dim,
        ranking_hidden=cfg.ranking_hidden,
    )

    cache = {m.name: project_table(m, emb) for m in models}
    regs = train_weight_regressors(
        models, bundle.cc_validation, emb,
        l=cfg.pca_dim,
        cfg=replace(cfg.regressor, seed=derive_seed(seed, "regressors")),
        mode=cfg.member_mode,
    )
    maps = {
        m.name: build_default_maps(
            m, bundle.cc_validation, emb, regs.pca,
            resolution=cfg.map_resolution,
            mode=cfg.member_mode,
            projected=cache[m.name],
        )
        for m in models
    }

    ensembles = {
        STRATEGY_MAJORITY: EnsembleModel(models, STRATEGY_MAJORITY, cfg.member_mode),
        STRATEGY_CREDIBILITY: EnsembleModel(
            models, STRATEGY_CREDIBILITY, cfg.member_mode, pca=regs.pca, maps=maps),
        STRATEGY_FILTERED: EnsembleModel(
            models, STRATEGY_FILTERED, cfg.member_mode, pca=regs.pca, maps=maps,
            filter_threshold=cfg.filter_threshold),
        STRATEGY_REGRESSOR: EnsembleModel(
            models, STRATEGY_REGRESSOR, cfg.member_mode, regressors=regs),
    }
    ensemble_acc = {
        name: evaluate_ensemble(ens, bundle.cc_test, emb, projected_cache=cache).accuracy
        for name, ens in ensembles.items()
    }

    y_test = np.array([t.y for t in bundle.cc_test])
    member_acc = {}
    for m in models:
        labels, _, _ = predict_batch(m, bundle.cc_test, emb, cfg.member_mode,
                                     projected=cache[m.name])
        member_acc[m.name] = float(np.mean(labels == y_test))
    g_labels, _, _ = predict_batch(global_model, bundle.cc_test, emb, cfg.member_mode)
    global_acc = float(np.mean(g_labels == y_test))

    reg_acc = ensemble_acc[STRATEGY_REGRESSOR]
    check_b = (reg_acc >= ensemble_acc[STRATEGY_MAJORITY]
               and reg_acc >= max(member_acc.values()))
    check_c = global_acc <= reg_acc

    majority = SweepStrategy(
        STRATEGY_MAJORITY,
        lambda members, _seed: EnsembleModel(list(members), STRATEGY_MAJORITY,
                                             cfg.member_mode),
    )

    def cached_eval(ens, triples, table):
        return evaluate_ensemble(ens, triples, table, projected_cache=cache)

    rows = combination_sweep(
        models, [majority], bundle.cc_test, emb,
        r_values=range(1, len(models) + 1),
        repeats=1, base_seed=seed, evaluate=cached_eval,
    )
    by_r: dict = {}
    for row in rows:
        by_r.setdefault(row.r, []).append(row.accuracy)
    sweep_mean = {r: float(np.mean(v)) for r, v in sorted(by_r.items())}
    r_max = max(sweep_mean)
    check_d = sweep_mean[r_max] >= sweep_mean[1]

    checks = dict(zip(CHECK_NAMES, (check_a, check_b, check_c, check_d)))
    return SeedResult(
        seed=seed,
        crossval_model_names=matrix.model_names,
        crossval_cluster_names=matrix.cluster_names,
        crossval_cells=np.asarray(matrix.cells).tolist(),
        member_test_accuracy=member_acc,
        global_test_accuracy=global_acc,
        ensemble_test_accuracy=ensemble_acc,
        sweep_mean_by_r=sweep_mean,
        checks=checks,
        elapsed_seconds=time.perf_counter() - t0,
    ), matrix, rows


def run_benchmark(seeds: Sequence[int], cfg: Optional[BenchmarkConfig] = None,
                  out_dir=None, verbose: bool = True) -> dict:
    """Run every seed, aggregate the checks, optionally write artifacts.

    The report contains no timestamps; rerunning with the same seeds and
    config writes byte-identical files.
    """
    cfg = cfg if cfg is not None else BenchmarkConfig()
    results = []
    for seed in seeds:
        result, matrix, rows = run_seed(seed, cfg)
        results.append(result)
        if verbose:
            flags = " ".join(
                f"{name}={'ok' if ok else 'FAIL'}" for name, ok in result.checks.items()
            )
            print(f"seed {seed}: {flags} ({result.elapsed_seconds:.1f}s)")
        if out_dir is not None:
            import os

            os.makedirs(out_dir, exist_ok=True)
            matrix.to_csv(os.path.join(out_dir, f"crossval_seed{seed}.csv"))
            write_sweep_csv(rows, os.path.join(out_dir, f"sweep_seed{seed}.csv"))

    if not results:
        return {"seeds": [], "checks_all_seeds": {}, "mean_ensemble_accuracy": {},
                "mean_global_accuracy": None, "passed": False}

    # orderings about mean accuracies hold over the seed means; the
    # specialist and global orderings must additionally hold per seed
    reg_mean = float(np.mean(
        [r.ensemble_test_accuracy[STRATEGY_REGRESSOR] for r in results]))
    maj_mean = float(np.mean(
        [r.ensemble_test_accuracy[STRATEGY_MAJORITY] for r in results]))
    member_means = {}
    for r in results:
        for name, acc in r.member_test_accuracy.items():
            member_means.setdefault(name, []).append(acc)
    best_single_mean = max(float(np.mean(v)) for v in member_means.values())
    global_mean = float(np.mean([r.global_test_accuracy for r in results]))
    r_lo = min(min(r.sweep_mean_by_r) for r in results)
    r_hi = max(max(r.sweep_mean_by_r) for r in results)
    sweep_lo = float(np.mean([r.sweep_mean_by_r[r_lo] for r in results]))
    sweep_hi = float(np.mean([r.sweep_mean_by_r[r_hi] for r in results]))
    all_checks = {
        CHECK_NAMES[0]: all(r.checks[CHECK_NAMES[0]] for r in results),
        CHECK_NAMES[1]: reg_mean >= maj_mean and reg_mean >= best_single_mean,
        CHECK_NAMES[2]: (all(r.checks[CHECK_NAMES[2]] for r in results)
                         and global_mean <= reg_mean),
        CHECK_NAMES[3]: sweep_hi >= sweep_lo,
    }
    report = {
        "seeds": [r.to_json_dict() for r in results],
        "checks_all_seeds": all_checks,
        "mean_ensemble_accuracy": {
            key: float(np.mean([r.ensemble_test_accuracy[key] for r in results]))
            for key in results[0].ensemble_test_accuracy
        },
        "mean_global_accuracy": global_mean,
        "passed": all(all_checks.values()),
    }
    if out_dir is not None:
        import os

        with open(os.path.join(out_dir, "benchmark.json"), "w", encoding="utf-8") as fh:
            json.dump(report, fh, sort_keys=True, indent=2)
            fh.write("\n")
    return report


def quick_config() -> BenchmarkConfig:
    """Scaled-down world for smoke runs; not used by the full benchmark."""
    return BenchmarkConfig(
        world=WorldConfig(
            n_images=600, latent_dim=8, embed_dim=48, n_contexts=4,
            triples_per_cluster=200, cc_val_size=1800, cc_test_size=900,
        ),
        train=TrainConfig(epochs=10, batch_size=16, lr=3e-4, triplet_weight=1.0),
        train_count=150,
        regressor=TrainConfig(epochs=100, batch_size=32, lr=1e-2),
    )


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = argparse.ArgumentParser(
        prog="cosim-benchmark",
        description="synthetic-world benchmark for the ensemble toolkit",
    )
    parser.add_argument("--seeds", type=int, default=5,
                        help="number of seeds to run (default 5)")
    parser.add_argument("--base-seed", type=int, default=0)
    parser.add_argument("--out", default=None, help="directory for artifacts")
    parser.add_argument("--quick", action="store_true",
                        help="small world for a fast smoke run")
    args = parser.parse_args(argv)

    cfg = quick_config() if args.quick else BenchmarkConfig()
    seeds = [args.base_seed + i for i in range(args.seeds)]
    t0 = time.perf_counter()
    report = run_benchmark(seeds, cfg, out_dir=args.out)
    elapsed = time.perf_counter() - t0
    for name, ok in report["checks_all_seeds"].items():
        print(f"{'PASS' if ok else 'FAIL'} {name}")
    print(f"total {elapsed:.1f}s over {len(seeds)} seeds")
    return 0 if report["passed"] else 1


if __name__ == "__main__":
    sys.exit(main())
