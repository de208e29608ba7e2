"""Command-line front end.

One subcommand per pipeline stage; stages compose through files, so any
stage can be rerun in isolation.  Every command takes ``--config`` (JSON,
schema-checked, unknown keys rejected), ``--seed`` (overrides the config),
``--out`` (run directory) and ``--threads``.  A ``run.json`` provenance
record lands in the run directory on success; reruns with the same config
and seed produce byte-identical outputs.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import platform
import sys
from dataclasses import replace
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .csmodel import (
    PROJ_DIM_DEFAULT,
    PROJ_HIDDEN_DEFAULT,
    RANKING_HIDDEN_DEFAULT,
    TrainConfig,
    load_checkpoint,
    save_checkpoint,
    train_cs_model,
)
from .dataio import (
    ContextCluster,
    detect_preference_cycles,
    load_embedding_table,
    load_triples,
    load_triples_or_annotations,
    resolve_labels,
    write_embedding_table,
    write_triples,
)
from .ensemble import (
    MAP_AXES_DEFAULT,
    MAP_RESOLUTION_DEFAULT,
    STRATEGIES,
    STRATEGY_CREDIBILITY,
    STRATEGY_FILTERED,
    STRATEGY_MAJORITY,
    STRATEGY_REGRESSOR,
    EnsembleModel,
    WeightRegressorSet,
    build_default_maps,
    evaluate_ensemble,
    export_map_csv,
    load_ensemble_manifest,
    save_credibility_map,
    save_ensemble_manifest,
    save_weight_regressors,
    train_weight_regressors,
)
from .errors import BadConfig, CosimError, EmptyInput, FormatError, MissingId, TrainCountOutOfRange
from .evalkit import (
    SweepStrategy,
    combination_sweep,
    cross_validation,
    evaluate_model,
    leave_one_out,
    write_leave_one_out_csv,
    write_sweep_csv,
)
from .numerics import PCA_DEFAULT_DIM, clamp_pca_dim, pca_fit, save_pca
from .seeding import derive_seed
from .synthbench import WorldConfig, generate_world, save_ground_truth

log = logging.getLogger("cosim.cli")

# maps to exit code 1; everything else unexpected maps to 2
VALIDATION_ERRORS = (BadConfig, FormatError, MissingId, EmptyInput,
                     TrainCountOutOfRange, FileNotFoundError)

_LOG_LEVELS = {
    "error": logging.ERROR,
    "warn": logging.WARNING,
    "info": logging.INFO,
    "debug": logging.DEBUG,
}

# ---------------------------------------------------------------------------
# config schema

_TRAIN_SCHEMA = {
    "epochs": int, "batch_size": int, "lr": float, "margin": float,
    "triplet_weight": float, "swap_augment": bool, "seed": int,
}
_SCHEMA = {
    "seed": int,
    "out": str,
    "data": {
        "embeddings": str,
        "clusters": {"*": str},
        "cc_validation": str,
        "cc_test": str,
    },
    "train": _TRAIN_SCHEMA,
    "model": {"proj_hidden": [int], "proj_dim": int, "ranking_hidden": [int]},
    "ensemble": {
        "strategy": str, "member_mode": str, "pca_dim": int,
        "map_resolution": int, "map_axes": [[int]],
        "filter_threshold": float, "filter_top_k": int,
        "regressor": _TRAIN_SCHEMA,
    },
    "sweep": {"r_values": [int], "repeats": int},
    "world": {
        "n_images": int, "latent_dim": int, "embed_dim": int,
        "n_contexts": int, "context_sharpness": float, "noise_sigma": float,
        "triples_per_cluster": int, "cc_val_size": int, "cc_test_size": int,
        "seed": int,
    },
}


def _type_ok(value, expect) -> bool:
    if expect is float:
        return isinstance(value, (int, float)) and not isinstance(value, bool)
    if expect is int:
        return isinstance(value, int) and not isinstance(value, bool)
    return isinstance(value, expect)


def _check_schema(obj, schema, path: str) -> None:
    if not isinstance(obj, dict):
        raise BadConfig(f"config section {path or 'root'} must be an object")
    for key, value in obj.items():
        here = f"{path}.{key}" if path else key
        spec = schema.get(key, schema.get("*"))
        if spec is None:
            raise BadConfig(f"unknown config key: {here}")
        if isinstance(spec, dict):
            _check_schema(value, spec, here)
        elif isinstance(spec, list):
            _check_list(value, spec[0], here)
        elif not _type_ok(value, spec):
            raise BadConfig(f"config key {here} must be {spec.__name__}")


def _check_list(value, elem_spec, path: str) -> None:
    if not isinstance(value, list):
        raise BadConfig(f"config key {path} must be a list")
    for i, item in enumerate(value):
        if isinstance(elem_spec, list):
            _check_list(item, elem_spec[0], f"{path}[{i}]")
        elif not _type_ok(item, elem_spec):
            raise BadConfig(f"config key {path}[{i}] must be {elem_spec.__name__}")


def load_config(path: Optional[str]) -> dict:
    if path is None:
        return {}
    with open(path, "r", encoding="utf-8") as fh:
        try:
            obj = json.load(fh)
        except json.JSONDecodeError as exc:
            raise BadConfig(f"config is not valid JSON: {exc}") from exc
    _check_schema(obj, _SCHEMA, "")
    strategy = obj.get("ensemble", {}).get("strategy")
    if strategy is not None and strategy not in STRATEGIES:
        raise BadConfig(f"unknown ensemble strategy {strategy!r}")
    return obj


def _train_config(cfg: dict, seed: int, section: str = "train") -> TrainConfig:
    fields = dict(cfg.get(section, {}))
    fields.setdefault("seed", seed)
    tc = TrainConfig(**fields)
    tc.validate()
    return tc


def _regressor_config(cfg: dict, seed: int) -> TrainConfig:
    fields = dict(cfg.get("ensemble", {}).get("regressor", {}))
    fields.setdefault("seed", seed)
    tc = TrainConfig(epochs=300, batch_size=16, lr=1e-2)
    tc = replace(tc, **fields)
    tc.validate()
    return tc


def _model_shape(cfg: dict):
    section = cfg.get("model", {})
    return (
        tuple(section.get("proj_hidden", PROJ_HIDDEN_DEFAULT)),
        int(section.get("proj_dim", PROJ_DIM_DEFAULT)),
        tuple(section.get("ranking_hidden", RANKING_HIDDEN_DEFAULT)),
    )


def _require(cfg: dict, *keys):
    node = cfg
    for key in keys:
        if not isinstance(node, dict) or key not in node:
            raise BadConfig(f"config is missing {'.'.join(keys)}")
        node = node[key]
    return node


def _load_embeddings(cfg: dict):
    return load_embedding_table(_require(cfg, "data", "embeddings"))


def _load_clusters(cfg: dict, names: Optional[Sequence[str]] = None) -> list:
    paths = _require(cfg, "data", "clusters")
    if names:
        missing = [n for n in names if n not in paths]
        if missing:
            raise BadConfig(f"clusters not in config: {missing}")
    else:
        names = list(paths)
    clusters = []
    for name in names:
        triples = load_triples(paths[name])
        if not triples:
            raise EmptyInput(f"cluster {name} has no triples")
        clusters.append(ContextCluster(name, triples[0].ref, triples))
    return clusters


# ---------------------------------------------------------------------------
# run directory plumbing

def _out_dir(args, cfg: dict) -> str:
    out = args.out or cfg.get("out") or "run"
    os.makedirs(out, exist_ok=True)
    return out


def _effective_seed(args, cfg: dict) -> int:
    return args.seed if args.seed is not None else int(cfg.get("seed", 0))


def _write_run_record(out: str, command: str, argv: Sequence[str],
                      cfg: dict, seed: int) -> None:
    canonical = json.dumps(cfg, sort_keys=True, separators=(",", ":"))
    record = {
        "command": command,
        "argv": list(argv),
        "seed": seed,
        "config": cfg,
        "config_hash": hashlib.sha256(canonical.encode("utf-8")).hexdigest(),
        "versions": {
            "cosim": __version__,
            "numpy": np.__version__,
            "python": platform.python_version(),
        },
    }
    with open(os.path.join(out, "run.json"), "w", encoding="utf-8") as fh:
        json.dump(record, fh, sort_keys=True, indent=2)
        fh.write("\n")


# ---------------------------------------------------------------------------
# commands

def cmd_clean(args, cfg: dict, seed: int, out: str) -> None:
    triples, annotations = load_triples_or_annotations(args.triples_in)
    kept, dropped = resolve_labels(annotations)
    combined = triples + kept
    flagged = detect_preference_cycles(combined)
    cleaned = [t for t in combined if t not in flagged]
    write_triples(cleaned, args.triples_out)
    print(f"resolved {len(kept)} of {len(annotations)} annotations "
          f"({len(dropped)} dropped)")
    print(f"removed {len(flagged)} cycle members")
    print(f"wrote {len(cleaned)} triples to {args.triples_out}")


def cmd_synth(args, cfg: dict, seed: int, out: str) -> None:
    fields = dict(cfg.get("world", {}))
    if args.seed is not None:
        fields["seed"] = args.seed
    else:
        fields.setdefault("seed", seed)
    world_cfg = WorldConfig(**fields)
    bundle, gt = generate_world(world_cfg)
    write_embedding_table(bundle.embeddings, os.path.join(out, "embeddings.cseb"))
    cluster_dir = os.path.join(out, "clusters")
    os.makedirs(cluster_dir, exist_ok=True)
    for cluster in bundle.clusters:
        write_triples(cluster.triples, os.path.join(cluster_dir, f"{cluster.name}.jsonl"))
    write_triples(bundle.cc_validation, os.path.join(out, "cc_validation.jsonl"))
    write_triples(bundle.cc_test, os.path.join(out, "cc_test.jsonl"))
    save_ground_truth(gt, os.path.join(out, "ground_truth.json"))
    print(f"world: {len(bundle.embeddings)} images, {len(bundle.clusters)} clusters, "
          f"{len(bundle.cc_validation)} validation and {len(bundle.cc_test)} test triples")
    print(f"artifacts in {out}")


def cmd_train_cs(args, cfg: dict, seed: int, out: str) -> None:
    emb = _load_embeddings(cfg)
    proj_hidden, proj_dim, ranking_hidden = _model_shape(cfg)
    clusters = _load_clusters(cfg, args.clusters or None)
    if args.merge:
        pooled = [t for c in clusters for t in c.triples]
        names = [c.name for c in clusters]
        tc = _train_config(cfg, derive_seed(seed, "train-cs:merged:" + "+".join(names)))
        model, history = train_cs_model(
            pooled, emb, tc, name="cs_merged", trained_on=names,
            proj_hidden=proj_hidden, proj_dim=proj_dim, ranking_hidden=ranking_hidden)
        path = os.path.join(out, "cs_merged.ckpt")
        save_checkpoint(model, path, metrics={"final_loss": history[-1].mean_loss}, config=tc)
        print(f"{model.name}: loss {history[-1].mean_loss:.4f} -> {path}")
        return
    for cluster in clusters:
        tc = _train_config(cfg, derive_seed(seed, f"train-cs:{cluster.name}"))
        model, history = train_cs_model(
            cluster.triples, emb, tc,
            name=f"cs_{cluster.name}", trained_on=[cluster.name],
            proj_hidden=proj_hidden, proj_dim=proj_dim, ranking_hidden=ranking_hidden)
        path = os.path.join(out, f"cs_{cluster.name}.ckpt")
        save_checkpoint(model, path, metrics={"final_loss": history[-1].mean_loss}, config=tc)
        print(f"{model.name}: loss {history[-1].mean_loss:.4f} -> {path}")


def cmd_train_global(args, cfg: dict, seed: int, out: str) -> None:
    emb = _load_embeddings(cfg)
    proj_hidden, proj_dim, ranking_hidden = _model_shape(cfg)
    if args.on == "cs-union":
        clusters = _load_clusters(cfg)
        triples = [t for c in clusters for t in c.triples]
        trained_on = [c.name for c in clusters]
        name = "global_cs_union"
    else:
        triples = load_triples(_require(cfg, "data", "cc_validation"))
        trained_on = ["cc_validation"]
        name = "global_cc_val"
    tc = _train_config(cfg, derive_seed(seed, f"train-global:{args.on}"))
    model, history = train_cs_model(
        triples, emb, tc, name=name, trained_on=trained_on,
        proj_hidden=proj_hidden, proj_dim=proj_dim, ranking_hidden=ranking_hidden)
    path = os.path.join(out, f"{name}.ckpt")
    save_checkpoint(model, path, metrics={"final_loss": history[-1].mean_loss}, config=tc)
    print(f"{model.name}: loss {history[-1].mean_loss:.4f} -> {path}")


def cmd_eval(args, cfg: dict, seed: int, out: str) -> None:
    emb = _load_embeddings(cfg)
    model, _ = load_checkpoint(args.model)
    triples = load_triples(args.triples)
    report = evaluate_model(model, triples, emb, mode=args.mode)
    payload = {"model": model.name, "mode": args.mode, **report.to_json_dict()}
    text = json.dumps(payload, sort_keys=True, indent=2)
    with open(os.path.join(out, "eval.json"), "w", encoding="utf-8") as fh:
        fh.write(text)
        fh.write("\n")
    print(text)


def cmd_crossval(args, cfg: dict, seed: int, out: str) -> None:
    emb = _load_embeddings(cfg)
    models = [load_checkpoint(p)[0] for p in args.models]
    clusters = _load_clusters(cfg)
    mode = cfg.get("ensemble", {}).get("member_mode", "embedding")
    matrix = cross_validation(models, clusters, emb, mode=mode)
    path = os.path.join(out, "crossval.csv")
    matrix.to_csv(path)
    print(f"{len(models)} models x {len(clusters)} clusters -> {path}")


def _slice_regressors(full: WeightRegressorSet, members) -> WeightRegressorSet:
    idx = [full.member_names.index(m.name) for m in members]
    return WeightRegressorSet(
        pca=full.pca,
        member_names=[full.member_names[i] for i in idx],
        regressors=[full.regressors[i] for i in idx],
    )


def _ensemble_section(cfg: dict) -> dict:
    return cfg.get("ensemble", {})


def _builder_for(strategy: str, cfg: dict, models, emb, val_triples, seed: int):
    """Returns build(members) for ablations; heavy parts are precomputed
    once on the full member set and sliced per subset."""
    section = _ensemble_section(cfg)
    mode = section.get("member_mode", "embedding")
    if strategy == STRATEGY_MAJORITY:
        return lambda members: EnsembleModel(list(members), STRATEGY_MAJORITY, mode)
    if strategy == STRATEGY_REGRESSOR:
        full = train_weight_regressors(
            models, val_triples, emb,
            l=section.get("pca_dim", PCA_DEFAULT_DIM),
            cfg=_regressor_config(cfg, derive_seed(seed, "ablate:regressors")),
            mode=mode)
        return lambda members: EnsembleModel(
            list(members), STRATEGY_REGRESSOR, mode,
            regressors=_slice_regressors(full, members))
    pca, maps = _fit_maps(cfg, models, emb, val_triples)
    if strategy == STRATEGY_CREDIBILITY:
        return lambda members: EnsembleModel(
            list(members), STRATEGY_CREDIBILITY, mode, pca=pca,
            maps={m.name: maps[m.name] for m in members})
    threshold = section.get("filter_threshold")
    top_k = section.get("filter_top_k")
    if (threshold is None) == (top_k is None):
        raise BadConfig("filtered_vote needs exactly one of "
                        "ensemble.filter_threshold / ensemble.filter_top_k")
    return lambda members: EnsembleModel(
        list(members), STRATEGY_FILTERED, mode, pca=pca,
        maps={m.name: maps[m.name] for m in members},
        filter_threshold=threshold, filter_top_k=top_k)


def _fit_maps(cfg: dict, models, emb, val_triples):
    """PCA over validation reference embeddings plus per-model maps."""
    section = _ensemble_section(cfg)
    refs = []
    seen = set()
    for t in val_triples:
        if t.ref not in seen:
            seen.add(t.ref)
            refs.append(t.ref)
    matrix = emb.matrix(order=refs)
    l = clamp_pca_dim(section.get("pca_dim", PCA_DEFAULT_DIM), len(refs), emb.dim)
    pca = pca_fit(matrix, l)
    axes = section.get("map_axes")
    axes = [tuple(spec) for spec in axes] if axes else MAP_AXES_DEFAULT
    resolution = section.get("map_resolution", MAP_RESOLUTION_DEFAULT)
    mode = section.get("member_mode", "embedding")
    maps = {
        m.name: build_default_maps(m, val_triples, emb, pca,
                                   resolution=resolution, axes=axes, mode=mode)
        for m in models
    }
    return pca, maps


def cmd_ablate_loo(args, cfg: dict, seed: int, out: str) -> None:
    emb = _load_embeddings(cfg)
    models = [load_checkpoint(p)[0] for p in args.models]
    clusters = _load_clusters(cfg)
    test_triples = load_triples(_require(cfg, "data", "cc_test"))
    val_triples = load_triples(_require(cfg, "data", "cc_validation"))
    strategy = _ensemble_section(cfg).get("strategy", STRATEGY_MAJORITY)
    build = _builder_for(strategy, cfg, models, emb, val_triples, seed)
    rows = leave_one_out(models, build, clusters, test_triples, emb)
    path = os.path.join(out, "loo.csv")
    write_leave_one_out_csv(rows, [c.name for c in clusters], path)
    print(f"{strategy} leave-one-out over {len(models)} members -> {path}")


def cmd_sweep(args, cfg: dict, seed: int, out: str) -> None:
    emb = _load_embeddings(cfg)
    models = [load_checkpoint(p)[0] for p in args.models]
    test_triples = load_triples(_require(cfg, "data", "cc_test"))
    val_triples = load_triples(_require(cfg, "data", "cc_validation"))
    section = _ensemble_section(cfg)
    mode = section.get("member_mode", "embedding")
    sweep_cfg = cfg.get("sweep", {})
    repeats = sweep_cfg.get("repeats", 3)
    r_values = sweep_cfg.get("r_values") or None

    # stochastic repeats share one trained regressor set per repeat seed;
    # the heads are per-member, so subsets just slice the full set
    mlp_sets = {}
    for k in range(repeats):
        s = derive_seed(seed, f"sweep:mlp:{k}")
        mlp_sets[s] = train_weight_regressors(
            models, val_triples, emb,
            l=section.get("pca_dim", PCA_DEFAULT_DIM),
            cfg=_regressor_config(cfg, s),
            mode=mode)

    def build_vote(members, _seed):
        return EnsembleModel(list(members), STRATEGY_MAJORITY, mode)

    def build_mlp(members, build_seed):
        return EnsembleModel(
            list(members), STRATEGY_REGRESSOR, mode,
            regressors=_slice_regressors(mlp_sets[build_seed], members))

    strategies = [
        SweepStrategy("vote", build_vote),
        SweepStrategy("mlp", build_mlp, stochastic=True),
    ]
    cache: dict = {}

    def cached_eval(ens, triples, table):
        return evaluate_ensemble(ens, triples, table, projected_cache=cache)

    rows = combination_sweep(models, strategies, test_triples, emb,
                             r_values=r_values, repeats=repeats,
                             base_seed=seed, evaluate=cached_eval)
    path = os.path.join(out, "sweep.csv")
    write_sweep_csv(rows, path)
    print(f"{len(rows)} sweep rows -> {path}")


def cmd_build_maps(args, cfg: dict, seed: int, out: str) -> None:
    emb = _load_embeddings(cfg)
    models = [load_checkpoint(p)[0] for p in args.models]
    val_triples = load_triples(_require(cfg, "data", "cc_validation"))
    pca, maps = _fit_maps(cfg, models, emb, val_triples)
    pca_path = os.path.join(out, "pca.cspc")
    save_pca(pca, pca_path)
    map_paths: dict = {}
    for model in models:
        rel_paths = []
        for cred_map in maps[model.name]:
            tag = "-".join(str(i) for i in cred_map.dim_indices)
            rel = f"map_{model.name}_{tag}.cscm"
            save_credibility_map(cred_map, os.path.join(out, rel))
            export_map_csv(cred_map, os.path.join(out, f"map_{model.name}_{tag}.csv"))
            rel_paths.append(rel)
        map_paths[model.name] = rel_paths
    section = _ensemble_section(cfg)
    strategy = section.get("strategy", STRATEGY_CREDIBILITY)
    if strategy not in (STRATEGY_CREDIBILITY, STRATEGY_FILTERED):
        strategy = STRATEGY_CREDIBILITY
    save_ensemble_manifest(
        os.path.join(out, "maps_ensemble.json"),
        strategy=strategy,
        member_checkpoints=[os.path.abspath(p) for p in args.models],
        member_mode=section.get("member_mode", "embedding"),
        pca_path="pca.cspc",
        map_paths=map_paths,
        filter_threshold=section.get("filter_threshold") if strategy == STRATEGY_FILTERED else None,
        filter_top_k=section.get("filter_top_k") if strategy == STRATEGY_FILTERED else None,
    )
    total = sum(len(v) for v in map_paths.values())
    print(f"{total} credibility maps for {len(models)} models -> {out}")


def cmd_train_weights(args, cfg: dict, seed: int, out: str) -> None:
    emb = _load_embeddings(cfg)
    models = [load_checkpoint(p)[0] for p in args.models]
    val_triples = load_triples(_require(cfg, "data", "cc_validation"))
    section = _ensemble_section(cfg)
    regs = train_weight_regressors(
        models, val_triples, emb,
        l=section.get("pca_dim", PCA_DEFAULT_DIM),
        cfg=_regressor_config(cfg, derive_seed(seed, "train-weights")),
        mode=section.get("member_mode", "embedding"))
    regs_path = os.path.join(out, "regressors.bin")
    save_weight_regressors(regs, regs_path)
    save_ensemble_manifest(
        os.path.join(out, "regressor_ensemble.json"),
        strategy=STRATEGY_REGRESSOR,
        member_checkpoints=[os.path.abspath(p) for p in args.models],
        member_mode=section.get("member_mode", "embedding"),
        regressors_path="regressors.bin",
    )
    print(f"weight regressors for {len(models)} members -> {regs_path}")


def cmd_ensemble_eval(args, cfg: dict, seed: int, out: str) -> None:
    emb = _load_embeddings(cfg)
    ensemble = load_ensemble_manifest(args.manifest)
    triples = load_triples(args.triples)
    report = evaluate_ensemble(ensemble, triples, emb)
    payload = {
        "strategy": ensemble.strategy,
        "members": [m.name for m in ensemble.members],
        **report.to_json_dict(),
    }
    text = json.dumps(payload, sort_keys=True, indent=2)
    with open(os.path.join(out, "ensemble_eval.json"), "w", encoding="utf-8") as fh:
        fh.write(text)
        fh.write("\n")
    print(text)


# ---------------------------------------------------------------------------
# argument plumbing

class _Parser(argparse.ArgumentParser):
    """Usage mistakes are validation errors, not exit-code-2 crashes."""

    def error(self, message):
        raise BadConfig(f"argument error: {message}")


def build_parser() -> _Parser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=None, help="JSON run configuration")
    common.add_argument("--seed", type=int, default=None,
                        help="overrides the config seed")
    common.add_argument("--out", default=None, help="run directory")
    common.add_argument("--threads", type=int, default=None,
                        help="BLAS thread cap, best effort")

    parser = _Parser(prog="cosim", description="context-sensitive similarity toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("clean", parents=[common],
                       help="resolve votes and drop preference cycles")
    p.add_argument("triples_in")
    p.add_argument("triples_out")
    p.set_defaults(func=cmd_clean)

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic world")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train-cs", parents=[common],
                       help="train one model per cluster")
    p.add_argument("clusters", nargs="*", help="cluster names (default: all)")
    p.add_argument("--merge", action="store_true",
                   help="train a single model on the union instead")
    p.set_defaults(func=cmd_train_cs)

    p = sub.add_parser("train-global", parents=[common],
                       help="train a context-free model")
    p.add_argument("--on", choices=("cs-union", "cc-val"), required=True)
    p.set_defaults(func=cmd_train_global)

    p = sub.add_parser("eval", parents=[common], help="score one model")
    p.add_argument("model", help="checkpoint path")
    p.add_argument("triples", help="triples JSONL path")
    p.add_argument("--mode", choices=("embedding", "ranking"), default="embedding")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("crossval", parents=[common],
                       help="models x clusters accuracy matrix")
    p.add_argument("models", nargs="+", help="checkpoint paths")
    p.set_defaults(func=cmd_crossval)

    p = sub.add_parser("ablate-loo", parents=[common],
                       help="leave-one-out ensemble ablation")
    p.add_argument("models", nargs="+", help="checkpoint paths")
    p.set_defaults(func=cmd_ablate_loo)

    p = sub.add_parser("sweep", parents=[common],
                       help="ensemble accuracy over member subsets")
    p.add_argument("models", nargs="+", help="checkpoint paths")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("build-maps", parents=[common],
                       help="credibility maps over reference features")
    p.add_argument("models", nargs="+", help="checkpoint paths")
    p.set_defaults(func=cmd_build_maps)

    p = sub.add_parser("train-weights", parents=[common],
                       help="per-member accuracy regressors")
    p.add_argument("models", nargs="+", help="checkpoint paths")
    p.set_defaults(func=cmd_train_weights)

    p = sub.add_parser("ensemble-eval", parents=[common],
                       help="score an ensemble manifest")
    p.add_argument("manifest")
    p.add_argument("triples")
    p.set_defaults(func=cmd_ensemble_eval)

    return parser


def _setup_logging() -> None:
    raw = os.environ.get("COSIM_LOG", "warn").lower()
    if raw not in _LOG_LEVELS:
        raise BadConfig(f"COSIM_LOG must be one of {sorted(_LOG_LEVELS)}, got {raw!r}")
    logging.basicConfig(level=_LOG_LEVELS[raw],
                        format="%(levelname)s %(name)s: %(message)s")


def _apply_threads(n: Optional[int]) -> None:
    if n is None:
        return
    if n < 1:
        raise BadConfig("--threads must be >= 1")
    # takes effect for BLAS pools initialized after this point
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ[var] = str(n)
    log.debug("thread cap %d exported to BLAS env vars", n)


def entry(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        _setup_logging()
        args = build_parser().parse_args(argv)
        _apply_threads(args.threads)
        cfg = load_config(args.config)
        seed = _effective_seed(args, cfg)
        out = _out_dir(args, cfg)
        args.func(args, cfg, seed, out)
        _write_run_record(out, args.command, argv, cfg, seed)
        return 0
    except VALIDATION_ERRORS as exc:
        log.error("%s", exc)
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except CosimError as exc:
        log.error("%s", exc)
        print(f"runtime error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001  (CLI boundary)
        log.exception("unhandled failure")
        print(f"runtime error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(entry())
