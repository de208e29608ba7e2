"""Ensembles over context-sensitive models.

Four combination rules share one vote core: plain majority, credibility
weighting from per-cell accuracy maps over PCA feature space, a filtered
vote that drops low-credibility members, and per-member weight regressors
trained to predict each model's per-reference accuracy.  Ties always break
the same way: the member with the largest confidence margin wins, then the
first-listed one.
"""

from __future__ import annotations

import json
import logging
import os
import struct
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .csmodel import (
    CsModel,
    Prediction,
    TrainConfig,
    load_checkpoint,
    predict,
    predict_batch,
    project_table,
)
from .dataio import EmbeddingTable, Triple
from .errors import BadConfig, DimMismatch, EmptyInput, FormatError, NegativeScore
from .evalkit import EvalReport, report_from_labels
from .nets import ACT_SIGMOID, MlpParams, adam_init, adam_step, init_mlp, mlp_forward, mse_sigmoid_batch_gradients, read_mlp_section, write_mlp_section
from .numerics import PCA_DEFAULT_DIM, PcaModel, clamp_pca_dim, pca_fit, pca_transform
from .seeding import derive_seed

log = logging.getLogger("cosim.ensemble")

CSCM_MAGIC = b"CSCM"

STRATEGY_MAJORITY = "majority_vote"
STRATEGY_CREDIBILITY = "credibility_weighted"
STRATEGY_FILTERED = "filtered_vote"
STRATEGY_REGRESSOR = "regressor_weighted"
STRATEGIES = (STRATEGY_MAJORITY, STRATEGY_CREDIBILITY, STRATEGY_FILTERED, STRATEGY_REGRESSOR)

MAP_RESOLUTION_DEFAULT = 200
MAP_AXES_DEFAULT = ((0, 1), (0, 2), (1, 2), (0,), (1,))
REGRESSOR_HIDDEN_DEFAULT = (32,)


# ---------------------------------------------------------------------------
# credibility maps

@dataclass
class CredibilityMap:
    """Per-cell (correct, total) counts over a gridded PCA subspace."""

    model_name: str
    dim_indices: tuple
    bounds: list              # per axis (lo, hi) over the building set
    resolution: int
    correct: np.ndarray       # int64, shape (resolution,) * len(dim_indices)
    total: np.ndarray

    def __post_init__(self):
        if len(self.dim_indices) not in (1, 2):
            raise BadConfig("credibility maps are 1-D or 2-D")
        if len(self.bounds) != len(self.dim_indices):
            raise BadConfig("one (lo, hi) bound pair per axis")
        if self.resolution < 1:
            raise BadConfig(f"resolution must be >= 1, got {self.resolution}")
        shape = (self.resolution,) * len(self.dim_indices)
        if self.correct.shape != shape or self.total.shape != shape:
            raise DimMismatch(f"cell grids must have shape {shape}")
        if np.any(self.correct > self.total):
            raise DimMismatch("correct count exceeds total in some cell")


def _bin_indices(coords: np.ndarray, bounds, resolution: int) -> tuple:
    """Clamp coordinates into grid cells; out-of-bounds goes to edge cells."""
    idx = []
    for axis, (lo, hi) in enumerate(bounds):
        width = hi - lo if hi > lo else 1.0
        frac = (coords[:, axis] - lo) / width
        idx.append(np.clip((frac * resolution).astype(np.intp), 0, resolution - 1))
    return tuple(idx)


def build_credibility_map(
    model: CsModel,
    triples: Sequence[Triple],
    embeddings: EmbeddingTable,
    pca: PcaModel,
    dim_indices: Sequence[int],
    resolution: int = MAP_RESOLUTION_DEFAULT,
    mode: str = "embedding",
    projected=None,
) -> CredibilityMap:
    """Grid the building set by reference feature, count the model's hits."""
    if not triples:
        raise EmptyInput("no triples to build a credibility map from")
    dim_indices = tuple(int(i) for i in dim_indices)
    for i in dim_indices:
        if not 0 <= i < pca.output_dim:
            raise BadConfig(f"map axis {i} outside PCA feature range")
    feats = pca_transform(pca, embeddings.matrix(order=[t.ref for t in triples]))
    coords = feats[:, list(dim_indices)]
    bounds = [(float(coords[:, k].min()), float(coords[:, k].max()))
              for k in range(coords.shape[1])]
    labels, _, _ = predict_batch(model, triples, embeddings, mode, projected=projected)
    ok = labels == np.array([t.y for t in triples])
    shape = (resolution,) * len(dim_indices)
    correct = np.zeros(shape, dtype=np.int64)
    total = np.zeros(shape, dtype=np.int64)
    cells = _bin_indices(coords, bounds, resolution)
    np.add.at(total, cells, 1)
    np.add.at(correct, cells, ok.astype(np.int64))
    return CredibilityMap(model.name, dim_indices, bounds, resolution, correct, total)


def build_default_maps(model, triples, embeddings, pca,
                       resolution: int = MAP_RESOLUTION_DEFAULT,
                       axes: Sequence = MAP_AXES_DEFAULT,
                       mode: str = "embedding", projected=None) -> list:
    """One map per axis spec; 2-D pairs plus 1-D margins by default."""
    usable = [spec for spec in axes if max(spec) < pca.output_dim]
    if len(usable) < len(axes):
        log.warning("dropping %d map specs beyond the %d PCA dims",
                    len(axes) - len(usable), pca.output_dim)
    if not usable:
        raise BadConfig("no usable map axes for this PCA dimension")
    return [
        build_credibility_map(model, triples, embeddings, pca, spec, resolution,
                              mode, projected=projected)
        for spec in usable
    ]


def map_cell_score(cred_map: CredibilityMap, features: np.ndarray) -> float:
    """Laplace-smoothed accuracy (correct+1)/(total+2) of the feature's cell."""
    coords = np.asarray(features, dtype=np.float64).reshape(1, -1)[:, list(cred_map.dim_indices)]
    cells = _bin_indices(coords, cred_map.bounds, cred_map.resolution)
    c = float(cred_map.correct[cells][0])
    t = float(cred_map.total[cells][0])
    return (c + 1.0) / (t + 2.0)


def credibility_score(maps: Sequence[CredibilityMap], features: np.ndarray) -> float:
    """Mean cell score across a member's maps; empty cells contribute 0.5."""
    if not maps:
        raise EmptyInput("member has no credibility maps")
    total = 0.0
    for cred_map in maps:
        total += map_cell_score(cred_map, features)
    return total / len(maps)


def _credibility_scores_batch(maps: Sequence[CredibilityMap], feats: np.ndarray) -> np.ndarray:
    """credibility_score for many feature rows, same accumulation order."""
    total = np.zeros(feats.shape[0])
    for cred_map in maps:
        coords = feats[:, list(cred_map.dim_indices)]
        cells = _bin_indices(coords, cred_map.bounds, cred_map.resolution)
        c = cred_map.correct[cells].astype(np.float64)
        t = cred_map.total[cells].astype(np.float64)
        total += (c + 1.0) / (t + 2.0)
    return total / len(maps)


def save_credibility_map(cred_map: CredibilityMap, path) -> None:
    """Binary cells plus a JSON sidecar (``path + \".json\"``) with the axes."""
    with open(path, "wb") as fh:
        fh.write(CSCM_MAGIC)
        fh.write(struct.pack("<BI", len(cred_map.dim_indices), cred_map.resolution))
        flat_c = cred_map.correct.reshape(-1)
        flat_t = cred_map.total.reshape(-1)
        if np.any(flat_t > 0xFFFFFFFF):
            raise FormatError("cell counts exceed u32 range")
        pairs = np.empty(flat_c.size * 2, dtype="<u4")
        pairs[0::2] = flat_c
        pairs[1::2] = flat_t
        fh.write(pairs.tobytes())
    sidecar = {
        "model_name": cred_map.model_name,
        "dim_indices": list(cred_map.dim_indices),
        "bounds": [[lo, hi] for lo, hi in cred_map.bounds],
        "resolution": cred_map.resolution,
    }
    with open(path + ".json", "w", encoding="utf-8") as fh:
        json.dump(sidecar, fh, sort_keys=True, separators=(",", ":"))
        fh.write("\n")


def load_credibility_map(path) -> CredibilityMap:
    with open(path + ".json", "r", encoding="utf-8") as fh:
        sidecar = json.load(fh)
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != CSCM_MAGIC:
        raise FormatError(f"bad magic {blob[:4]!r}, expected {CSCM_MAGIC!r}")
    n_axes, resolution = struct.unpack_from("<BI", blob, 4)
    if n_axes != len(sidecar["dim_indices"]) or resolution != sidecar["resolution"]:
        raise DimMismatch("sidecar disagrees with binary header")
    cell_count = resolution**n_axes
    expected = 9 + 8 * cell_count
    if len(blob) != expected:
        raise DimMismatch(f"CSCM payload is {len(blob)} bytes, expected {expected}")
    pairs = np.frombuffer(blob, dtype="<u4", offset=9)
    shape = (resolution,) * n_axes
    return CredibilityMap(
        model_name=sidecar["model_name"],
        dim_indices=tuple(sidecar["dim_indices"]),
        bounds=[tuple(b) for b in sidecar["bounds"]],
        resolution=resolution,
        correct=pairs[0::2].astype(np.int64).reshape(shape),
        total=pairs[1::2].astype(np.int64).reshape(shape),
    )


def export_map_csv(cred_map: CredibilityMap, path) -> None:
    """Flat cell listing for offline plotting."""
    import csv as _csv

    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = _csv.writer(fh)
        axes = [f"bin_{i}" for i in range(len(cred_map.dim_indices))]
        writer.writerow([*axes, "correct", "total", "score"])
        for cell in np.ndindex(cred_map.correct.shape):
            c = int(cred_map.correct[cell])
            t = int(cred_map.total[cell])
            if t == 0:
                continue
            writer.writerow([*cell, c, t, repr((c + 1.0) / (t + 2.0))])


# ---------------------------------------------------------------------------
# votes

def normalize_weights(scores) -> np.ndarray:
    """Scale non-negative scores to sum 1; an all-zero vector goes uniform."""
    arr = np.asarray(scores, dtype=np.float64).reshape(-1)
    if arr.size == 0:
        raise EmptyInput("no scores to normalize")
    if np.any(arr < 0):
        raise NegativeScore(f"negative score in {arr!r}")
    s = arr.sum()
    if s == 0.0:
        return np.full(arr.size, 1.0 / arr.size)
    return arr / s


def _break_tie(predictions: Sequence[Prediction]) -> int:
    margins = np.array([abs(p.confidence_ab - 0.5) for p in predictions])
    return predictions[int(np.argmax(margins))].label


def _member_predictions(members, triple, embeddings, mode) -> list:
    return [predict(m, triple, embeddings, mode) for m in members]


def majority_vote(members: Sequence[CsModel], triple: Triple,
                  embeddings: EmbeddingTable, mode: str = "embedding") -> int:
    """Unweighted vote; ties go to the most confident member, then the first."""
    if not members:
        raise EmptyInput("no members to vote")
    preds = _member_predictions(members, triple, embeddings, mode)
    s = sum(p.label for p in preds)
    if s != 0:
        return -1 if s < 0 else 1
    return _break_tie(preds)


def weighted_vote(members: Sequence[CsModel], weights, triple: Triple,
                  embeddings: EmbeddingTable, mode: str = "embedding") -> int:
    """Sign of the weight-blended vote; an exact zero falls to the tie rule."""
    if not members:
        raise EmptyInput("no members to vote")
    w = np.asarray(weights, dtype=np.float64).reshape(-1)
    if w.size != len(members):
        raise DimMismatch(f"{w.size} weights for {len(members)} members")
    if np.any(w < 0):
        raise NegativeScore("vote weights must be non-negative")
    if w.sum() == 0.0:
        raise BadConfig("all-zero vote weights")
    preds = _member_predictions(members, triple, embeddings, mode)
    s = float(np.sum(w * np.array([p.label for p in preds], dtype=np.float64)))
    if s != 0.0:
        return -1 if s < 0 else 1
    return _break_tie(preds)


def filtered_vote(members: Sequence[CsModel], scores, triple: Triple,
                  embeddings: EmbeddingTable, threshold: Optional[float] = None,
                  top_k: Optional[int] = None, mode: str = "embedding") -> int:
    """Vote among high-credibility members only.

    Exactly one of ``threshold`` (keep scores >= it) or ``top_k`` may be
    given.  An empty survivor set falls back to a full majority vote.
    """
    if (threshold is None) == (top_k is None):
        raise BadConfig("give exactly one of threshold or top_k")
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    if scores.size != len(members):
        raise DimMismatch(f"{scores.size} scores for {len(members)} members")
    if threshold is not None:
        keep = np.nonzero(scores >= threshold)[0]
    else:
        if top_k < 1:
            raise BadConfig(f"top_k must be >= 1, got {top_k}")
        keep = np.argsort(-scores, kind="stable")[:top_k]
        keep = np.sort(keep)
    if keep.size == 0:
        log.info("filtered_vote kept no members; falling back to majority")
        return majority_vote(members, triple, embeddings, mode)
    survivors = [members[i] for i in keep]
    return weighted_vote(survivors, normalize_weights(scores[keep]), triple,
                         embeddings, mode)


# ---------------------------------------------------------------------------
# weight regressors

@dataclass
class WeightRegressorSet:
    """One accuracy-predicting head per member over shared PCA features."""

    pca: PcaModel
    member_names: list
    regressors: list

    def __post_init__(self):
        if len(self.member_names) != len(self.regressors):
            raise DimMismatch("one regressor per member name")


def per_reference_accuracy(model: CsModel, triples: Sequence[Triple],
                           embeddings: EmbeddingTable, mode: str = "embedding",
                           projected=None) -> dict:
    """Fraction of correct predictions per reference id."""
    if not triples:
        raise EmptyInput("no triples")
    labels, _, _ = predict_batch(model, triples, embeddings, mode, projected=projected)
    tally: dict = {}
    for t, pred in zip(triples, labels):
        c, n = tally.get(t.ref, (0, 0))
        tally[t.ref] = (c + (int(pred) == t.y), n + 1)
    return {ref: c / n for ref, (c, n) in tally.items()}


def train_weight_regressors(
    members: Sequence[CsModel],
    triples: Sequence[Triple],
    embeddings: EmbeddingTable,
    l: int = PCA_DEFAULT_DIM,
    cfg: Optional[TrainConfig] = None,
    mode: str = "embedding",
    hidden: Sequence[int] = REGRESSOR_HIDDEN_DEFAULT,
) -> WeightRegressorSet:
    """Fit one sigmoid-output MLP per member on (reference features ->
    that member's per-reference accuracy) with squared error.

    ``cfg`` reuses TrainConfig for epochs/batch/lr/seed (the ranking-loss
    fields are ignored); defaults favor convergence of the small head.  The
    requested PCA dimension clamps to min(n_refs - 1, d) with a warning.
    """
    if not members:
        raise EmptyInput("no members")
    if not triples:
        raise EmptyInput("no validation triples")
    cfg = cfg if cfg is not None else TrainConfig(epochs=300, batch_size=16, lr=1e-2)
    cfg.validate()

    refs: list = []
    seen = set()
    for t in triples:
        if t.ref not in seen:
            seen.add(t.ref)
            refs.append(t.ref)
    ref_matrix = embeddings.matrix(order=refs)
    l_eff = clamp_pca_dim(l, len(refs), embeddings.dim)
    pca = pca_fit(ref_matrix, l_eff)
    feats = pca_transform(pca, ref_matrix)

    regressors = []
    for i, member in enumerate(members):
        acc = per_reference_accuracy(member, triples, embeddings, mode)
        targets = np.array([acc[r] for r in refs], dtype=np.float64)
        rng = np.random.default_rng(derive_seed(cfg.seed, f"regressor:{i}:{member.name}"))
        reg = init_mlp([l_eff, *hidden, 1], ACT_SIGMOID, rng)
        state = adam_init(reg)
        n = len(refs)
        for _ in range(cfg.epochs):
            perm = rng.permutation(n)
            for start in range(0, n, cfg.batch_size):
                sel = perm[start : start + cfg.batch_size]
                _, grads = mse_sigmoid_batch_gradients(reg, feats[sel], targets[sel])
                adam_step(reg, grads, state, cfg.lr)
        regressors.append(reg)
    return WeightRegressorSet(pca=pca, member_names=[m.name for m in members],
                              regressors=regressors)


def predict_weights(regs: WeightRegressorSet, ref_embedding) -> np.ndarray:
    """Per-member weights for one reference; clamped then sum-normalized."""
    feats = pca_transform(regs.pca, np.asarray(ref_embedding, dtype=np.float64))
    raw = np.array([float(mlp_forward(reg, feats)[0]) for reg in regs.regressors])
    return normalize_weights(np.clip(raw, 0.0, 1.0))


def _predict_weights_batch(regs: WeightRegressorSet, ref_matrix: np.ndarray) -> np.ndarray:
    feats = pca_transform(regs.pca, ref_matrix)
    cols = [mlp_forward(reg, feats).reshape(-1) for reg in regs.regressors]
    raw = np.clip(np.stack(cols, axis=1), 0.0, 1.0)
    sums = raw.sum(axis=1, keepdims=True)
    uniform = np.full_like(raw, 1.0 / raw.shape[1])
    return np.where(sums > 0.0, raw / np.where(sums > 0.0, sums, 1.0), uniform)


# ---------------------------------------------------------------------------
# ensemble models

@dataclass
class EnsembleModel:
    members: list
    strategy: str
    member_mode: str = "embedding"
    pca: Optional[PcaModel] = None
    maps: Optional[dict] = None                 # member name -> [CredibilityMap]
    regressors: Optional[WeightRegressorSet] = None
    filter_threshold: Optional[float] = None
    filter_top_k: Optional[int] = None

    def __post_init__(self):
        if not self.members:
            raise EmptyInput("ensemble needs at least one member")
        if self.strategy not in STRATEGIES:
            raise BadConfig(f"unknown strategy {self.strategy!r}")
        names = [m.name for m in self.members]
        if len(set(names)) != len(names):
            raise BadConfig("member names must be unique")
        if self.strategy in (STRATEGY_CREDIBILITY, STRATEGY_FILTERED):
            if self.pca is None or self.maps is None:
                raise BadConfig(f"{self.strategy} needs pca and maps")
            missing = [n for n in names if n not in self.maps]
            if missing:
                raise BadConfig(f"no credibility maps for members {missing}")
        if self.strategy == STRATEGY_FILTERED:
            if (self.filter_threshold is None) == (self.filter_top_k is None):
                raise BadConfig("filtered_vote needs exactly one of threshold/top_k")
        if self.strategy == STRATEGY_REGRESSOR:
            if self.regressors is None:
                raise BadConfig("regressor_weighted needs trained regressors")
            if self.regressors.member_names != names:
                raise BadConfig("regressor set does not match ensemble members")


def _member_scores(ensemble: EnsembleModel, features: np.ndarray) -> np.ndarray:
    return np.array([
        credibility_score(ensemble.maps[m.name], features) for m in ensemble.members
    ])


def predict_ensemble(ensemble: EnsembleModel, triple: Triple,
                     embeddings: EmbeddingTable) -> int:
    """Combine member predictions for one triple under the set strategy."""
    mode = ensemble.member_mode
    if ensemble.strategy == STRATEGY_MAJORITY:
        return majority_vote(ensemble.members, triple, embeddings, mode)
    if ensemble.strategy == STRATEGY_REGRESSOR:
        weights = predict_weights(ensemble.regressors, embeddings.vector(triple.ref))
        return weighted_vote(ensemble.members, weights, triple, embeddings, mode)
    features = pca_transform(ensemble.pca,
                             embeddings.vector(triple.ref).astype(np.float64))
    scores = _member_scores(ensemble, features)
    if ensemble.strategy == STRATEGY_CREDIBILITY:
        return weighted_vote(ensemble.members, normalize_weights(scores), triple,
                             embeddings, mode)
    return filtered_vote(ensemble.members, scores, triple, embeddings,
                         threshold=ensemble.filter_threshold,
                         top_k=ensemble.filter_top_k, mode=mode)


def evaluate_ensemble(ensemble: EnsembleModel, triples: Sequence[Triple],
                      embeddings: EmbeddingTable, projected_cache: Optional[dict] = None) -> EvalReport:
    """Vectorized ensemble scoring; mirrors predict_ensemble exactly.

    ``projected_cache`` maps member name -> ProjectedTable to reuse
    projections across calls (sweeps, ablations).
    """
    if len(triples) == 0:
        raise EmptyInput("no triples to score")
    k = len(ensemble.members)
    n = len(triples)
    labels = np.empty((k, n), dtype=np.int64)
    confs = np.empty((k, n))
    for i, member in enumerate(ensemble.members):
        pt = None
        if projected_cache is not None:
            pt = projected_cache.get(member.name)
            if pt is None:
                pt = project_table(member, embeddings)
                projected_cache[member.name] = pt
        lab, conf, _ = predict_batch(member, triples, embeddings,
                                     ensemble.member_mode, projected=pt)
        labels[i] = lab
        confs[i] = conf

    refs: list = []
    seen = set()
    for t in triples:
        if t.ref not in seen:
            seen.add(t.ref)
            refs.append(t.ref)
    ref_row = {r: i for i, r in enumerate(refs)}
    tri_ref = np.array([ref_row[t.ref] for t in triples], dtype=np.intp)

    if ensemble.strategy == STRATEGY_MAJORITY:
        weights_by_ref = np.ones((len(refs), k))
    elif ensemble.strategy == STRATEGY_REGRESSOR:
        weights_by_ref = _predict_weights_batch(ensemble.regressors,
                                                embeddings.matrix(order=refs))
    else:
        feats = pca_transform(ensemble.pca, embeddings.matrix(order=refs))
        scores = np.stack(
            [_credibility_scores_batch(ensemble.maps[m.name], feats)
             for m in ensemble.members], axis=1,
        )
        if ensemble.strategy == STRATEGY_CREDIBILITY:
            weights_by_ref = np.stack([normalize_weights(row) for row in scores])
        else:
            weights_by_ref = np.zeros_like(scores)
            fallbacks = 0
            for ri in range(len(refs)):
                row = scores[ri]
                if ensemble.filter_threshold is not None:
                    keep = np.nonzero(row >= ensemble.filter_threshold)[0]
                else:
                    keep = np.sort(np.argsort(-row, kind="stable")[: ensemble.filter_top_k])
                if keep.size == 0:
                    weights_by_ref[ri] = 1.0      # majority fallback
                    fallbacks += 1
                else:
                    weights_by_ref[ri, keep] = normalize_weights(row[keep])
            if fallbacks:
                log.info("filtered_vote fell back to majority for %d references", fallbacks)

    w = weights_by_ref[tri_ref]                   # (n, k)
    s = np.sum(w * labels.T, axis=1)
    out = np.where(s < 0.0, -1, 1).astype(np.int64)
    tied = s == 0.0
    if np.any(tied):
        margins = np.abs(confs - 0.5)             # (k, n)
        best = np.argmax(margins[:, tied], axis=0)
        out[tied] = labels[best, np.nonzero(tied)[0]]
    return report_from_labels(triples, out)


# ---------------------------------------------------------------------------
# serialization

def save_weight_regressors(regs: WeightRegressorSet, path) -> None:
    header = {
        "format": "cosim-regressors",
        "version": 1,
        "member_names": regs.member_names,
        "pca_input_dim": regs.pca.input_dim,
        "pca_output_dim": regs.pca.output_dim,
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(regs.pca.mean.astype("<f8", copy=False).tobytes())
        fh.write(np.ascontiguousarray(regs.pca.components, dtype="<f8").tobytes())
        fh.write(regs.pca.eigenvalues.astype("<f8", copy=False).tobytes())
        for reg in regs.regressors:
            write_mlp_section(reg, fh)


def load_weight_regressors(path) -> WeightRegressorSet:
    with open(path, "rb") as fh:
        raw = fh.read(4)
        if len(raw) != 4:
            raise FormatError("truncated regressor file")
        (hlen,) = struct.unpack("<I", raw)
        header = json.loads(fh.read(hlen).decode("utf-8"))
        if header.get("format") != "cosim-regressors":
            raise FormatError("not a regressor file")
        d = header["pca_input_dim"]
        l = header["pca_output_dim"]
        mean = np.frombuffer(fh.read(8 * d), dtype="<f8").copy()
        components = np.frombuffer(fh.read(8 * l * d), dtype="<f8").reshape(l, d).copy()
        eigenvalues = np.frombuffer(fh.read(8 * l), dtype="<f8").copy()
        regressors = [read_mlp_section(fh) for _ in header["member_names"]]
        if fh.read(1):
            raise FormatError("trailing bytes after regressor sections")
    return WeightRegressorSet(
        pca=PcaModel(mean=mean, components=components, eigenvalues=eigenvalues),
        member_names=list(header["member_names"]),
        regressors=regressors,
    )


def save_ensemble_manifest(path, strategy: str, member_checkpoints: Sequence[str],
                           member_mode: str = "embedding",
                           pca_path: Optional[str] = None,
                           map_paths: Optional[dict] = None,
                           regressors_path: Optional[str] = None,
                           filter_threshold: Optional[float] = None,
                           filter_top_k: Optional[int] = None) -> None:
    """JSON manifest tying together the files an ensemble needs.

    Paths are stored as given; relative ones resolve against the manifest's
    directory at load time.
    """
    manifest = {
        "format": "cosim-ensemble",
        "version": 1,
        "strategy": strategy,
        "member_mode": member_mode,
        "member_checkpoints": list(member_checkpoints),
        "pca": pca_path,
        "maps": map_paths or {},
        "regressors": regressors_path,
        "filter_threshold": filter_threshold,
        "filter_top_k": filter_top_k,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, sort_keys=True, separators=(",", ":"))
        fh.write("\n")


def load_ensemble_manifest(path) -> EnsembleModel:
    from .numerics import load_pca

    with open(path, "r", encoding="utf-8") as fh:
        manifest = json.load(fh)
    if manifest.get("format") != "cosim-ensemble":
        raise FormatError("not an ensemble manifest")
    base = os.path.dirname(os.path.abspath(path))

    def resolve(p):
        return p if os.path.isabs(p) else os.path.join(base, p)

    members = [load_checkpoint(resolve(p))[0] for p in manifest["member_checkpoints"]]
    pca = load_pca(resolve(manifest["pca"])) if manifest.get("pca") else None
    maps = None
    if manifest.get("maps"):
        maps = {
            name: [load_credibility_map(resolve(p)) for p in paths]
            for name, paths in manifest["maps"].items()
        }
    regressors = None
    if manifest.get("regressors"):
        regressors = load_weight_regressors(resolve(manifest["regressors"]))
    return EnsembleModel(
        members=members,
        strategy=manifest["strategy"],
        member_mode=manifest.get("member_mode", "embedding"),
        pca=pca,
        maps=maps,
        regressors=regressors,
        filter_threshold=manifest.get("filter_threshold"),
        filter_top_k=manifest.get("filter_top_k"),
    )
