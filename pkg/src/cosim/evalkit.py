"""Evaluation machinery: 2AFC accuracy, symmetry diagnostics, model-vs-context
cross-validation, ensemble combination sweeps, leave-one-out ablations and
per-epoch training traces exported as plottable grids."""

from __future__ import annotations

import csv
import itertools
import logging
import os
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .csmodel import CsModel, predict, predict_batch, project_table
from .dataio import ContextCluster, EmbeddingTable, Triple
from .errors import BadConfig, EmptyInput
from .nets import mlp_forward
from .numerics import PcaModel, pca_transform
from .seeding import derive_seed

log = logging.getLogger("cosim.evalkit")

TRACE_RESOLUTION_DEFAULT = 50


@dataclass
class EvalReport:
    """Accuracy with per-reference tallies; symmetry fields are optional."""

    accuracy: float
    n: int
    per_reference: dict
    mean_symmetry_score: Optional[float] = None
    symmetry_accuracy: Optional[float] = None

    def to_json_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "n": self.n,
            "per_reference": {k: list(v) for k, v in self.per_reference.items()},
            "mean_symmetry_score": self.mean_symmetry_score,
            "symmetry_accuracy": self.symmetry_accuracy,
        }


def report_from_labels(triples: Sequence[Triple], labels) -> EvalReport:
    """Assemble an EvalReport from predicted labels aligned with triples."""
    if len(triples) == 0:
        raise EmptyInput("no triples to score")
    labels = np.asarray(labels)
    per_reference: dict = {}
    correct_total = 0
    for t, pred in zip(triples, labels):
        ok = int(pred) == t.y
        correct_total += ok
        c, n = per_reference.get(t.ref, (0, 0))
        per_reference[t.ref] = (c + ok, n + 1)
    return EvalReport(
        accuracy=correct_total / len(triples),
        n=len(triples),
        per_reference=per_reference,
    )


def accuracy_2afc(predict_fn: Callable, triples: Sequence[Triple],
                  embeddings: EmbeddingTable) -> EvalReport:
    """Score ``predict_fn(triple, embeddings)`` over a triple set.

    The callable may return a Prediction or a bare -1/+1 label.
    """
    if len(triples) == 0:
        raise EmptyInput("no triples to score")
    labels = []
    for t in triples:
        out = predict_fn(t, embeddings)
        labels.append(getattr(out, "label", out))
    return report_from_labels(triples, labels)


# ---------------------------------------------------------------------------
# symmetry diagnostics

def symmetry_score(model: CsModel, triple: Triple, embeddings: EmbeddingTable,
                   mode: str = "ranking") -> float:
    """|O(r,a,b) * M(r,a,b) + O(r,b,a) * M(r,b,a)|, in [0, 2].

    O is the decided-class confidence of each single evaluation and M the
    full model's signed prediction for that candidate order.  A perfectly
    antisymmetric model scores 0; a constant one scores twice its
    confidence.
    """
    swapped = triple.swapped()
    if mode == "ranking":
        er = mlp_forward(model.projection, embeddings.vector(triple.ref).astype(np.float64))
        ea = mlp_forward(model.projection, embeddings.vector(triple.a).astype(np.float64))
        eb = mlp_forward(model.projection, embeddings.vector(triple.b).astype(np.float64))
        p = mlp_forward(model.ranking_block, np.concatenate([er, ea, eb]))
        q = mlp_forward(model.ranking_block, np.concatenate([er, eb, ea]))
        o_fwd, o_swp = float(p.max()), float(q.max())
    else:
        o_fwd = predict(model, triple, embeddings, mode).confidence_ab
        o_swp = predict(model, swapped, embeddings, mode).confidence_ab
    m_fwd = predict(model, triple, embeddings, mode).label
    m_swp = predict(model, swapped, embeddings, mode).label
    return abs(o_fwd * m_fwd + o_swp * m_swp)


def symmetry_accuracy(predict_fn: Callable, triples: Sequence[Triple],
                      embeddings: EmbeddingTable) -> float:
    """Accuracy over the swap-augmented set (originals plus swapped copies)."""
    augmented = list(triples) + [t.swapped() for t in triples]
    return accuracy_2afc(predict_fn, augmented, embeddings).accuracy


def evaluate_model(model: CsModel, triples: Sequence[Triple],
                   embeddings: EmbeddingTable, mode: str = "embedding") -> EvalReport:
    """Full report for one model: accuracy plus the symmetry diagnostics."""
    if len(triples) == 0:
        raise EmptyInput("no triples to score")
    pt = project_table(model, embeddings)
    swapped = [t.swapped() for t in triples]
    labels_f, conf_f, _ = predict_batch(model, triples, embeddings, mode, projected=pt)
    labels_s, conf_s, _ = predict_batch(model, swapped, embeddings, mode, projected=pt)
    report = report_from_labels(triples, labels_f)
    scores = np.abs(conf_f * labels_f + conf_s * labels_s)
    report.mean_symmetry_score = float(np.mean(scores))
    y = np.array([t.y for t in triples])
    hits = int(np.sum(labels_f == y)) + int(np.sum(labels_s == -y))
    report.symmetry_accuracy = hits / (2 * len(triples))
    return report


# ---------------------------------------------------------------------------
# cross-validation

@dataclass
class CrossValMatrix:
    model_names: list
    cluster_names: list
    cells: np.ndarray            # (n_models, n_clusters)
    diag_cols: list              # per model: matching cluster column or None

    def row_average(self, i: int, skip_diagonal: bool = False) -> float:
        row = self.cells[i]
        if skip_diagonal and self.diag_cols[i] is not None:
            mask = np.ones(len(row), dtype=bool)
            mask[self.diag_cols[i]] = False
            row = row[mask]
        return float(np.mean(row))

    def column_average(self, j: int, skip_diagonal: bool = False) -> float:
        col = self.cells[:, j]
        if skip_diagonal:
            keep = [i for i in range(len(col)) if self.diag_cols[i] != j]
            if keep:
                col = col[keep]
        return float(np.mean(col))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["model", *self.cluster_names, "avg", "avg_wo_diagonal"])
            for i, name in enumerate(self.model_names):
                writer.writerow(
                    [name, *[repr(v) for v in self.cells[i]],
                     repr(self.row_average(i)), repr(self.row_average(i, True))]
                )
            writer.writerow(
                ["Average", *[repr(self.column_average(j)) for j in range(len(self.cluster_names))], "", ""]
            )
            writer.writerow(
                ["Average wo diagonal",
                 *[repr(self.column_average(j, True)) for j in range(len(self.cluster_names))], "", ""]
            )


def _diagonal_column(model: CsModel, cluster_names: Sequence[str]) -> Optional[int]:
    # A model "belongs" to the cluster it was trained on (single source only).
    if len(model.trained_on) == 1 and model.trained_on[0] in cluster_names:
        return list(cluster_names).index(model.trained_on[0])
    if model.name in cluster_names:
        return list(cluster_names).index(model.name)
    return None


def cross_validation(models: Sequence[CsModel], clusters: Sequence[ContextCluster],
                     embeddings: EmbeddingTable, mode: str = "embedding") -> CrossValMatrix:
    """Accuracy of every model on every cluster's triples."""
    if not models or not clusters:
        raise EmptyInput("cross_validation needs models and clusters")
    cluster_names = [c.name for c in clusters]
    cells = np.zeros((len(models), len(clusters)))
    for i, model in enumerate(models):
        pt = project_table(model, embeddings)
        for j, cluster in enumerate(clusters):
            labels, _, _ = predict_batch(model, cluster.triples, embeddings,
                                         mode, projected=pt)
            y = np.array([t.y for t in cluster.triples])
            cells[i, j] = float(np.mean(labels == y))
    diag_cols = [_diagonal_column(m, cluster_names) for m in models]
    return CrossValMatrix([m.name for m in models], cluster_names, cells, diag_cols)


# ---------------------------------------------------------------------------
# combination sweep and leave-one-out

@dataclass
class SweepStrategy:
    """A named ensemble recipe for subset sweeps.

    ``build(members, seed)`` returns something the evaluate callable accepts;
    deterministic strategies are called once per subset with seed None,
    stochastic ones ``repeats`` times with derived seeds.
    """

    name: str
    build: Callable
    stochastic: bool = False


@dataclass
class SweepRow:
    r: int
    combination: tuple
    strategy: str
    repeat: int
    accuracy: float


def _default_evaluate(ensemble, triples, embeddings):
    from .ensemble import evaluate_ensemble

    return evaluate_ensemble(ensemble, triples, embeddings)


def combination_sweep(
    models: Sequence[CsModel],
    strategies: Sequence[SweepStrategy],
    test_triples: Sequence[Triple],
    embeddings: EmbeddingTable,
    r_values: Optional[Sequence[int]] = None,
    repeats: int = 3,
    base_seed: int = 0,
    evaluate: Optional[Callable] = None,
) -> list:
    """Evaluate every size-r member subset under every strategy.

    Stochastic strategies repeat with seeds derived from (base_seed, repeat
    index); the seeds are shared across subsets so repeat k is one coherent
    experiment.  Returns SweepRow records in enumeration order.
    """
    if not models:
        raise EmptyInput("no models to sweep")
    if repeats < 1:
        raise BadConfig(f"repeats must be >= 1, got {repeats}")
    evaluate = evaluate or _default_evaluate
    n = len(models)
    if r_values is None:
        r_values = range(1, n + 1)
    rows = []
    for r in r_values:
        if not 1 <= r <= n:
            raise BadConfig(f"subset size {r} outside [1, {n}]")
        for subset in itertools.combinations(range(n), r):
            members = [models[i] for i in subset]
            combo = tuple(m.name for m in members)
            for strategy in strategies:
                if strategy.stochastic:
                    for k in range(repeats):
                        seed = derive_seed(base_seed, f"sweep:{strategy.name}:{k}")
                        ens = strategy.build(members, seed)
                        acc = evaluate(ens, test_triples, embeddings).accuracy
                        rows.append(SweepRow(r, combo, strategy.name, k, acc))
                else:
                    ens = strategy.build(members, None)
                    acc = evaluate(ens, test_triples, embeddings).accuracy
                    rows.append(SweepRow(r, combo, strategy.name, 0, acc))
    return rows


def write_sweep_csv(rows: Sequence[SweepRow], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["r", "combination", "strategy", "repeat", "accuracy"])
        for row in rows:
            writer.writerow(
                [row.r, "+".join(row.combination), row.strategy, row.repeat, repr(row.accuracy)]
            )


@dataclass
class LeaveOneOutRow:
    left_out: str
    cluster_accuracy: dict
    test_accuracy: float


def leave_one_out(
    models: Sequence[CsModel],
    builder: Callable,
    clusters: Sequence[ContextCluster],
    test_triples: Sequence[Triple],
    embeddings: EmbeddingTable,
    evaluate: Optional[Callable] = None,
) -> list:
    """Drop each model in turn, rebuild the ensemble, score everywhere."""
    if len(models) < 2:
        raise EmptyInput("leave-one-out needs at least 2 models")
    evaluate = evaluate or _default_evaluate
    rows = []
    for i, dropped in enumerate(models):
        members = [m for j, m in enumerate(models) if j != i]
        ens = builder(members)
        cluster_accuracy = {
            c.name: evaluate(ens, c.triples, embeddings).accuracy for c in clusters
        }
        rows.append(
            LeaveOneOutRow(
                left_out=dropped.name,
                cluster_accuracy=cluster_accuracy,
                test_accuracy=evaluate(ens, test_triples, embeddings).accuracy,
            )
        )
    return rows


def write_leave_one_out_csv(rows: Sequence[LeaveOneOutRow], cluster_names, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["left_out", *cluster_names, "test"])
        for row in rows:
            writer.writerow(
                [row.left_out,
                 *[repr(row.cluster_accuracy[name]) for name in cluster_names],
                 repr(row.test_accuracy)]
            )


# ---------------------------------------------------------------------------
# training traces

class TrainingTrace:
    """Epoch hook that dumps validation accuracy over a 2-D feature grid.

    Bins every validation triple by its reference's first two principal
    coordinates (bounds fixed from the validation set), recounts per epoch
    and writes ``epoch_NNN.csv`` files plus a running ``accuracy.csv``.
    """

    def __init__(self, triples: Sequence[Triple], embeddings: EmbeddingTable,
                 pca: PcaModel, out_dir, resolution: int = TRACE_RESOLUTION_DEFAULT,
                 mode: str = "embedding", axes=(0, 1)):
        if len(triples) == 0:
            raise EmptyInput("training trace needs validation triples")
        if resolution < 1:
            raise BadConfig(f"resolution must be >= 1, got {resolution}")
        if len(axes) != 2:
            raise BadConfig("trace axes must name exactly 2 feature dims")
        self.triples = list(triples)
        self.embeddings = embeddings
        self.out_dir = out_dir
        self.resolution = resolution
        self.mode = mode
        self.y = np.array([t.y for t in self.triples])
        feats = pca_transform(pca, embeddings.matrix(order=[t.ref for t in self.triples]))
        coords = feats[:, list(axes)]
        lo = coords.min(axis=0)
        hi = coords.max(axis=0)
        width = np.where(hi > lo, hi - lo, 1.0)
        idx = np.clip(((coords - lo) / width * resolution).astype(np.intp), 0, resolution - 1)
        self.cell_x = idx[:, 0]
        self.cell_y = idx[:, 1]
        self.epoch_accuracy: list = []
        os.makedirs(out_dir, exist_ok=True)

    def __call__(self, epoch: int, model: CsModel, metrics=None) -> None:
        labels, _, _ = predict_batch(model, self.triples, self.embeddings, self.mode)
        ok = labels == self.y
        res = self.resolution
        correct = np.zeros((res, res), dtype=np.int64)
        total = np.zeros((res, res), dtype=np.int64)
        np.add.at(total, (self.cell_x, self.cell_y), 1)
        np.add.at(correct, (self.cell_x, self.cell_y), ok.astype(np.int64))
        path = os.path.join(self.out_dir, f"epoch_{epoch:03d}.csv")
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["x_bin", "y_bin", "correct", "total"])
            for xb, yb in zip(*np.nonzero(total)):
                writer.writerow([int(xb), int(yb), int(correct[xb, yb]), int(total[xb, yb])])
        self.epoch_accuracy.append((epoch, float(np.mean(ok))))
        with open(os.path.join(self.out_dir, "accuracy.csv"), "w", newline="",
                  encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["epoch", "accuracy"])
            for ep, acc in self.epoch_accuracy:
                writer.writerow([ep, repr(acc)])
