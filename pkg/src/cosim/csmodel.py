"""Context-sensitive ranking models.

A CsModel is a projection head (raw embedding -> projected space) plus a
2-class ranking block over [proj(ref) | proj(a) | proj(b)].  Both train
jointly on one context's triples with cross entropy plus a weighted triplet
hinge.  Inference offers two routes: cosine distance between projected
embeddings, or the ranking block evaluated in both candidate orders with
an explicit resolution rule when the two orders disagree about nothing
(both claim "first candidate closer").
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .dataio import EmbeddingTable, Triple
from .errors import BadConfig, EmptyInput, FormatError, NonFiniteGradient
from .nets import (
    ACT_IDENTITY,
    ACT_SOFTMAX,
    MlpParams,
    adam_init,
    adam_step,
    combined_batch_gradients,
    init_mlp,
    mlp_forward,
    read_mlp_section,
    write_mlp_section,
)

DECIDED_RANKING = "ranking_block"
DECIDED_CONFIDENCE = "confidence"
DECIDED_EMBEDDING = "embedding_distance"

PROJ_HIDDEN_DEFAULT = (256,)
PROJ_DIM_DEFAULT = 128
RANKING_HIDDEN_DEFAULT = (256, 64)

CHECKPOINT_FORMAT = "cosim-checkpoint"


@dataclass
class TrainConfig:
    epochs: int = 25
    batch_size: int = 8
    lr: float = 1e-4
    margin: float = 0.1
    triplet_weight: float = 0.1
    swap_augment: bool = True
    seed: int = 0

    def validate(self) -> None:
        if self.epochs < 1:
            raise BadConfig(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise BadConfig(f"batch_size must be >= 1, got {self.batch_size}")
        if not self.lr > 0:
            raise BadConfig(f"lr must be positive, got {self.lr}")
        if not self.margin > 0:
            raise BadConfig(f"margin must be positive, got {self.margin}")
        if self.triplet_weight < 0:
            raise BadConfig(f"triplet_weight must be >= 0, got {self.triplet_weight}")


@dataclass
class EpochMetrics:
    epoch: int
    mean_loss: float
    accuracy_ranking: float
    accuracy_embedding: float


@dataclass
class Prediction:
    """A resolved 2AFC decision.

    ``confidence_ab``/``confidence_ba`` are the decided-class confidences of
    the forward and candidate-swapped evaluations; ``ambiguous`` marks
    decisions the primary route could not settle on its own.
    """

    label: int
    confidence_ab: float
    confidence_ba: float
    ambiguous: bool
    decided_by: str


@dataclass
class CsModel:
    name: str
    projection: MlpParams
    ranking_block: MlpParams
    margin: float = 0.1
    trained_on: list = field(default_factory=list)


@dataclass
class ProjectedTable:
    """Projection of a whole embedding table, for vectorized evaluation."""

    index: dict
    vectors: np.ndarray   # (n, k) float64
    norms: np.ndarray     # (n,)

    def rows(self, ids: Sequence[str]) -> np.ndarray:
        return np.array([self.index[i] for i in ids], dtype=np.intp)


def train_cs_model(
    train_triples: Sequence[Triple],
    embeddings: EmbeddingTable,
    cfg: TrainConfig,
    name: str = "cs",
    trained_on: Optional[list] = None,
    proj_hidden: Sequence[int] = PROJ_HIDDEN_DEFAULT,
    proj_dim: int = PROJ_DIM_DEFAULT,
    ranking_hidden: Sequence[int] = RANKING_HIDDEN_DEFAULT,
    epoch_hook: Optional[Callable] = None,
):
    """Train a CsModel on one context's triples.

    All randomness (init, shuffling, candidate-swap augmentation) flows from
    ``cfg.seed`` through a single generator in a fixed call order, so equal
    inputs give bit-identical parameters.  ``epoch_hook(epoch, model,
    metrics)`` fires after every epoch with the live model.

    Returns (model, history) where history is a list of EpochMetrics.
    """
    cfg.validate()
    if not train_triples:
        raise EmptyInput("no training triples")
    d = embeddings.dim

    ids: list = []
    seen = set()
    for t in train_triples:
        for image_id in (t.ref, t.a, t.b):
            if image_id not in seen:
                seen.add(image_id)
                ids.append(image_id)
    x = embeddings.matrix(order=ids)
    row = {image_id: i for i, image_id in enumerate(ids)}
    ir = np.array([row[t.ref] for t in train_triples], dtype=np.intp)
    ia = np.array([row[t.a] for t in train_triples], dtype=np.intp)
    ib = np.array([row[t.b] for t in train_triples], dtype=np.intp)
    y = np.array([t.y for t in train_triples], dtype=np.float64)
    n = len(train_triples)

    rng = np.random.default_rng(cfg.seed)
    projection = init_mlp([d, *proj_hidden, proj_dim], ACT_IDENTITY, rng)
    ranking = init_mlp([3 * proj_dim, *ranking_hidden, 2], ACT_SOFTMAX, rng)
    model = CsModel(
        name=name,
        projection=projection,
        ranking_block=ranking,
        margin=cfg.margin,
        trained_on=list(trained_on) if trained_on is not None else [name],
    )
    st_proj = adam_init(projection)
    st_rank = adam_init(ranking)

    history = []
    for epoch in range(1, cfg.epochs + 1):
        perm = rng.permutation(n)
        if cfg.swap_augment:
            flips = rng.random(n) < 0.5
        else:
            flips = np.zeros(n, dtype=bool)
        loss_sum = 0.0
        for start in range(0, n, cfg.batch_size):
            sel = perm[start : start + cfg.batch_size]
            fl = flips[start : start + cfg.batch_size]
            a_idx = np.where(fl, ib[sel], ia[sel])
            b_idx = np.where(fl, ia[sel], ib[sel])
            yy = np.where(fl, -y[sel], y[sel])
            loss, g_proj, g_rank = combined_batch_gradients(
                projection, ranking, x[ir[sel]], x[a_idx], x[b_idx], yy,
                cfg.margin, cfg.triplet_weight,
            )
            if not np.isfinite(loss):
                raise NonFiniteGradient(f"non-finite loss at epoch {epoch}")
            adam_step(projection, g_proj, st_proj, cfg.lr)
            adam_step(ranking, g_rank, st_rank, cfg.lr)
            loss_sum += loss * len(sel)

        metrics = _epoch_metrics(epoch, loss_sum / n, model, x, ir, ia, ib, y)
        history.append(metrics)
        if epoch_hook is not None:
            epoch_hook(epoch, model, metrics)
    return model, history


def _epoch_metrics(epoch, mean_loss, model, x, ir, ia, ib, y):
    er = mlp_forward(model.projection, x)
    u = np.concatenate([er[ir], er[ia], er[ib]], axis=1)
    probs = mlp_forward(model.ranking_block, u)
    pred_rank = np.where(probs[:, 0] > probs[:, 1], -1.0, 1.0)
    norms = np.sqrt(np.sum(er * er, axis=1))
    dots_a = np.sum(er[ir] * er[ia], axis=1)
    dots_b = np.sum(er[ir] * er[ib], axis=1)
    d_ra = 1.0 - dots_a / (norms[ir] * norms[ia])
    d_rb = 1.0 - dots_b / (norms[ir] * norms[ib])
    pred_emb = np.where(d_ra < d_rb, -1.0, 1.0)
    return EpochMetrics(
        epoch=epoch,
        mean_loss=float(mean_loss),
        accuracy_ranking=float(np.mean(pred_rank == y)),
        accuracy_embedding=float(np.mean(pred_emb == y)),
    )


# ---------------------------------------------------------------------------
# inference

def _project_one(model: CsModel, embeddings: EmbeddingTable, image_id: str) -> np.ndarray:
    return mlp_forward(model.projection, embeddings.vector(image_id).astype(np.float64))


def predict_by_embedding(model: CsModel, triple: Triple, embeddings: EmbeddingTable) -> Prediction:
    """Rank by cosine distance in projected space.

    An exact distance tie resolves to +1 and is marked ambiguous.  The
    confidence is the relative distance margin mapped into [0.5, 1]; it is
    the same for both candidate orders.
    """
    from .numerics import cosine_distance

    er = _project_one(model, embeddings, triple.ref)
    ea = _project_one(model, embeddings, triple.a)
    eb = _project_one(model, embeddings, triple.b)
    d_ra = cosine_distance(er, ea)
    d_rb = cosine_distance(er, eb)
    if d_ra == d_rb:
        return Prediction(1, 0.5, 0.5, True, DECIDED_EMBEDDING)
    conf = 0.5 + 0.5 * abs(d_ra - d_rb) / (d_ra + d_rb)
    return Prediction(-1 if d_ra < d_rb else 1, conf, conf, False, DECIDED_EMBEDDING)


def predict_by_ranking_block(model: CsModel, triple: Triple, embeddings: EmbeddingTable) -> Prediction:
    """Evaluate the ranking block in both candidate orders and reconcile.

    If the swapped run negates the forward run the decision stands as-is.
    If both runs make the same raw claim, the higher-confidence run wins
    (its prediction translated back to the original order); equal
    confidences fall back to embedding distance.
    """
    er = _project_one(model, embeddings, triple.ref)
    ea = _project_one(model, embeddings, triple.a)
    eb = _project_one(model, embeddings, triple.b)
    p = mlp_forward(model.ranking_block, np.concatenate([er, ea, eb]))
    q = mlp_forward(model.ranking_block, np.concatenate([er, eb, ea]))
    raw_fwd = -1 if p[0] > p[1] else 1
    raw_sw = -1 if q[0] > q[1] else 1
    conf_fwd = float(p.max())
    conf_sw = float(q.max())
    if raw_sw == -raw_fwd:
        return Prediction(raw_fwd, conf_fwd, conf_sw, False, DECIDED_RANKING)
    if conf_fwd > conf_sw:
        return Prediction(raw_fwd, conf_fwd, conf_sw, True, DECIDED_CONFIDENCE)
    if conf_sw > conf_fwd:
        return Prediction(-raw_sw, conf_fwd, conf_sw, True, DECIDED_CONFIDENCE)
    fallback = predict_by_embedding(model, triple, embeddings)
    return Prediction(fallback.label, conf_fwd, conf_sw, True, DECIDED_EMBEDDING)


def predict(model: CsModel, triple: Triple, embeddings: EmbeddingTable, mode: str) -> Prediction:
    if mode == "embedding":
        return predict_by_embedding(model, triple, embeddings)
    if mode == "ranking":
        return predict_by_ranking_block(model, triple, embeddings)
    raise BadConfig(f"unknown prediction mode {mode!r}")


def project_table(model: CsModel, embeddings: EmbeddingTable) -> ProjectedTable:
    ids = embeddings.ids()
    vectors = mlp_forward(model.projection, embeddings.matrix())
    norms = np.sqrt(np.sum(vectors * vectors, axis=1))
    return ProjectedTable(
        index={image_id: i for i, image_id in enumerate(ids)},
        vectors=vectors,
        norms=norms,
    )


def predict_batch(
    model: CsModel,
    triples: Sequence[Triple],
    embeddings: EmbeddingTable,
    mode: str = "embedding",
    projected: Optional[ProjectedTable] = None,
):
    """Vectorized prediction over many triples.

    Returns (labels, conf_ab, conf_ba) arrays mirroring the per-triple
    rules, including tie handling and the ranking-mode resolution chain.
    """
    if not triples:
        raise EmptyInput("no triples to predict")
    pt = projected if projected is not None else project_table(model, embeddings)
    ir = pt.rows([t.ref for t in triples])
    ia = pt.rows([t.a for t in triples])
    ib = pt.rows([t.b for t in triples])
    vec, norms = pt.vectors, pt.norms

    d_ra = 1.0 - np.sum(vec[ir] * vec[ia], axis=1) / (norms[ir] * norms[ia])
    d_rb = 1.0 - np.sum(vec[ir] * vec[ib], axis=1) / (norms[ir] * norms[ib])
    emb_labels = np.where(d_ra < d_rb, -1, 1).astype(np.int64)
    denom = d_ra + d_rb
    emb_conf = np.where(
        denom > 0.0, 0.5 + 0.5 * np.abs(d_ra - d_rb) / np.where(denom > 0.0, denom, 1.0), 0.5
    )
    emb_conf = np.where(d_ra == d_rb, 0.5, emb_conf)
    if mode == "embedding":
        return emb_labels, emb_conf, emb_conf.copy()
    if mode != "ranking":
        raise BadConfig(f"unknown prediction mode {mode!r}")

    p = mlp_forward(model.ranking_block, np.concatenate([vec[ir], vec[ia], vec[ib]], axis=1))
    q = mlp_forward(model.ranking_block, np.concatenate([vec[ir], vec[ib], vec[ia]], axis=1))
    raw_fwd = np.where(p[:, 0] > p[:, 1], -1, 1).astype(np.int64)
    raw_sw = np.where(q[:, 0] > q[:, 1], -1, 1).astype(np.int64)
    conf_fwd = p.max(axis=1)
    conf_sw = q.max(axis=1)
    labels = raw_fwd.copy()
    ambiguous = raw_sw != -raw_fwd
    swap_wins = ambiguous & (conf_sw > conf_fwd)
    labels[swap_wins] = -raw_sw[swap_wins]
    undecided = ambiguous & (conf_sw == conf_fwd)
    labels[undecided] = emb_labels[undecided]
    return labels, conf_fwd, conf_sw


# ---------------------------------------------------------------------------
# checkpoints

def save_checkpoint(model: CsModel, path, metrics: Optional[dict] = None,
                    config: Optional[TrainConfig] = None) -> None:
    """Header JSON (length-prefixed) followed by two network sections."""
    header = {
        "format": CHECKPOINT_FORMAT,
        "version": 1,
        "name": model.name,
        "margin": model.margin,
        "trained_on": model.trained_on,
        "metrics": metrics or {},
        "config": asdict(config) if config is not None else {},
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        write_mlp_section(model.projection, fh)
        write_mlp_section(model.ranking_block, fh)


def load_checkpoint(path):
    """Returns (model, header dict)."""
    with open(path, "rb") as fh:
        raw = fh.read(4)
        if len(raw) != 4:
            raise FormatError("truncated checkpoint header")
        (hlen,) = struct.unpack("<I", raw)
        blob = fh.read(hlen)
        if len(blob) != hlen:
            raise FormatError("truncated checkpoint header")
        header = json.loads(blob.decode("utf-8"))
        if header.get("format") != CHECKPOINT_FORMAT:
            raise FormatError(f"not a checkpoint file: {header.get('format')!r}")
        projection = read_mlp_section(fh)
        ranking = read_mlp_section(fh)
        trailing = fh.read(1)
    if trailing:
        raise FormatError("trailing bytes after checkpoint sections")
    model = CsModel(
        name=header["name"],
        projection=projection,
        ranking_block=ranking,
        margin=float(header["margin"]),
        trained_on=list(header["trained_on"]),
    )
    return model, header
