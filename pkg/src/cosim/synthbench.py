"""Synthetic worlds with controllable context structure.

Images are latent points in a cube.  Each context is a region around an
anchor point and carries its own diagonal metric; a triple's label is the
exact metric comparison in latent space, so ground truth is known.  The
observable embeddings are a fixed random rotation of the zero-padded
latents plus Gaussian noise, which hides the metric axes from any direct
inspection while keeping the geometry learnable.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .dataio import ContextCluster, DatasetBundle, EmbeddingTable, Triple
from .errors import BadConfig, FormatError

MIN_TRIPLES_PER_REF = 9


@dataclass
class WorldConfig:
    n_images: int = 4000
    latent_dim: int = 12
    embed_dim: int = 96
    n_contexts: int = 8
    context_sharpness: float = 1.6
    anchor_spread: float = 1.0
    noise_sigma: float = 0.05
    triples_per_cluster: int = 1000
    cc_val_size: int = 12000
    cc_test_size: int = 10000
    seed: int = 0

    def validate(self) -> None:
        if self.n_images < 30:
            raise BadConfig(f"n_images too small: {self.n_images}")
        if self.latent_dim < 1:
            raise BadConfig("latent_dim must be >= 1")
        if self.embed_dim < self.latent_dim:
            raise BadConfig("embed_dim must be >= latent_dim")
        if not 1 <= self.n_contexts <= self.n_images:
            raise BadConfig(f"n_contexts {self.n_contexts} out of range")
        if self.context_sharpness < 0:
            raise BadConfig("context_sharpness must be >= 0")
        if not 0.0 < self.anchor_spread <= 1.0:
            raise BadConfig("anchor_spread must be in (0, 1]")
        if self.noise_sigma < 0:
            raise BadConfig("noise_sigma must be >= 0")
        if self.triples_per_cluster < 2:
            raise BadConfig("triples_per_cluster must be >= 2")
        if self.cc_val_size < MIN_TRIPLES_PER_REF or self.cc_test_size < MIN_TRIPLES_PER_REF:
            raise BadConfig(f"CC set sizes must be >= {MIN_TRIPLES_PER_REF}")


@dataclass
class GroundTruth:
    """Everything needed to reproduce any label exactly."""

    anchors: np.ndarray          # (K, m)
    metric_weights: np.ndarray   # (K, m) positive diagonals
    rotation: np.ndarray         # (d, d) orthogonal
    ids: list                    # image ids, row-aligned with latents
    latents: np.ndarray          # (n, m)

    def latent_of(self, image_id: str) -> np.ndarray:
        return self.latents[self.ids.index(image_id)]

    def context_of(self, z) -> int:
        d2 = np.sum((self.anchors - np.asarray(z)) ** 2, axis=1)
        return int(np.argmin(d2))

    def metric_distance(self, context: int, u, v) -> float:
        diff = np.asarray(u, dtype=np.float64) - np.asarray(v, dtype=np.float64)
        return float(np.sqrt(np.sum(self.metric_weights[context] * diff * diff)))

    def label_for(self, ref_id: str, a_id: str, b_id: str,
                  context: Optional[int] = None) -> int:
        zr = self.latent_of(ref_id)
        c = self.context_of(zr) if context is None else context
        da = self.metric_distance(c, zr, self.latent_of(a_id))
        db = self.metric_distance(c, zr, self.latent_of(b_id))
        if da == db:
            raise BadConfig(f"exact metric tie for ({ref_id}, {a_id}, {b_id})")
        return -1 if da < db else 1


def _pick_anchors(rng, k: int, m: int) -> np.ndarray:
    """Farthest-point selection from a seeded candidate cloud; well spread."""
    cands = rng.uniform(-1.0, 1.0, (max(256, 8 * k), m))
    chosen = [int(np.argmax(np.sum(cands * cands, axis=1)))]
    min_d2 = np.sum((cands - cands[chosen[0]]) ** 2, axis=1)
    while len(chosen) < k:
        nxt = int(np.argmax(min_d2))
        chosen.append(nxt)
        min_d2 = np.minimum(min_d2, np.sum((cands - cands[nxt]) ** 2, axis=1))
    return cands[chosen]


def _weighted_dist(z: np.ndarray, zr: np.ndarray, w: np.ndarray) -> np.ndarray:
    diff = z - zr
    return np.sqrt(np.sum(w * diff * diff, axis=-1))


def _draw_triples(rng, latents, weights, ref_idx: int, pool: np.ndarray,
                  count: int):
    """Candidate pairs for one reference; exact metric ties are redrawn."""
    zr = latents[ref_idx]
    a = rng.choice(pool, size=count)
    while True:
        bad = a == ref_idx
        if not bad.any():
            break
        a[bad] = rng.choice(pool, size=int(bad.sum()))
    da = _weighted_dist(latents[a], zr, weights)
    b = rng.choice(pool, size=count)
    while True:
        db = _weighted_dist(latents[b], zr, weights)
        bad = (b == ref_idx) | (b == a) | (db == da)
        if not bad.any():
            break
        b[bad] = rng.choice(pool, size=int(bad.sum()))
    y = np.where(da < db, -1, 1)
    return a, b, db, y


def _ref_triple_counts(total: int, n_refs: int) -> list:
    counts = [MIN_TRIPLES_PER_REF] * n_refs
    extra = total - MIN_TRIPLES_PER_REF * n_refs
    for i in range(extra):
        counts[i % n_refs] += 1
    return counts


def generate_world(cfg: WorldConfig):
    """Build a (DatasetBundle, GroundTruth) pair from one seed.

    The CC test set draws its references and candidates from an image pool
    disjoint from everything the clusters and CC validation use.  Every CC
    reference gets at least 9 triples.
    """
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    n, m, d, k = cfg.n_images, cfg.latent_dim, cfg.embed_dim, cfg.n_contexts

    latents = rng.uniform(-1.0, 1.0, (n, m))
    # spread < 1 pulls the context anchors toward the center, which pushes
    # their nearest images (the cluster references) closer together
    anchors = cfg.anchor_spread * _pick_anchors(rng, k, m)
    metric_weights = np.exp(cfg.context_sharpness * rng.standard_normal((k, m)))
    gauss = rng.standard_normal((d, d))
    q, r = np.linalg.qr(gauss)
    rotation = q * np.sign(np.diag(r))
    padded = np.zeros((n, d))
    padded[:, :m] = latents
    embedded = padded @ rotation.T + cfg.noise_sigma * rng.standard_normal((n, d))

    ids = [f"img{i:05d}" for i in range(n)]
    table = EmbeddingTable(d)
    for i, image_id in enumerate(ids):
        table.add(image_id, embedded[i].astype(np.float32))

    n_val_refs = cfg.cc_val_size // MIN_TRIPLES_PER_REF
    n_test_refs = cfg.cc_test_size // MIN_TRIPLES_PER_REF
    perm = rng.permutation(n)
    test_pool_size = max(n_test_refs + 10, n // 3)
    if test_pool_size + n_val_refs + k >= n:
        raise BadConfig("n_images too small for the requested CC sizes")
    test_pool = np.sort(perm[:test_pool_size])
    main_pool = np.sort(perm[test_pool_size:])

    # one anchor image per context: the main-pool point nearest its anchor
    anchor_refs = []
    taken = set()
    for c in range(k):
        d2 = np.sum((latents[main_pool] - anchors[c]) ** 2, axis=1)
        for idx in np.argsort(d2):
            cand = int(main_pool[idx])
            if cand not in taken:
                anchor_refs.append(cand)
                taken.add(cand)
                break

    clusters = []
    for c in range(k):
        ref_idx = anchor_refs[c]
        a, b, _, y = _draw_triples(rng, latents, metric_weights[c], ref_idx,
                                   main_pool, cfg.triples_per_cluster)
        triples = [Triple(ids[ref_idx], ids[ai], ids[bi], int(yi))
                   for ai, bi, yi in zip(a, b, y)]
        clusters.append(ContextCluster(f"ctx{c}", ids[ref_idx], triples))

    context_of_image = np.array([
        int(np.argmin(np.sum((anchors - latents[i]) ** 2, axis=1))) for i in range(n)
    ])

    def _cc_triples(refs: np.ndarray, pool: np.ndarray, total: int) -> list:
        out = []
        counts = _ref_triple_counts(total, len(refs))
        for ref_idx, count in zip(refs, counts):
            c = context_of_image[ref_idx]
            a, b, _, y = _draw_triples(rng, latents, metric_weights[c],
                                       int(ref_idx), pool, count)
            out.extend(
                Triple(ids[int(ref_idx)], ids[ai], ids[bi], int(yi))
                for ai, bi, yi in zip(a, b, y)
            )
        return out

    val_ref_pool = np.array([i for i in main_pool if i not in taken])
    val_refs = rng.choice(val_ref_pool, size=n_val_refs, replace=False)
    cc_validation = _cc_triples(val_refs, main_pool, cfg.cc_val_size)
    test_refs = rng.choice(test_pool, size=n_test_refs, replace=False)
    cc_test = _cc_triples(test_refs, test_pool, cfg.cc_test_size)

    bundle = DatasetBundle(
        embeddings=table,
        clusters=clusters,
        cc_validation=cc_validation,
        cc_test=cc_test,
    )
    bundle.validate()
    gt = GroundTruth(
        anchors=anchors,
        metric_weights=metric_weights,
        rotation=rotation,
        ids=ids,
        latents=latents,
    )
    return bundle, gt


def save_ground_truth(gt: GroundTruth, path) -> None:
    obj = {
        "format": "cosim-ground-truth",
        "version": 1,
        "anchors": gt.anchors.tolist(),
        "metric_weights": gt.metric_weights.tolist(),
        "rotation": gt.rotation.tolist(),
        "ids": gt.ids,
        "latents": gt.latents.tolist(),
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, sort_keys=True, separators=(",", ":"))
        fh.write("\n")


def load_ground_truth(path) -> GroundTruth:
    with open(path, "r", encoding="utf-8") as fh:
        obj = json.load(fh)
    if obj.get("format") != "cosim-ground-truth":
        raise FormatError("not a ground-truth file")
    return GroundTruth(
        anchors=np.array(obj["anchors"], dtype=np.float64),
        metric_weights=np.array(obj["metric_weights"], dtype=np.float64),
        rotation=np.array(obj["rotation"], dtype=np.float64),
        ids=list(obj["ids"]),
        latents=np.array(obj["latents"], dtype=np.float64),
    )
