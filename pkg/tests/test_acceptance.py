"""Release gates, one test per numbered criterion.

The terminal summary prints a per-criterion PASS/FAIL line (see the hook in
conftest).  Everything here re-derives its expectation from an independent
route: finite differences for gradients, numpy's eigensolver for the PCA,
pure-python recounts for the maps, exhaustive enumeration for the cycles,
and byte comparisons for the serialization gates.
"""

import csv
import json
import math
import time

import numpy as np
import pytest

from conftest import (
    cycle_edge_oracle,
    diag_model,
    eigh_pca_oracle,
    make_table,
    max_rel_error,
    numeric_param_grads,
)
from cosim.benchmark import CHECK_NAMES, BenchmarkConfig, run_benchmark
from cosim.cli import entry
from cosim.csmodel import CsModel, load_checkpoint, predict, save_checkpoint
from cosim.dataio import (
    EmbeddingTable,
    Triple,
    detect_preference_cycles,
    load_embedding_table,
    write_embedding_table,
)
from cosim.ensemble import (
    STRATEGY_MAJORITY,
    STRATEGY_REGRESSOR,
    build_credibility_map,
    load_credibility_map,
    save_credibility_map,
)
from cosim.evalkit import symmetry_score
from cosim.nets import (
    ACT_IDENTITY,
    ACT_SOFTMAX,
    MlpParams,
    combined_batch_gradients,
    init_mlp,
    mlp_forward,
    triplet_loss,
)
from cosim.numerics import pca_fit, pca_transform


# ---------------------------------------------------------------------------
# 1. analytic gradients against central finite differences

def _nonzero_batch(rng, proj):
    # a batch row whose hidden units all die projects to the zero vector,
    # which is outside the cosine domain; redraw those
    while True:
        x = rng.standard_normal((3, 4))
        out = np.stack([mlp_forward(proj, row) for row in x])
        if np.all(np.linalg.norm(out, axis=1) > 0.0):
            return x


def test_criterion_1_gradient_check():
    start = time.perf_counter()
    worst = 0.0
    for seed in range(10):
        rng = np.random.default_rng(seed)
        proj = init_mlp([4, 6, 3], ACT_IDENTITY, rng)
        rank = init_mlp([9, 5, 2], ACT_SOFTMAX, rng)
        xr = _nonzero_batch(rng, proj)
        xa = _nonzero_batch(rng, proj)
        xb = _nonzero_batch(rng, proj)
        y = np.where(rng.random(3) < 0.5, -1, 1)
        _, pg, rg = combined_batch_gradients(proj, rank, xr, xa, xb, y, 0.1, 0.1)
        (npw, npb), (nrw, nrb) = numeric_param_grads(
            proj, rank, xr, xa, xb, y, 0.1, 0.1, h=1e-4)
        worst = max(
            worst,
            max_rel_error(pg.weights, npw),
            max_rel_error(pg.biases, npb),
            max_rel_error(rg.weights, nrw),
            max_rel_error(rg.biases, nrb),
        )
    assert worst <= 1e-3
    assert time.perf_counter() - start < 30.0


# ---------------------------------------------------------------------------
# 2. PCA against a brute-force covariance eigendecomposition

def test_criterion_2_pca_oracle():
    start = time.perf_counter()
    for seed in range(20):
        rng = np.random.default_rng(100 + seed)
        data = rng.standard_normal((50, 8)) * rng.uniform(0.5, 3.0, size=8)
        model = pca_fit(data, 8)
        _, want_vals, _ = eigh_pca_oracle(data, 8)
        np.testing.assert_allclose(model.eigenvalues, want_vals, rtol=0, atol=1e-8)
        transformed = pca_transform(model, data)
        np.testing.assert_allclose(
            np.var(transformed, axis=0, ddof=1), want_vals, rtol=0, atol=1e-8)
        gram = model.components @ model.components.T
        assert np.max(np.abs(gram - np.eye(8))) <= 1e-10
    assert time.perf_counter() - start < 10.0


# ---------------------------------------------------------------------------
# 3. credibility map counts against a per-triple recount

def _recount(model, triples, table, pca, dim_indices, resolution):
    # same grid arithmetic, but per triple in plain python with a scalar
    # predict call per row instead of the vectorized batch path
    feats = pca_transform(pca, table.matrix(order=[t.ref for t in triples]))
    coords = feats[:, list(dim_indices)]
    bounds = [(float(coords[:, k].min()), float(coords[:, k].max()))
              for k in range(coords.shape[1])]
    shape = (resolution,) * len(dim_indices)
    correct = np.zeros(shape, dtype=np.int64)
    total = np.zeros(shape, dtype=np.int64)
    for i, t in enumerate(triples):
        cell = []
        for k, (lo, hi) in enumerate(bounds):
            width = hi - lo if hi > lo else 1.0
            frac = (float(coords[i, k]) - lo) / width
            cell.append(min(max(int(frac * resolution), 0), resolution - 1))
        total[tuple(cell)] += 1
        if predict(model, t, table, "embedding").label == t.y:
            correct[tuple(cell)] += 1
    return bounds, correct, total


def test_criterion_3_map_recount():
    rng = np.random.default_rng(7)
    ids = [f"i{k}" for k in range(60)]
    table = EmbeddingTable(6)
    for image_id in ids:
        table.add(image_id, rng.standard_normal(6))
    triples = []
    for _ in range(2000):
        ref, a, b = (str(x) for x in rng.choice(ids, size=3, replace=False))
        triples.append(Triple(ref, a, b, -1 if rng.random() < 0.5 else 1))
    pca = pca_fit(np.array([table.vector(i) for i in ids]), 3)
    models = [
        diag_model(6, rng.uniform(0.2, 3.0, size=6), name="d0"),
        CsModel("m1", init_mlp([6, 4], ACT_IDENTITY, rng),
                init_mlp([12, 5, 2], ACT_SOFTMAX, rng)),
    ]
    for model in models:
        for resolution in (10, 200):
            for axes in ((0, 1), (0,)):
                built = build_credibility_map(
                    model, triples, table, pca, axes, resolution)
                bounds, correct, total = _recount(
                    model, triples, table, pca, axes, resolution)
                assert built.bounds == bounds
                assert np.array_equal(built.correct, correct)
                assert np.array_equal(built.total, total)
                assert int(built.total.sum()) == len(triples)


# ---------------------------------------------------------------------------
# 4. cycle flags against exhaustive enumeration

def test_criterion_4_cycle_cleaning():
    names = [f"c{k}" for k in range(8)]
    for seed in range(200):
        rng = np.random.default_rng(1000 + seed)
        n = int(rng.integers(3, 9))
        triples = []
        for _ in range(int(rng.integers(2, 14))):
            i, j = rng.choice(n, size=2, replace=False)
            triples.append(
                Triple("r", names[i], names[j], -1 if rng.random() < 0.5 else 1))
        flagged = detect_preference_cycles(triples)
        assert flagged == cycle_edge_oracle(triples)
        cleaned = [t for t in triples if t not in flagged]
        assert detect_preference_cycles(cleaned) == set()


# ---------------------------------------------------------------------------
# 5. triplet hinge on the orthogonal fixture, exact values

def test_criterion_5_triplet_fixtures():
    e_r = np.array([1.0, 0.0])
    e_a = np.array([1.0, 0.0])
    e_b = np.array([0.0, 1.0])
    # d_ra = 0 and d_rb = 1 are exact, and 0.1 + 1.0 rounds to the same
    # double as the literal 1.1, so both sides hold with plain equality
    assert triplet_loss(e_r, e_a, e_b, -1, 0.1) == 0.0
    assert triplet_loss(e_r, e_a, e_b, 1, 0.1) == 1.1


# ---------------------------------------------------------------------------
# 6. symmetry score fixtures

def _block_model(weights, biases, dim=2, name="m"):
    proj = MlpParams([dim, dim], [np.eye(dim)], [np.zeros(dim)], ACT_IDENTITY)
    rank = MlpParams([3 * dim, 2], [np.asarray(weights, dtype=np.float64)],
                     [np.asarray(biases, dtype=np.float64)], ACT_SOFTMAX)
    return CsModel(name, proj, rank)


def test_criterion_6_symmetry_fixtures():
    rng = np.random.default_rng(2)
    u, v, wr = rng.standard_normal((3, 2))
    w = np.array([np.concatenate([wr, u, v]), np.concatenate([wr, v, u])])
    antisymmetric = _block_model(w, np.zeros(2))
    # swapping the candidates permutes the summands of each logit, so the
    # cancellation is only exact up to dot-product rounding
    for _ in range(20):
        table = make_table(2, {k: rng.standard_normal(2) for k in "rab"})
        score = symmetry_score(antisymmetric, Triple("r", "a", "b", 1), table)
        assert abs(score) <= 1e-12

    constant = _block_model(np.zeros((2, 6)), [math.log(4.0), 0.0])
    table = make_table(2, {"r": [1.0, 0.5], "a": [0.25, 1.0], "b": [0.25, 1.0]})
    score = symmetry_score(constant, Triple("r", "a", "b", 1), table)
    assert score == pytest.approx(1.6, abs=1e-12)


# ---------------------------------------------------------------------------
# 7. synthetic benchmark orderings, five seeds, single-threaded

@pytest.mark.slow
def test_criterion_7_benchmark_orderings():
    start = time.perf_counter()
    report = run_benchmark(range(5), BenchmarkConfig(), verbose=False)
    elapsed = time.perf_counter() - start

    seeds = report["seeds"]
    assert len(seeds) == 5
    for seed_result in seeds:
        # the specialist and global orderings must hold in every seed, not
        # just on average
        assert seed_result["checks"]["specialists_beat_transfer"]
        assert seed_result["checks"]["global_below_regressor_ensemble"]
    assert report["checks_all_seeds"] == {name: True for name in CHECK_NAMES}

    reg = float(np.mean(
        [s["ensemble_test_accuracy"][STRATEGY_REGRESSOR] for s in seeds]))
    maj = float(np.mean(
        [s["ensemble_test_accuracy"][STRATEGY_MAJORITY] for s in seeds]))
    best_single = max(
        float(np.mean([s["member_test_accuracy"][name] for s in seeds]))
        for name in seeds[0]["member_test_accuracy"])
    global_mean = float(np.mean([s["global_test_accuracy"] for s in seeds]))
    by_r = [{int(r): v for r, v in s["sweep_mean_by_r"].items()} for s in seeds]
    r_lo, r_hi = min(by_r[0]), max(by_r[0])
    assert r_lo == 1 and r_hi == 8
    assert reg >= maj and reg >= best_single
    assert global_mean <= reg
    assert np.mean([d[r_hi] for d in by_r]) >= np.mean([d[r_lo] for d in by_r])

    assert report["passed"] is True
    assert elapsed < 900.0


# ---------------------------------------------------------------------------
# 8. determinism and byte round-trips

@pytest.fixture(scope="module")
def eight_clusters(tmp_path_factory):
    """A generated world with eight clusters plus one checkpoint per cluster."""
    base = tmp_path_factory.mktemp("accept")
    world = base / "world"
    synth_cfg = base / "synth.json"
    synth_cfg.write_text(json.dumps({
        "seed": 1,
        "world": {
            "n_images": 240, "latent_dim": 4, "embed_dim": 16, "n_contexts": 8,
            "context_sharpness": 2.0, "noise_sigma": 0.02,
            "triples_per_cluster": 30, "cc_val_size": 54, "cc_test_size": 36,
            "seed": 1,
        },
    }))
    assert entry(["synth", "--config", str(synth_cfg), "--out", str(world)]) == 0

    names = [f"ctx{k}" for k in range(8)]
    run_cfg = base / "config.json"
    run_cfg.write_text(json.dumps({
        "seed": 1,
        "data": {
            "embeddings": str(world / "embeddings.cseb"),
            "clusters": {n: str(world / "clusters" / f"{n}.jsonl") for n in names},
            "cc_validation": str(world / "cc_validation.jsonl"),
            "cc_test": str(world / "cc_test.jsonl"),
        },
        "train": {"epochs": 1, "batch_size": 16, "lr": 0.0003,
                  "triplet_weight": 1.0},
        "model": {"proj_hidden": [16], "proj_dim": 8, "ranking_hidden": [16]},
        "ensemble": {"pca_dim": 4, "map_resolution": 4,
                     "regressor": {"epochs": 10, "batch_size": 16, "lr": 0.01}},
        "sweep": {"repeats": 3, "r_values": [2]},
    }))
    models = base / "models"
    assert entry(["train-cs", "--config", str(run_cfg), "--out", str(models)]) == 0
    checkpoints = [str(models / f"cs_{n}.ckpt") for n in names]
    return {"world": world, "config": str(run_cfg), "checkpoints": checkpoints,
            "base": base}


@pytest.mark.slow
def test_criterion_8_determinism_and_round_trips(eight_clusters, tmp_path):
    rng = np.random.default_rng(3)

    # embedding table: write, load, write again, compare bytes
    table = EmbeddingTable(5)
    for k in range(12):
        table.add(f"i{k}", rng.standard_normal(5))
    p1, p2 = tmp_path / "a.cseb", tmp_path / "b.cseb"
    write_embedding_table(table, str(p1))
    write_embedding_table(load_embedding_table(str(p1)), str(p2))
    assert p1.read_bytes() == p2.read_bytes()

    # checkpoint: save, load, save again
    model = CsModel("rt", init_mlp([5, 4], ACT_IDENTITY, rng),
                    init_mlp([12, 6, 2], ACT_SOFTMAX, rng))
    c1, c2 = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
    save_checkpoint(model, str(c1))
    loaded, _ = load_checkpoint(str(c1))
    save_checkpoint(loaded, str(c2))
    assert c1.read_bytes() == c2.read_bytes()

    # credibility map: binary payload and json sidecar both survive
    ids = [f"i{k}" for k in range(12)]
    triples = []
    for _ in range(80):
        ref, a, b = (str(x) for x in rng.choice(ids, size=3, replace=False))
        triples.append(Triple(ref, a, b, -1 if rng.random() < 0.5 else 1))
    pca = pca_fit(np.array([table.vector(i) for i in ids]), 2)
    built = build_credibility_map(model, triples, table, pca, (0, 1), 6)
    m1, m2 = tmp_path / "a.cscm", tmp_path / "b.cscm"
    save_credibility_map(built, str(m1))
    save_credibility_map(load_credibility_map(str(m1)), str(m2))
    assert m1.read_bytes() == m2.read_bytes()
    assert (tmp_path / "a.cscm.json").read_bytes() == \
        (tmp_path / "b.cscm.json").read_bytes()

    # identical config and seed give byte-identical metrics
    world = eight_clusters["world"]
    ckpt = eight_clusters["checkpoints"][0]
    runs = []
    for tag in ("r1", "r2"):
        out = tmp_path / tag
        rc = entry(["eval", ckpt, str(world / "cc_test.jsonl"),
                    "--config", eight_clusters["config"], "--out", str(out)])
        assert rc == 0
        runs.append((out / "eval.json").read_bytes())
    assert runs[0] == runs[1]

    # pair sweep over eight members: one vote row per subset, three
    # stochastic repeats each
    out = tmp_path / "sweep"
    rc = entry(["sweep", *eight_clusters["checkpoints"],
                "--config", eight_clusters["config"], "--out", str(out)])
    assert rc == 0
    rows = list(csv.DictReader((out / "sweep.csv").open()))
    by_strategy: dict = {}
    for row in rows:
        by_strategy[row["strategy"]] = by_strategy.get(row["strategy"], 0) + 1
    assert by_strategy == {"vote": 28, "mlp": 84}
    assert all(row["r"] == "2" for row in rows)
