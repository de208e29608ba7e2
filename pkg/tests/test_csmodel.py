import math

import numpy as np
import pytest

from cosim.csmodel import (
    DECIDED_CONFIDENCE,
    DECIDED_EMBEDDING,
    DECIDED_RANKING,
    CsModel,
    TrainConfig,
    load_checkpoint,
    predict,
    predict_batch,
    predict_by_embedding,
    predict_by_ranking_block,
    project_table,
    save_checkpoint,
    train_cs_model,
)
from cosim.dataio import Triple
from cosim.errors import BadConfig
from cosim.nets import ACT_IDENTITY, ACT_SOFTMAX, MlpParams, mlp_forward, triplet_loss
from cosim.synthbench import WorldConfig, generate_world

from conftest import identity_model, make_table


def _model_with_block(weights, biases, dim=2, name="m"):
    proj = MlpParams([dim, dim], [np.eye(dim)], [np.zeros(dim)], ACT_IDENTITY)
    rank = MlpParams([3 * dim, 2], [np.asarray(weights, dtype=np.float64)],
                     [np.asarray(biases, dtype=np.float64)], ACT_SOFTMAX)
    return CsModel(name, proj, rank)


TABLE = make_table(2, {
    "r": [1.0, 1.0],
    "a": [1.0, 0.0],
    "b": [0.0, 1.0],
    "a_copy": [1.0, 0.0],
})


# ---------------------------------------------------------------------------
# embedding-distance predictions

def test_embedding_zero_distance_wins():
    model = identity_model(2)
    pred = predict_by_embedding(model, Triple("a", "a_copy", "b", 1), TABLE)
    assert pred.label == -1
    assert not pred.ambiguous
    assert pred.confidence_ab > 0.5


def test_embedding_exact_tie_is_ambiguous():
    model = identity_model(2)
    pred = predict_by_embedding(model, Triple("r", "a", "b", 1), TABLE)
    # d(r,a) == d(r,b) by symmetry of the fixture
    assert pred.ambiguous
    assert pred.label == 1
    assert pred.confidence_ab == 0.5


def test_embedding_matches_direct_distance_recomputation():
    rng = np.random.default_rng(6)
    table = make_table(5, {k: rng.standard_normal(5) for k in "rabcd"})
    model = identity_model(5)
    pred = predict_by_embedding(model, Triple("r", "a", "b", 1), table)

    def cosd(u, v):
        return 1.0 - float(np.dot(u, v) / (np.linalg.norm(u) * np.linalg.norm(v)))

    # the table stores float32 rows; distances are taken in float64
    r, a, b = (table.vector(k).astype(np.float64) for k in "rab")
    d_ra = cosd(r, a)
    d_rb = cosd(r, b)
    assert pred.label == (-1 if d_ra < d_rb else 1)
    expect_conf = 0.5 + 0.5 * abs(d_ra - d_rb) / (d_ra + d_rb)
    assert pred.confidence_ab == pytest.approx(expect_conf, abs=1e-12)


# ---------------------------------------------------------------------------
# ranking-block resolution chain

LN4 = math.log(4.0)
LN15 = math.log(1.5)


def _confidence_fixture_model():
    # forward logit gap ln4 -> conf 0.8; swapped gap ln1.5 -> conf 0.6;
    # both orders claim "a closer", so the confidence rule must decide
    w = np.zeros((2, 6))
    w[0, 2] = LN4   # first component of candidate a
    w[0, 4] = LN15  # first component of candidate b
    return _model_with_block(w, np.zeros(2))


def test_ranking_consistent_antisymmetric_block():
    rng = np.random.default_rng(3)
    u = rng.standard_normal(2)
    v = rng.standard_normal(2)
    wr = rng.standard_normal(2)
    w = np.array([np.concatenate([wr, u, v]), np.concatenate([wr, v, u])])
    model = _model_with_block(w, np.zeros(2))
    table = make_table(2, {k: rng.standard_normal(2) for k in "rxyz"})
    for a, b in (("x", "y"), ("y", "z"), ("x", "z")):
        pred = predict_by_ranking_block(model, Triple("r", a, b, 1), table)
        assert pred.decided_by == DECIDED_RANKING
        assert not pred.ambiguous


def test_ranking_constant_block_falls_back_to_embedding():
    model = _model_with_block(np.zeros((2, 6)), [math.log(9.0), 0.0])
    pred = predict_by_ranking_block(model, Triple("r", "a", "b", 1), TABLE)
    assert pred.ambiguous
    assert pred.confidence_ab == pytest.approx(0.9, abs=1e-12)
    assert pred.confidence_ba == pytest.approx(0.9, abs=1e-12)
    assert pred.decided_by == DECIDED_EMBEDDING


def test_ranking_confidence_rule_hand_trace():
    model = _confidence_fixture_model()
    pred = predict_by_ranking_block(model, Triple("r", "a", "b", 1), TABLE)
    assert pred.label == -1
    assert pred.decided_by == DECIDED_CONFIDENCE
    assert pred.confidence_ab == pytest.approx(0.8, abs=1e-12)
    assert pred.confidence_ba == pytest.approx(0.6, abs=1e-12)
    assert pred.ambiguous


def test_predict_dispatches_modes():
    model = _confidence_fixture_model()
    t = Triple("r", "a", "b", 1)
    assert predict(model, t, TABLE, "ranking").decided_by == DECIDED_CONFIDENCE
    assert predict(model, t, TABLE, "embedding").decided_by == DECIDED_EMBEDDING
    with pytest.raises(BadConfig):
        predict(model, t, TABLE, "nope")


def test_predict_batch_agrees_with_scalar_predict():
    rng = np.random.default_rng(12)
    ids = [f"i{k}" for k in range(10)]
    table = make_table(3, {i: rng.standard_normal(3) for i in ids})
    table.add("tie_a", np.array([1.0, 0.0, 0.0]))
    table.add("tie_b", np.array([1.0, 0.0, 0.0]))
    triples = [Triple(ids[0], "tie_a", "tie_b", 1)]
    for _ in range(20):
        r, a, b = rng.choice(ids, size=3, replace=False)
        triples.append(Triple(r, a, b, 1))
    rank = MlpParams([9, 2],
                     [rng.standard_normal((2, 9))], [np.zeros(2)], ACT_SOFTMAX)
    proj = MlpParams([3, 3], [np.eye(3)], [np.zeros(3)], ACT_IDENTITY)
    model = CsModel("m", proj, rank)
    for mode in ("embedding", "ranking"):
        labels, conf_ab, conf_ba = predict_batch(model, triples, table, mode)
        for i, t in enumerate(triples):
            p = predict(model, t, table, mode)
            assert labels[i] == p.label
            assert conf_ab[i] == pytest.approx(p.confidence_ab, abs=1e-12)
            assert conf_ba[i] == pytest.approx(p.confidence_ba, abs=1e-12)


def test_project_table_matches_forward():
    rng = np.random.default_rng(4)
    table = make_table(3, {f"i{k}": rng.standard_normal(3) for k in range(5)})
    model = identity_model(3)
    pt = project_table(model, table)
    for image_id in table.ids():
        row = pt.vectors[pt.rows([image_id])[0]]
        assert np.allclose(row, mlp_forward(model.projection, table.vector(image_id)),
                           atol=1e-12)


# ---------------------------------------------------------------------------
# swap augmentation

def test_swapped_flips_label_and_candidates():
    assert Triple("r", "a", "b", -1).swapped() == Triple("r", "b", "a", 1)


def test_swapped_is_involution():
    t = Triple("r", "a", "b", 1)
    assert t.swapped().swapped() == t


def test_swapped_triplet_term_equal():
    rng = np.random.default_rng(5)
    er, ea, eb = rng.standard_normal((3, 4))
    assert triplet_loss(er, ea, eb, -1, 0.1) == triplet_loss(er, eb, ea, 1, 0.1)


# ---------------------------------------------------------------------------
# training

def _easy_world():
    cfg = WorldConfig(n_images=300, latent_dim=6, embed_dim=16, n_contexts=2,
                      context_sharpness=0.0, noise_sigma=0.0, triples_per_cluster=200,
                      cc_val_size=60, cc_test_size=60, seed=3)
    return generate_world(cfg)


def test_training_fits_separable_cluster():
    bundle, _ = _easy_world()
    model, hist = train_cs_model(bundle.clusters[0].triples, bundle.embeddings,
                                 TrainConfig(seed=7))
    assert len(hist) == 25
    assert hist[-1].accuracy_ranking >= 0.95


def test_training_rejects_zero_epochs():
    bundle, _ = _easy_world()
    with pytest.raises(BadConfig):
        train_cs_model(bundle.clusters[0].triples, bundle.embeddings,
                       TrainConfig(epochs=0))


def test_training_same_seed_byte_identical_checkpoints(tmp_path):
    bundle, _ = _easy_world()
    triples = bundle.clusters[0].triples[:60]
    cfg = TrainConfig(epochs=2, seed=11)
    paths = []
    for tag in ("one", "two"):
        model, _ = train_cs_model(triples, bundle.embeddings, cfg, name="det",
                                  proj_hidden=(), proj_dim=4, ranking_hidden=(8,))
        path = tmp_path / f"{tag}.ckpt"
        save_checkpoint(model, path, config=cfg)
        paths.append(path)
    assert paths[0].read_bytes() == paths[1].read_bytes()


def test_checkpoint_round_trip(tmp_path):
    bundle, _ = _easy_world()
    cfg = TrainConfig(epochs=1, seed=2)
    model, _ = train_cs_model(bundle.clusters[0].triples[:40], bundle.embeddings,
                              cfg, name="rt", trained_on=["ctx0"],
                              proj_hidden=(), proj_dim=4, ranking_hidden=(8,))
    path = tmp_path / "m.ckpt"
    save_checkpoint(model, path, metrics={"train_accuracy": 0.5}, config=cfg)
    loaded, header = load_checkpoint(path)
    assert loaded.name == "rt"
    assert loaded.trained_on == ["ctx0"]
    assert loaded.margin == model.margin
    for w1, w2 in zip(loaded.projection.weights, model.projection.weights):
        assert np.array_equal(w1, w2)
    for w1, w2 in zip(loaded.ranking_block.weights, model.ranking_block.weights):
        assert np.array_equal(w1, w2)
    assert header["metrics"]["train_accuracy"] == 0.5
