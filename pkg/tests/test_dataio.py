import math
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cosim.dataio import (
    CSEB_MAGIC,
    CSEB_VERSION,
    DISCARD_BOTH_IRRELEVANT,
    ContextCluster,
    EmbeddingTable,
    RawAnnotation,
    Triple,
    agreement_rate,
    clean_dataset,
    detect_preference_cycles,
    load_embedding_table,
    load_raw_annotations,
    load_triples,
    resolve_labels,
    split_cluster,
    write_embedding_table,
    write_raw_annotations,
    write_triples,
)
from cosim.errors import DimMismatch, DuplicateId, FormatError, TrainCountOutOfRange

from conftest import cycle_edge_oracle, make_table


# ---------------------------------------------------------------------------
# embedding table round-trips

def test_cseb_round_trip_identity(tmp_path):
    table = make_table(4, {"a": [1.0, 2.0, -3.0, 0.5], "b": [0.0, -1.25, 4.0, 9.0]})
    path = tmp_path / "t.cseb"
    write_embedding_table(table, path)
    loaded = load_embedding_table(path)
    assert loaded.dim == 4
    assert loaded.ids() == ["a", "b"]
    for image_id in ("a", "b"):
        assert np.array_equal(loaded.vector(image_id), table.vector(image_id))


def test_cseb_write_is_deterministic(tmp_path):
    table = make_table(3, {"x": [1.0, 2.0, 3.0], "y": [4.0, 5.0, 6.0]})
    p1, p2 = tmp_path / "a.cseb", tmp_path / "b.cseb"
    write_embedding_table(table, p1)
    write_embedding_table(table, p2)
    assert p1.read_bytes() == p2.read_bytes()


def _raw_cseb(count, dim, rows):
    blob = CSEB_MAGIC + struct.pack("<HII", CSEB_VERSION, count, dim)
    for image_id, values in rows:
        encoded = image_id.encode("utf-8")
        blob += struct.pack("<H", len(encoded)) + encoded
        blob += np.asarray(values, dtype="<f4").tobytes()
    return blob


def test_cseb_header_dim_disagrees_with_rows(tmp_path):
    # header promises dim 8, payload carries 4 floats per row
    path = tmp_path / "bad.cseb"
    path.write_bytes(_raw_cseb(1, 8, [("x", [1.0, 2.0, 3.0, 4.0])]))
    with pytest.raises(DimMismatch):
        load_embedding_table(path)


def test_cseb_duplicate_ids_rejected(tmp_path):
    path = tmp_path / "dup.cseb"
    path.write_bytes(_raw_cseb(2, 2, [("x", [1.0, 2.0]), ("x", [3.0, 4.0])]))
    with pytest.raises(DuplicateId):
        load_embedding_table(path)


def test_cseb_bad_magic(tmp_path):
    path = tmp_path / "junk.cseb"
    path.write_bytes(b"NOPE" + b"\x00" * 16)
    with pytest.raises(FormatError):
        load_embedding_table(path)


@settings(max_examples=25, deadline=None)
@given(
    vecs=st.lists(
        st.lists(st.floats(width=32, allow_nan=False, allow_infinity=False),
                 min_size=3, max_size=3),
        min_size=1, max_size=6,
    )
)
def test_cseb_round_trip_property(tmp_path_factory, vecs):
    table = EmbeddingTable(3)
    for i, vec in enumerate(vecs):
        table.add(f"img{i}", np.asarray(vec, dtype=np.float64))
    path = tmp_path_factory.mktemp("cseb") / "t.cseb"
    write_embedding_table(table, path)
    loaded = load_embedding_table(path)
    for i, vec in enumerate(vecs):
        expect = np.asarray(vec, dtype=np.float32).astype(np.float64)
        assert np.array_equal(loaded.vector(f"img{i}"), expect)


# ---------------------------------------------------------------------------
# annotation resolution

def test_resolve_majority_of_three():
    kept, dropped = resolve_labels([RawAnnotation("r", "a", "b", (-1, -1, 1))])
    assert dropped == []
    assert kept == [Triple("r", "a", "b", -1)]


def test_resolve_discard_reason_drops():
    ann = RawAnnotation("r", "a", "b", (1, 1, 1), discard_reason=DISCARD_BOTH_IRRELEVANT)
    kept, dropped = resolve_labels([ann])
    assert kept == []
    assert dropped == [ann]


def test_resolve_tie_drops():
    kept, dropped = resolve_labels([RawAnnotation("r", "a", "b", (1, -1))])
    assert kept == []
    assert len(dropped) == 1


def test_annotation_round_trip(tmp_path):
    anns = [
        RawAnnotation("r", "a", "b", (1, -1, 1)),
        RawAnnotation("r", "c", "d", (1, 1), discard_reason=DISCARD_BOTH_IRRELEVANT),
    ]
    path = tmp_path / "anns.jsonl"
    write_raw_annotations(anns, path)
    assert load_raw_annotations(path) == anns


def test_agreement_unanimous():
    anns = [RawAnnotation("r", "a", "b", (1, 1, 1))]
    assert agreement_rate(anns) == 1.0


def test_agreement_two_to_one():
    # pairs: (+,+) agree, (+,-) and (+,-) disagree -> 1/3
    anns = [RawAnnotation("r", "a", "b", (1, 1, -1))]
    assert math.isclose(agreement_rate(anns), 1 / 3, rel_tol=1e-12)


def test_agreement_mixed_corpus():
    anns = [
        RawAnnotation("r", "a", "b", (1, 1, 1)),
        RawAnnotation("r", "c", "d", (1, 1, -1)),
    ]
    assert math.isclose(agreement_rate(anns), 2 / 3, rel_tol=1e-12)


# ---------------------------------------------------------------------------
# cycle detection and cleaning

def _three_cycle():
    return [
        Triple("r", "A", "B", -1),  # A beats B
        Triple("r", "B", "C", -1),  # B beats C
        Triple("r", "C", "A", -1),  # C beats A
    ]


def test_three_cycle_all_flagged():
    triples = _three_cycle()
    assert detect_preference_cycles(triples) == set(triples)


def test_transitive_chain_unflagged():
    triples = [
        Triple("r", "A", "B", -1),
        Triple("r", "B", "C", -1),
        Triple("r", "A", "C", -1),
    ]
    assert detect_preference_cycles(triples) == set()


def test_planted_digraphs_match_enumeration_oracle():
    rng = np.random.default_rng(11)
    names = [f"c{i}" for i in range(8)]
    for _ in range(40):
        n = int(rng.integers(3, 9))
        triples = []
        for _ in range(int(rng.integers(2, 14))):
            i, j = rng.choice(n, size=2, replace=False)
            triples.append(Triple("r", names[i], names[j], -1 if rng.random() < 0.5 else 1))
        assert detect_preference_cycles(triples) == cycle_edge_oracle(triples)


def test_clean_three_cycle_empty():
    assert clean_dataset(_three_cycle()) == []


def test_clean_acyclic_identity():
    triples = [Triple("r", "A", "B", -1), Triple("r", "B", "C", -1)]
    assert clean_dataset(triples) == triples


def test_clean_planted_corpus_passes_detector():
    rng = np.random.default_rng(5)
    triples = []
    for i in range(333):
        base = 3 * i
        triples.append(Triple(f"ref{i % 40}", f"i{base}", f"i{base + 1}",
                              -1 if rng.random() < 0.5 else 1))
    # plant a handful of 3-cycles (~0.1% of pairs involved)
    for ref in ("ref0", "ref1"):
        triples += [
            Triple(ref, "x1", "x2", -1),
            Triple(ref, "x2", "x3", -1),
            Triple(ref, "x3", "x1", -1),
        ]
    cleaned = clean_dataset(triples)
    assert detect_preference_cycles(cleaned) == set()
    assert len(cleaned) < len(triples)


# ---------------------------------------------------------------------------
# splits

def _cluster(n):
    triples = [Triple("ref", f"a{i}", f"b{i}", -1 if i % 2 else 1) for i in range(n)]
    return ContextCluster("ctx", "ref", triples)


def test_split_667_333():
    train, val = split_cluster(_cluster(1000), 667, seed=0)
    assert (len(train.triples), len(val.triples)) == (667, 333)
    merged = sorted(train.triples + val.triples, key=lambda t: t.a)
    assert merged == sorted(_cluster(1000).triples, key=lambda t: t.a)


def test_split_deterministic():
    a1, b1 = split_cluster(_cluster(50), 30, seed=9)
    a2, b2 = split_cluster(_cluster(50), 30, seed=9)
    assert a1.triples == a2.triples and b1.triples == b2.triples


def test_split_train_count_must_leave_validation():
    with pytest.raises(TrainCountOutOfRange):
        split_cluster(_cluster(1000), 1000, seed=0)


# ---------------------------------------------------------------------------
# triple files

def test_triples_jsonl_round_trip(tmp_path):
    triples = [Triple("r", "a", "b", -1), Triple("r", "b", "c", 1)]
    path = tmp_path / "t.jsonl"
    write_triples(triples, path)
    assert load_triples(path) == triples


def test_triple_label_validated():
    with pytest.raises(FormatError):
        Triple("r", "a", "b", 0)
