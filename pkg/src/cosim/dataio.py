"""Datasets for two-alternative forced-choice similarity judgments.

A labeled triple (ref, a, b, y) says which of two candidate images a human
judged closer to the reference: y = -1 means candidate ``a``, y = +1 means
candidate ``b``.  Raw annotations carry the individual votes and are resolved
to labels by majority.  Embeddings live in a little-endian binary table
(magic ``CSEB``) keyed by image id.
"""

from __future__ import annotations

import json
import logging
import struct
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import (
    DimMismatch,
    DuplicateId,
    EmptyInput,
    FormatError,
    MissingId,
    NonFiniteValue,
    TrainCountOutOfRange,
)

log = logging.getLogger("cosim.dataio")

CSEB_MAGIC = b"CSEB"
CSEB_VERSION = 1

DISCARD_EQUALLY_SIMILAR = "equally_similar"
DISCARD_BOTH_IRRELEVANT = "both_irrelevant"
_DISCARD_REASONS = (DISCARD_EQUALLY_SIMILAR, DISCARD_BOTH_IRRELEVANT)


def validate_image_id(token: str) -> str:
    """Image ids are non-empty strings without whitespace."""
    if not isinstance(token, str) or not token:
        raise FormatError("image id must be a non-empty string")
    if any(ch.isspace() for ch in token):
        raise FormatError(f"image id contains whitespace: {token!r}")
    return token


@dataclass(frozen=True)
class Triple:
    """One forced-choice judgment: y=-1 means a is closer to ref, y=+1 means b."""

    ref: str
    a: str
    b: str
    y: int

    def __post_init__(self):
        for token in (self.ref, self.a, self.b):
            validate_image_id(token)
        if len({self.ref, self.a, self.b}) != 3:
            raise FormatError(f"triple ids must be pairwise distinct: {self}")
        if self.y not in (-1, 1):
            raise FormatError(f"label must be -1 or +1, got {self.y!r}")

    def swapped(self) -> "Triple":
        """Swap the candidates and negate the label; an involution."""
        return Triple(self.ref, self.b, self.a, -self.y)


@dataclass(frozen=True)
class RawAnnotation:
    """An unresolved judgment: per-annotator votes, optionally discarded."""

    ref: str
    a: str
    b: str
    votes: tuple
    discard_reason: Optional[str] = None

    def __post_init__(self):
        for token in (self.ref, self.a, self.b):
            validate_image_id(token)
        if len({self.ref, self.a, self.b}) != 3:
            raise FormatError(f"annotation ids must be pairwise distinct: {self}")
        if not self.votes:
            raise FormatError("annotation has no votes")
        if any(v not in (-1, 1) for v in self.votes):
            raise FormatError(f"votes must be -1 or +1, got {self.votes!r}")
        if self.discard_reason is not None and self.discard_reason not in _DISCARD_REASONS:
            raise FormatError(f"unknown discard reason {self.discard_reason!r}")


class EmbeddingTable:
    """Ordered id -> float32 vector map with a fixed dimension."""

    def __init__(self, dim: int, rows: Optional[dict] = None):
        if dim < 1:
            raise DimMismatch(f"dimension must be >= 1, got {dim}")
        self.dim = int(dim)
        self.rows: dict = {}
        if rows:
            for image_id, vec in rows.items():
                self.add(image_id, vec)

    def add(self, image_id: str, vec) -> None:
        validate_image_id(image_id)
        if image_id in self.rows:
            raise DuplicateId(f"duplicate image id {image_id!r}")
        arr = np.asarray(vec, dtype=np.float32).reshape(-1)
        if arr.shape[0] != self.dim:
            raise DimMismatch(
                f"row {image_id!r} has {arr.shape[0]} values, table dim is {self.dim}"
            )
        if not np.all(np.isfinite(arr)):
            raise NonFiniteValue(f"row {image_id!r} contains non-finite values")
        self.rows[image_id] = arr

    def __len__(self) -> int:
        return len(self.rows)

    def __contains__(self, image_id: str) -> bool:
        return image_id in self.rows

    def vector(self, image_id: str) -> np.ndarray:
        try:
            return self.rows[image_id]
        except KeyError:
            raise MissingId(f"id {image_id!r} not in embedding table") from None

    def ids(self) -> list:
        return list(self.rows.keys())

    def matrix(self, order: Optional[Sequence[str]] = None) -> np.ndarray:
        """Stack rows (in table order unless ``order`` is given) as float64."""
        keys = self.rows.keys() if order is None else order
        return np.array([self.vector(k) for k in keys], dtype=np.float64)


@dataclass
class ContextCluster:
    """Triples sharing one fixed reference image, defining one context."""

    name: str
    anchor_ref: str
    triples: list

    def __post_init__(self):
        validate_image_id(self.anchor_ref)
        for t in self.triples:
            if t.ref != self.anchor_ref:
                raise FormatError(
                    f"cluster {self.name!r} anchored at {self.anchor_ref!r} "
                    f"contains a triple with ref {t.ref!r}"
                )


@dataclass
class DatasetBundle:
    """Embeddings plus cluster, cross-context validation and test triples."""

    embeddings: EmbeddingTable
    clusters: list = field(default_factory=list)
    cc_validation: list = field(default_factory=list)
    cc_test: list = field(default_factory=list)

    def all_triples(self) -> list:
        out = []
        for cluster in self.clusters:
            out.extend(cluster.triples)
        out.extend(self.cc_validation)
        out.extend(self.cc_test)
        return out

    def validate(self) -> None:
        """Check id closure (error) and test-set isolation (warning only)."""
        for t in self.all_triples():
            for image_id in (t.ref, t.a, t.b):
                if image_id not in self.embeddings:
                    raise MissingId(f"triple id {image_id!r} missing from embeddings")
        seen = set()
        for cluster in self.clusters:
            for t in cluster.triples:
                seen.update((t.ref, t.a, t.b))
        for t in self.cc_validation:
            seen.update((t.ref, t.a, t.b))
        leaked = set()
        for t in self.cc_test:
            leaked.update(x for x in (t.ref, t.a, t.b) if x in seen)
        if leaked:
            log.warning(
                "cc_test shares %d image ids with cluster/validation data", len(leaked)
            )


# ---------------------------------------------------------------------------
# binary embedding table (CSEB)

def write_embedding_table(table: EmbeddingTable, path) -> None:
    """Write ``table`` to ``path`` in the CSEB layout (all little-endian)."""
    with open(path, "wb") as fh:
        fh.write(CSEB_MAGIC)
        fh.write(struct.pack("<HII", CSEB_VERSION, len(table), table.dim))
        for image_id, vec in table.rows.items():
            encoded = image_id.encode("utf-8")
            if len(encoded) > 0xFFFF:
                raise FormatError(f"image id too long: {image_id[:32]!r}...")
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            fh.write(vec.astype("<f4", copy=False).tobytes())


def load_embedding_table(path) -> EmbeddingTable:
    """Read a CSEB file back into an :class:`EmbeddingTable`.

    Raises
    ------
    FormatError
        Bad magic or unsupported version.
    DimMismatch
        Declared count/dim inconsistent with the payload length.
    DuplicateId, NonFiniteValue
        Propagated from row validation.
    """
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != CSEB_MAGIC:
        raise FormatError(f"bad magic {blob[:4]!r}, expected {CSEB_MAGIC!r}")
    if len(blob) < 14:
        raise DimMismatch("truncated header")
    version, count, dim = struct.unpack_from("<HII", blob, 4)
    if version != CSEB_VERSION:
        raise FormatError(f"unsupported version {version}")
    if dim < 1:
        raise DimMismatch(f"declared dim {dim} is invalid")
    table = EmbeddingTable(dim)
    offset = 14
    row_bytes = 4 * dim
    for _ in range(count):
        if offset + 2 > len(blob):
            raise DimMismatch("payload ends inside a record header")
        (id_len,) = struct.unpack_from("<H", blob, offset)
        offset += 2
        if offset + id_len + row_bytes > len(blob):
            raise DimMismatch("payload ends inside a record")
        image_id = blob[offset : offset + id_len].decode("utf-8")
        offset += id_len
        vec = np.frombuffer(blob, dtype="<f4", count=dim, offset=offset)
        offset += row_bytes
        table.add(image_id, vec)
    if offset != len(blob):
        raise DimMismatch(f"{len(blob) - offset} trailing bytes after {count} records")
    return table


# ---------------------------------------------------------------------------
# JSONL triples / annotations

def _triple_from_obj(obj) -> Triple:
    try:
        return Triple(obj["ref"], obj["a"], obj["b"], obj["y"])
    except KeyError as exc:
        raise FormatError(f"triple record missing key {exc}") from None


def _annotation_from_obj(obj) -> RawAnnotation:
    try:
        return RawAnnotation(
            obj["ref"],
            obj["a"],
            obj["b"],
            tuple(obj["votes"]),
            obj.get("discard"),
        )
    except KeyError as exc:
        raise FormatError(f"annotation record missing key {exc}") from None


def load_triples(path) -> list:
    """Load labeled triples from a JSONL file (one object per line)."""
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise FormatError(f"{path}:{lineno}: invalid JSON ({exc})") from None
            out.append(_triple_from_obj(obj))
    return out


def load_raw_annotations(path) -> list:
    """Load raw annotations (records with a ``votes`` array) from JSONL."""
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise FormatError(f"{path}:{lineno}: invalid JSON ({exc})") from None
            out.append(_annotation_from_obj(obj))
    return out


def load_triples_or_annotations(path):
    """Return (triples, annotations); lines with votes load as annotations."""
    triples, annotations = [], []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise FormatError(f"{path}:{lineno}: invalid JSON ({exc})") from None
            if "votes" in obj or "discard" in obj:
                annotations.append(_annotation_from_obj(obj))
            else:
                triples.append(_triple_from_obj(obj))
    return triples, annotations


def write_triples(triples: Iterable[Triple], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for t in triples:
            fh.write(json.dumps({"ref": t.ref, "a": t.a, "b": t.b, "y": t.y}))
            fh.write("\n")


def write_raw_annotations(annotations: Iterable[RawAnnotation], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for ann in annotations:
            obj = {"ref": ann.ref, "a": ann.a, "b": ann.b, "votes": list(ann.votes)}
            if ann.discard_reason is not None:
                obj["discard"] = ann.discard_reason
            fh.write(json.dumps(obj))
            fh.write("\n")


# ---------------------------------------------------------------------------
# label resolution and cleaning

def resolve_labels(annotations: Sequence[RawAnnotation]):
    """Majority-vote annotations into labeled triples.

    Annotations with a discard reason are dropped, as are zero-sum ties
    (possible with an even number of voters).  Returns (kept, dropped).
    """
    kept, dropped = [], []
    for ann in annotations:
        if ann.discard_reason is not None:
            dropped.append(ann)
            continue
        total = sum(ann.votes)
        if total == 0:
            dropped.append(ann)
            continue
        kept.append(Triple(ann.ref, ann.a, ann.b, -1 if total < 0 else 1))
    return kept, dropped


def agreement_rate(annotations: Sequence[RawAnnotation]) -> float:
    """Mean over annotations of (agreeing vote pairs / total vote pairs).

    A crude inter-rater statistic: for each annotation every unordered pair
    of votes either agrees or not.  Each annotation needs >= 2 votes.
    """
    if not annotations:
        raise EmptyInput("agreement_rate of empty annotation list")
    rates = []
    for ann in annotations:
        n = len(ann.votes)
        if n < 2:
            raise EmptyInput(f"annotation with {n} vote(s); need >= 2 for agreement")
        pos = sum(1 for v in ann.votes if v > 0)
        neg = n - pos
        agreeing = pos * (pos - 1) // 2 + neg * (neg - 1) // 2
        rates.append(agreeing / (n * (n - 1) // 2))
    return float(np.mean(rates))


def _strongly_connected_components(nodes, edges):
    """Tarjan over an explicit edge list; returns component id per node."""
    adjacency = {node: [] for node in nodes}
    for u, v in edges:
        adjacency[u].append(v)
    index = {}
    lowlink = {}
    on_stack = set()
    stack = []
    component = {}
    counter = [0]
    comp_count = [0]

    for root in nodes:
        if root in index:
            continue
        # Iterative DFS; recursion would overflow on long preference chains.
        work = [(root, 0)]
        while work:
            node, edge_idx = work.pop()
            if edge_idx == 0:
                index[node] = lowlink[node] = counter[0]
                counter[0] += 1
                stack.append(node)
                on_stack.add(node)
            advanced = False
            neighbors = adjacency[node]
            while edge_idx < len(neighbors):
                nxt = neighbors[edge_idx]
                edge_idx += 1
                if nxt not in index:
                    work.append((node, edge_idx))
                    work.append((nxt, 0))
                    advanced = True
                    break
                if nxt in on_stack:
                    lowlink[node] = min(lowlink[node], index[nxt])
            if advanced:
                continue
            if lowlink[node] == index[node]:
                while True:
                    member = stack.pop()
                    on_stack.discard(member)
                    component[member] = comp_count[0]
                    if member == node:
                        break
                comp_count[0] += 1
            if work:
                parent = work[-1][0]
                lowlink[parent] = min(lowlink[parent], lowlink[node])
    return component


def detect_preference_cycles(triples: Sequence[Triple]) -> set:
    """Flag triples whose preference edge lies inside a cycle.

    Per reference, each triple adds a directed edge from the losing candidate
    to the winning one.  A triple is flagged iff both endpoints of its edge
    fall in the same strongly connected component of size > 1; removing all
    flagged triples therefore leaves an acyclic preference relation.
    """
    by_ref: dict = {}
    for t in triples:
        by_ref.setdefault(t.ref, []).append(t)
    flagged = set()
    for ref_triples in by_ref.values():
        nodes = []
        seen = set()
        edges = []
        for t in ref_triples:
            loser, winner = (t.b, t.a) if t.y == -1 else (t.a, t.b)
            edges.append((loser, winner))
            for node in (loser, winner):
                if node not in seen:
                    seen.add(node)
                    nodes.append(node)
        component = _strongly_connected_components(nodes, edges)
        comp_sizes: dict = {}
        for node in nodes:
            comp_sizes[component[node]] = comp_sizes.get(component[node], 0) + 1
        for t in ref_triples:
            loser, winner = (t.b, t.a) if t.y == -1 else (t.a, t.b)
            if component[loser] == component[winner] and comp_sizes[component[loser]] > 1:
                flagged.add(t)
    return flagged


def clean_dataset(triples: Sequence[Triple]) -> list:
    """Drop every cycle-flagged triple, preserving input order."""
    flagged = detect_preference_cycles(triples)
    return [t for t in triples if t not in flagged]


def split_cluster(cluster: ContextCluster, train_count: int, seed: int):
    """Split a cluster into (train, val) parts of sizes (k, n-k).

    The shuffle uses its own seeded generator, so the partition is
    reproducible across runs and platforms.  Both parts keep the cluster
    name; they describe the same context.
    """
    n = len(cluster.triples)
    if not 0 < train_count < n:
        raise TrainCountOutOfRange(
            f"train_count {train_count} must leave both splits non-empty (n={n})"
        )
    order = np.random.default_rng(seed).permutation(n)
    train = [cluster.triples[i] for i in order[:train_count]]
    val = [cluster.triples[i] for i in order[train_count:]]
    return (
        ContextCluster(cluster.name, cluster.anchor_ref, train),
        ContextCluster(cluster.name, cluster.anchor_ref, val),
    )
