"""Directed product graph over co-purchase and co-view relations.

Co-purchase pairs are kept exactly as directed edges; co-view pairs are
symmetric similarity signal and get materialized in both directions.
Self-pairs are dropped and duplicate (u, v, kind) triples deduplicated.
The graph is immutable after construction and safe for concurrent reads.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .errors import DataFormatError


class RelationKind(enum.Enum):
    CO_PURCHASE = "cp"
    CO_VIEW = "cv"


class Direction(enum.Enum):
    OUT = "out"
    IN = "in"


class KeyMap:
    """Bijection between opaque external keys and dense integer ids.

    Ids are contiguous in first-appearance order, so downstream arrays
    are index-addressable.
    """

    def __init__(self, keys=()):
        self._keys: list[str] = []
        self._ids: dict[str, int] = {}
        for k in keys:
            self.add(k)

    def add(self, key: str) -> int:
        idx = self._ids.get(key)
        if idx is None:
            idx = len(self._keys)
            self._ids[key] = idx
            self._keys.append(key)
        return idx

    def id_of(self, key: str) -> int:
        try:
            return self._ids[key]
        except KeyError:
            raise KeyError(f"unknown product key: {key!r}") from None

    def key_of(self, idx: int) -> str:
        return self._keys[idx]

    def __contains__(self, key: str) -> bool:
        return key in self._ids

    def __len__(self) -> int:
        return len(self._keys)

    def keys(self) -> list[str]:
        return list(self._keys)


@dataclass(frozen=True)
class Adjacency:
    """CSR neighbor lists; indices sorted within each row."""

    indptr: np.ndarray
    indices: np.ndarray

    def neighbors(self, u: int) -> np.ndarray:
        return self.indices[self.indptr[u] : self.indptr[u + 1]]

    def degree(self, u: int) -> int:
        return int(self.indptr[u + 1] - self.indptr[u])

    def has_edge(self, u: int, v: int) -> bool:
        row = self.neighbors(u)
        i = np.searchsorted(row, v)
        return bool(i < len(row) and row[i] == v)


def _csr_from_pairs(pairs: np.ndarray, num_nodes: int) -> Adjacency:
    if len(pairs) == 0:
        return Adjacency(np.zeros(num_nodes + 1, dtype=np.int64),
                         np.empty(0, dtype=np.int64))
    order = np.lexsort((pairs[:, 1], pairs[:, 0]))
    pairs = pairs[order]
    counts = np.bincount(pairs[:, 0], minlength=num_nodes)
    indptr = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)
    return Adjacency(indptr, pairs[:, 1].astype(np.int64))


def _unique_pairs(pairs) -> np.ndarray:
    """Deduplicate directed pairs and drop self-loops; returns (m, 2) int64."""
    arr = np.asarray(list(pairs) if not isinstance(pairs, np.ndarray) else pairs,
                     dtype=np.int64)
    if arr.size == 0:
        return np.empty((0, 2), dtype=np.int64)
    arr = arr.reshape(-1, 2)
    arr = arr[arr[:, 0] != arr[:, 1]]
    if len(arr) == 0:
        return np.empty((0, 2), dtype=np.int64)
    return np.unique(arr, axis=0)


@dataclass(frozen=True)
class DirectedProductGraph:
    num_nodes: int
    cp_out: Adjacency
    cp_in: Adjacency
    cv_out: Adjacency
    cv_in: Adjacency
    # Canonical edge lists: cp directed pairs sorted by (u, v); cv stored
    # once per unordered pair with u < v.
    cp_edges: np.ndarray = field(repr=False)
    cv_pairs: np.ndarray = field(repr=False)

    @property
    def num_cp_edges(self) -> int:
        return len(self.cp_edges)

    @property
    def num_cv_edges(self) -> int:
        # directed count; both materialized directions
        return 2 * len(self.cv_pairs)

    def neighbors(self, u: int, kind: RelationKind,
                  direction: Direction) -> np.ndarray:
        if not 0 <= u < self.num_nodes:
            raise IndexError(f"node id {u} out of range [0, {self.num_nodes})")
        adj = {
            (RelationKind.CO_PURCHASE, Direction.OUT): self.cp_out,
            (RelationKind.CO_PURCHASE, Direction.IN): self.cp_in,
            (RelationKind.CO_VIEW, Direction.OUT): self.cv_out,
            (RelationKind.CO_VIEW, Direction.IN): self.cv_in,
        }[(kind, direction)]
        return adj.neighbors(u)

    def has_cp_edge(self, u: int, v: int) -> bool:
        return self.cp_out.has_edge(u, v)


def build_graph(cp_pairs, cv_pairs, num_nodes: int) -> DirectedProductGraph:
    """Build the graph from dense-id pairs.

    Duplicates and self-pairs are tolerated in the input; cv pairs are
    symmetrized so both traversal directions are materialized.
    """
    cp = _unique_pairs(cp_pairs)
    cv_one = _unique_pairs(cv_pairs)
    for arr, name in ((cp, "co-purchase"), (cv_one, "co-view")):
        if len(arr) and (arr.min() < 0 or arr.max() >= num_nodes):
            raise DataFormatError(
                f"{name} pair references id outside [0, {num_nodes})")
    # canonical unordered cv pairs
    if len(cv_one):
        lo = np.minimum(cv_one[:, 0], cv_one[:, 1])
        hi = np.maximum(cv_one[:, 0], cv_one[:, 1])
        cv_pairs_u = np.unique(np.stack([lo, hi], axis=1), axis=0)
        cv_both = np.concatenate([cv_pairs_u, cv_pairs_u[:, ::-1]], axis=0)
    else:
        cv_pairs_u = np.empty((0, 2), dtype=np.int64)
        cv_both = cv_pairs_u
    return DirectedProductGraph(
        num_nodes=num_nodes,
        cp_out=_csr_from_pairs(cp, num_nodes),
        cp_in=_csr_from_pairs(cp[:, ::-1] if len(cp) else cp, num_nodes),
        cv_out=_csr_from_pairs(cv_both, num_nodes),
        cv_in=_csr_from_pairs(cv_both[:, ::-1] if len(cv_both) else cv_both,
                              num_nodes),
        cp_edges=cp,
        cv_pairs=cv_pairs_u,
    )


def one_way_cp_edges(g: DirectedProductGraph) -> np.ndarray:
    """Co-purchase edges whose reverse is absent, sorted by (u, v)."""
    edges = g.cp_edges
    if len(edges) == 0:
        return edges
    mask = np.fromiter(
        (not g.cp_out.has_edge(v, u) for u, v in edges),
        dtype=bool, count=len(edges))
    return edges[mask]


def one_way_mask(g: DirectedProductGraph, edges: np.ndarray) -> np.ndarray:
    """Per-edge flag: True iff the reverse co-purchase edge is absent."""
    if len(edges) == 0:
        return np.zeros(0, dtype=bool)
    return np.fromiter(
        (not g.cp_out.has_edge(v, u) for u, v in edges),
        dtype=bool, count=len(edges))


@dataclass(frozen=True)
class GraphStats:
    num_nodes: int
    num_cp_edges: int
    num_cv_edges: int
    num_cp_pairs: int
    num_one_way_pairs: int
    avg_degree: float
    one_way_pair_share: float


def graph_stats(g: DirectedProductGraph) -> GraphStats:
    """Degree and directedness summary.

    avg_degree counts stored directed edges (cp plus both cv directions)
    per node; one_way_pair_share is the fraction of distinct co-purchase
    pairs connected in exactly one direction.
    """
    one_way = len(one_way_cp_edges(g))
    pairs = one_way + (g.num_cp_edges - one_way) // 2
    total_directed = g.num_cp_edges + g.num_cv_edges
    return GraphStats(
        num_nodes=g.num_nodes,
        num_cp_edges=g.num_cp_edges,
        num_cv_edges=g.num_cv_edges,
        num_cp_pairs=pairs,
        num_one_way_pairs=one_way,
        avg_degree=total_directed / g.num_nodes if g.num_nodes else 0.0,
        one_way_pair_share=one_way / pairs if pairs else 0.0,
    )


# ----------------------------------------------------------------------
# File formats
# ----------------------------------------------------------------------

def load_edge_file(path, key_map: KeyMap | None = None):
    """Read a tab-separated edge file: `<src>\\t<dst>\\t<cp|cv>` per line.

    Lines starting with `#` are ignored. When a key map is supplied,
    unknown keys are an ingestion error reporting every offending line.
    Returns (cp_pairs, cv_pairs, key_map) with dense-id pairs.
    """
    grow = key_map is None
    km = KeyMap() if grow else key_map
    cp, cv = [], []
    bad_lines: list[int] = []
    unknown_lines: list[int] = []
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.rstrip("\n")
            if not line or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 3 or parts[2] not in ("cp", "cv"):
                bad_lines.append(lineno)
                continue
            src, dst, kind = parts
            if grow:
                u, v = km.add(src), km.add(dst)
            else:
                if src not in km or dst not in km:
                    unknown_lines.append(lineno)
                    continue
                u, v = km.id_of(src), km.id_of(dst)
            (cp if kind == "cp" else cv).append((u, v))
    if bad_lines:
        raise DataFormatError(
            f"{path}: malformed edge lines {_fmt_lines(bad_lines)}")
    if unknown_lines:
        raise DataFormatError(
            f"{path}: unknown product keys on lines {_fmt_lines(unknown_lines)}")
    return cp, cv, km


def _fmt_lines(lines: list[int], limit: int = 20) -> str:
    shown = ", ".join(str(x) for x in lines[:limit])
    if len(lines) > limit:
        shown += f", ... ({len(lines)} total)"
    return shown


def dump_edge_file(g: DirectedProductGraph, key_map: KeyMap, path) -> None:
    """Write the canonical edge dump: cp edges then cv pairs, sorted by id.

    cv pairs are written once per unordered pair; loading symmetrizes them
    back, so a rebuild from the dump reproduces the graph.
    """
    with open(path, "w", encoding="utf-8") as f:
        for u, v in g.cp_edges:
            f.write(f"{key_map.key_of(u)}\t{key_map.key_of(v)}\tcp\n")
        for u, v in g.cv_pairs:
            f.write(f"{key_map.key_of(u)}\t{key_map.key_of(v)}\tcv\n")


def load_feature_file(path):
    """Read the feature file: header `<num_nodes>\\t<dim>`, then
    `<key>\\t<f1>,<f2>,...` per product. Returns (features, key_map)."""
    with open(path, "r", encoding="utf-8") as f:
        header = f.readline().rstrip("\n")
        parts = header.split("\t")
        if len(parts) != 2:
            raise DataFormatError(f"{path}: bad feature header {header!r}")
        try:
            n, dim = int(parts[0]), int(parts[1])
        except ValueError:
            raise DataFormatError(
                f"{path}: non-integer feature header {header!r}") from None
        km = KeyMap()
        rows = np.empty((n, dim), dtype=np.float64)
        count = 0
        for lineno, line in enumerate(f, start=2):
            line = line.rstrip("\n")
            if not line or line.startswith("#"):
                continue
            if count >= n:
                raise DataFormatError(f"{path}: more rows than header declares")
            key, _, blob = line.partition("\t")
            try:
                vec = np.array(blob.split(","), dtype=np.float64)
            except ValueError:
                raise DataFormatError(
                    f"{path}: bad floats on line {lineno}") from None
            if len(vec) != dim:
                raise DataFormatError(
                    f"{path}: line {lineno} has {len(vec)} values, expected {dim}")
            if key in km:
                raise DataFormatError(
                    f"{path}: duplicate key {key!r} on line {lineno}")
            km.add(key)
            rows[count] = vec
            count += 1
    if count != n:
        raise DataFormatError(f"{path}: header declares {n} rows, found {count}")
    if not np.isfinite(rows).all():
        raise DataFormatError(f"{path}: non-finite feature values")
    return rows, km


def dump_feature_file(features: np.ndarray, key_map: KeyMap, path) -> None:
    from .util import fmt_float
    n, dim = features.shape
    with open(path, "w", encoding="utf-8") as f:
        f.write(f"{n}\t{dim}\n")
        for i in range(n):
            blob = ",".join(fmt_float(x) for x in features[i])
            f.write(f"{key_map.key_of(i)}\t{blob}\n")
