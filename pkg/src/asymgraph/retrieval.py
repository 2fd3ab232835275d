"""Top-k retrieval over trained embeddings.

Related-product queries score source(q) . target(v); similar-product
queries score source(q) . source(v). The default engine is an exact full
scan; an optional partition-based approximate engine hides behind the
same interface. Ties break by ascending id so results are deterministic.
"""

from __future__ import annotations

import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.cluster.vq import kmeans2

from .graph import DirectedProductGraph, KeyMap
from .model import DualEmbeddings

FILTERS = ("none", "exclude_query", "exclude_train_neighbors")
MODES = ("exact", "approximate")


@dataclass
class _Partitions:
    centroids: np.ndarray
    members: list[np.ndarray]


@dataclass
class EmbeddingIndex:
    theta_s: np.ndarray
    theta_t: np.ndarray
    key_map: KeyMap | None = None
    graph: DirectedProductGraph | None = None
    mode: str = "exact"
    nprobe: int = 8
    _parts_t: _Partitions | None = field(default=None, repr=False)
    _parts_s: _Partitions | None = field(default=None, repr=False)

    @property
    def num_products(self) -> int:
        return self.theta_t.shape[0]

    @classmethod
    def build(cls, emb: DualEmbeddings, key_map: KeyMap | None = None,
              graph: DirectedProductGraph | None = None, mode: str = "exact",
              num_clusters: int | None = None, nprobe: int = 8,
              seed: int = 0) -> "EmbeddingIndex":
        if mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        idx = cls(theta_s=emb.theta_s, theta_t=emb.theta_t,
                  key_map=key_map, graph=graph, mode=mode, nprobe=nprobe)
        if mode == "approximate":
            n = idx.num_products
            k = num_clusters or max(1, int(np.sqrt(n)))
            idx._parts_t = _partition(emb.theta_t, k, seed)
            idx._parts_s = _partition(emb.theta_s, k, seed + 1)
        return idx

    def _check_query(self, q: int) -> None:
        if not 0 <= q < self.num_products:
            raise KeyError(f"unknown product id {q}")


def _partition(mat: np.ndarray, k: int, seed: int) -> _Partitions:
    k = min(k, len(mat)) or 1
    centroids, labels = kmeans2(mat, k, minit="++", seed=seed)
    members = [np.flatnonzero(labels == c) for c in range(len(centroids))]
    return _Partitions(centroids=centroids, members=members)


def _exclusions(index: EmbeddingIndex, q: int, filter: str) -> np.ndarray:
    if filter not in FILTERS:
        raise ValueError(f"filter must be one of {FILTERS}")
    if filter == "none":
        return np.empty(0, dtype=np.int64)
    if filter == "exclude_query":
        return np.asarray([q], dtype=np.int64)
    if index.graph is None:
        raise ValueError("exclude_train_neighbors requires an index built "
                         "with the training graph")
    return np.unique(np.concatenate([[q], index.graph.cp_out.neighbors(q)]))


def top_k_by_score(scores: np.ndarray, k: int,
                   exclude: np.ndarray) -> list[tuple[int, float]]:
    """Best k by descending score, ties by ascending id, minus exclusions.

    Excluded ids are pushed to -inf, which no real score can reach since
    embeddings are finite, so they sort past every legal candidate.
    """
    if len(exclude):
        scores = scores.copy()
        scores[exclude] = -np.inf
    n = len(scores)
    order = np.lexsort((np.arange(n), -scores))
    out = []
    for i in order:
        if np.isneginf(scores[i]):
            break  # only exclusions remain
        out.append((int(i), float(scores[i])))
        if len(out) == min(k, n):
            break
    return out


def _query_vector(index: EmbeddingIndex, q: int) -> np.ndarray:
    vec = index.theta_s[q]
    if not np.any(vec):
        warnings.warn(f"query {q} has a zero embedding; returning no results",
                      stacklevel=3)
    return vec


def _scan_exact(index: EmbeddingIndex, vec: np.ndarray,
                target: np.ndarray, k: int, exclude: np.ndarray):
    return top_k_by_score(target @ vec, k, exclude)


def _scan_approximate(index: EmbeddingIndex, vec: np.ndarray,
                      parts: _Partitions, target: np.ndarray, k: int,
                      exclude: np.ndarray):
    scores = parts.centroids @ vec
    probe = np.argsort(-scores, kind="stable")[: index.nprobe]
    cand = np.concatenate([parts.members[c] for c in probe]) \
        if len(probe) else np.empty(0, dtype=np.int64)
    if len(cand) == 0:
        return []
    cand_scores = target[cand] @ vec
    full = np.full(index.num_products, -np.inf)
    full[cand] = cand_scores
    return top_k_by_score(full, k, exclude)


def _recommend(index: EmbeddingIndex, q: int, k: int, filter: str,
               target: np.ndarray, parts: _Partitions | None):
    index._check_query(q)
    if k < 1:
        raise ValueError("k must be >= 1")
    vec = _query_vector(index, q)
    if not np.any(vec):
        return []
    exclude = _exclusions(index, q, filter)
    if index.mode == "approximate" and parts is not None:
        return _scan_approximate(index, vec, parts, target, k, exclude)
    return _scan_exact(index, vec, target, k, exclude)


def recommend_related(index: EmbeddingIndex, q: int, k: int,
                      filter: str = "none") -> list[tuple[int, float]]:
    """Top-k related products for query q by source(q) . target(v)."""
    return _recommend(index, q, k, filter, index.theta_t, index._parts_t)


def recommend_similar(index: EmbeddingIndex, q: int, k: int,
                      filter: str = "exclude_query") -> list[tuple[int, float]]:
    """Top-k similar products by source(q) . source(v); the query itself
    is excluded by default since a unit vector is its own argmax."""
    return _recommend(index, q, k, filter, index.theta_s, index._parts_s)


@dataclass
class BatchEntry:
    query: int
    results: list[tuple[int, float]] = field(default_factory=list)
    error: str | None = None


def batch_recommend(index: EmbeddingIndex, queries, k: int,
                    filter: str = "none", mode: str = "related",
                    threads: int = 1) -> list[BatchEntry]:
    """Per-query recommendations; unknown ids become per-query error
    entries while the rest proceed."""
    fn = recommend_related if mode == "related" else recommend_similar

    def run_one(q) -> BatchEntry:
        try:
            return BatchEntry(query=int(q), results=fn(index, int(q), k, filter))
        except KeyError as exc:
            return BatchEntry(query=int(q), error=str(exc))

    queries = list(queries)
    if threads > 1 and len(queries) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(run_one, queries))
    return [run_one(q) for q in queries]
