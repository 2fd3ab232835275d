"""Experimental splits and retrieval metrics.

Five offline tasks are supported: node recommendation, existence and
direction link prediction, cold-start recommendation over a node split,
and the selection-bias task whose test set is augmented with synthesized
transitive edges (co-purchase followed by co-view).

Co-view edges never enter a test set; they are auxiliary signal and stay
in training. Rankings filter out the query and its train-time co-purchase
out-neighbors by default.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

from . import retrieval
from .coldstart import ColdStartRequest, attach_and_embed, recommend_for_cold
from .graph import DirectedProductGraph, build_graph, one_way_mask
from .model import DualEmbeddings, ModelParams, embed_all
from .util import STREAM_EVAL, STREAM_SPLIT, derive_rng

DEFAULT_RATIOS = (0.75, 0.05, 0.20)
DEFAULT_KS = (5, 10, 20)

TASKS = ("node-rec", "lp-exist", "lp-dir", "coldstart", "selection-bias")


class SplitKind(enum.Enum):
    EDGE = "edge"
    NODE = "node"
    SELECTION_BIAS = "selection-bias"


@dataclass
class EvalSplit:
    kind: SplitKind
    ratios: tuple
    seed: int
    train_edges: np.ndarray | None = None
    val_edges: np.ndarray | None = None
    test_edges: np.ndarray | None = None
    synth_test_edges: np.ndarray | None = None     # selection-bias only
    train_nodes: np.ndarray | None = None          # node split only
    val_nodes: np.ndarray | None = None
    test_nodes: np.ndarray | None = None


def _check_ratios(ratios) -> tuple:
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3 or any(r < 0 for r in ratios):
        raise ValueError(f"need three non-negative ratios, got {ratios}")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"ratios must sum to 1, got {ratios}")
    return ratios


def _three_way(count: int, ratios, rng) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    order = rng.permutation(count)
    n_train = int(np.floor(ratios[0] * count))
    n_val = int(np.floor(ratios[1] * count))
    return (np.sort(order[:n_train]),
            np.sort(order[n_train:n_train + n_val]),
            np.sort(order[n_train + n_val:]))


def make_edge_split(g: DirectedProductGraph, ratios=DEFAULT_RATIOS,
                    seed: int = 0) -> EvalSplit:
    """Uniform random partition of co-purchase edges; co-view stays in train."""
    ratios = _check_ratios(ratios)
    rng = derive_rng(seed, STREAM_SPLIT)
    tr, va, te = _three_way(g.num_cp_edges, ratios, rng)
    return EvalSplit(kind=SplitKind.EDGE, ratios=ratios, seed=seed,
                     train_edges=g.cp_edges[tr],
                     val_edges=g.cp_edges[va],
                     test_edges=g.cp_edges[te])


def make_selection_bias_split(g: DirectedProductGraph, ratios=DEFAULT_RATIOS,
                              seed: int = 0) -> EvalSplit:
    """Edge split plus synthesized transitive test edges.

    For every train co-purchase edge (a, b) and co-view partner c of b,
    (a, c) joins the test set when it is not already a co-purchase edge.
    Synthesis is capped at the size of the held-out test set to keep the
    evaluation balanced.
    """
    base = make_edge_split(g, ratios, seed)
    seen = set()
    for a, b in base.train_edges:
        for c in g.cv_out.neighbors(b):
            c = int(c)
            if c == a or g.has_cp_edge(int(a), c):
                continue
            seen.add((int(a), c))
    synth = np.array(sorted(seen), dtype=np.int64).reshape(-1, 2)
    cap = len(base.test_edges)
    # balance against the held-out edges; with no held-out edges the
    # synthesized relationships are the whole test set
    if cap > 0 and len(synth) > cap:
        rng = derive_rng(seed, STREAM_SPLIT, 1)
        keep = rng.choice(len(synth), size=cap, replace=False)
        synth = synth[np.sort(keep)]
    test = np.concatenate([base.test_edges, synth]) if len(synth) \
        else base.test_edges
    return EvalSplit(kind=SplitKind.SELECTION_BIAS, ratios=base.ratios,
                     seed=seed, train_edges=base.train_edges,
                     val_edges=base.val_edges, test_edges=test,
                     synth_test_edges=synth)


def make_node_split(g: DirectedProductGraph, ratios=DEFAULT_RATIOS,
                    seed: int = 0) -> EvalSplit:
    """Node partition for the cold-start task; test nodes keep features only."""
    ratios = _check_ratios(ratios)
    rng = derive_rng(seed, STREAM_SPLIT)
    tr, va, te = _three_way(g.num_nodes, ratios, rng)
    return EvalSplit(kind=SplitKind.NODE, ratios=ratios, seed=seed,
                     train_nodes=tr, val_nodes=va, test_nodes=te)


def train_graph(g: DirectedProductGraph, split: EvalSplit,
                use_coview: bool = True) -> DirectedProductGraph:
    """The graph visible at training/inference time for a split."""
    cv = g.cv_pairs if use_coview else np.empty((0, 2), dtype=np.int64)
    if split.kind in (SplitKind.EDGE, SplitKind.SELECTION_BIAS):
        return build_graph(split.train_edges, cv, g.num_nodes)
    keep = np.zeros(g.num_nodes, dtype=bool)
    keep[split.train_nodes] = True
    cp = g.cp_edges[keep[g.cp_edges[:, 0]] & keep[g.cp_edges[:, 1]]]
    if len(cv):
        cv = cv[keep[cv[:, 0]] & keep[cv[:, 1]]]
    return build_graph(cp, cv, g.num_nodes)


# ----------------------------------------------------------------------
# Metrics
# ----------------------------------------------------------------------

@dataclass
class MetricReport:
    hitrate: dict[int, float] = field(default_factory=dict)
    mrr: dict[int, float] = field(default_factory=dict)
    auc: dict[str, float] = field(default_factory=dict)
    counts: dict[str, int] = field(default_factory=dict)

    def rows(self) -> list[tuple[str, float]]:
        out = []
        for k in sorted(self.hitrate, key=str):
            out.append((f"hitrate@{k}", self.hitrate[k]))
        for k in sorted(self.mrr, key=str):
            out.append((f"mrr@{k}", self.mrr[k]))
        for name in sorted(self.auc):
            out.append((f"auc_{name}", self.auc[name]))
        for name in sorted(self.counts):
            out.append((f"count_{name}", float(self.counts[name])))
        return out


def rank_queries(index: retrieval.EmbeddingIndex, queries, k: int,
                 filter: str = "exclude_train_neighbors",
                 threads: int = 1) -> dict[int, list[int]]:
    """Top-k ranked ids per query with the standard exclusion filter."""
    entries = retrieval.batch_recommend(index, queries, k, filter=filter,
                                        threads=threads)
    return {e.query: [i for i, _ in e.results] for e in entries}


def hitrate_mrr(rankings: dict[int, list[int]], test_edges,
                k_list=DEFAULT_KS) -> MetricReport:
    """HitRate@k and MRR@k over test edges.

    A test edge (u, v) scores a hit at k when v appears in u's top-k;
    its reciprocal rank is 1/rank when rank <= k, else 0.
    """
    test_edges = np.asarray(test_edges, dtype=np.int64).reshape(-1, 2)
    report = MetricReport(counts={"test_edges": len(test_edges)})
    ranks = []
    for u, v in test_edges:
        lst = rankings.get(int(u), [])
        try:
            ranks.append(lst.index(int(v)) + 1)
        except ValueError:
            ranks.append(0)  # not retrieved
    n = len(ranks)
    for k in k_list:
        hits = [1.0 if 0 < r <= k else 0.0 for r in ranks]
        rrs = [1.0 / r if 0 < r <= k else 0.0 for r in ranks]
        # fsum: exactly rounded, so the reduction order cannot matter
        report.hitrate[k] = math.fsum(hits) / n if n else 0.0
        report.mrr[k] = math.fsum(rrs) / n if n else 0.0
    return report


def auc_existence(scores_pos, scores_neg) -> float:
    """Mann-Whitney AUC with ties counted as 0.5."""
    pos = np.asarray(scores_pos, dtype=np.float64).reshape(-1)
    neg = np.asarray(scores_neg, dtype=np.float64).reshape(-1)
    if len(pos) == 0 or len(neg) == 0:
        raise ValueError("AUC needs at least one score on each side")
    ranks = rankdata(np.concatenate([pos, neg]))
    rank_sum = ranks[: len(pos)].sum()
    return float((rank_sum - len(pos) * (len(pos) + 1) / 2.0)
                 / (len(pos) * len(neg)))


def relevance_scores(emb: DualEmbeddings, pairs: np.ndarray) -> np.ndarray:
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    s = emb.theta_s[emb.rows_of(pairs[:, 0])]
    t = emb.theta_t[emb.rows_of(pairs[:, 1])]
    return np.sum(s * t, axis=1)


def sample_non_edges(g: DirectedProductGraph, count: int,
                     seed: int = 0) -> np.ndarray:
    """Uniform ordered pairs (u, v), u != v, absent from the co-purchase set."""
    rng = derive_rng(seed, STREAM_EVAL)
    out = []
    guard = 0
    while len(out) < count:
        u = int(rng.integers(0, g.num_nodes))
        v = int(rng.integers(0, g.num_nodes))
        guard += 1
        if guard > 1000 * max(count, 1):
            raise ValueError("graph too dense to sample non-edges")
        if u == v or g.has_cp_edge(u, v):
            continue
        out.append((u, v))
    return np.asarray(out, dtype=np.int64)


def auc_direction(g: DirectedProductGraph, test_edges: np.ndarray,
                  emb: DualEmbeddings) -> float:
    """AUC of true one-way edges scored against their reversals."""
    test_edges = np.asarray(test_edges, dtype=np.int64).reshape(-1, 2)
    ow = one_way_mask(g, test_edges)
    edges = test_edges[ow]
    if len(edges) == 0:
        raise ValueError("no one-way edges among test edges")
    pos = relevance_scores(emb, edges)
    neg = relevance_scores(emb, edges[:, ::-1])
    return auc_existence(pos, neg)


# ----------------------------------------------------------------------
# Task runners
# ----------------------------------------------------------------------

def _ranking_report(g_train, emb, test_edges, ks, threads=1) -> MetricReport:
    index = retrieval.EmbeddingIndex.build(emb, graph=g_train)
    queries = np.unique(np.asarray(test_edges)[:, 0])
    rankings = rank_queries(index, queries, k=max(ks), threads=threads)
    return hitrate_mrr(rankings, test_edges, ks)


def run_task(task: str, g: DirectedProductGraph, features: np.ndarray,
             params: ModelParams, split_seed: int = 0, ks=DEFAULT_KS,
             ratios=DEFAULT_RATIOS, batch_size: int = 1024,
             use_coview: bool = True, k_sim: int = 5,
             threads: int = 1) -> MetricReport:
    """Run one offline task end to end against a trained model.

    The split is rebuilt deterministically from (graph, split_seed), so a
    model trained against the same seed is evaluated on held-out data it
    never saw. Validation edges stay out of the inference graph.
    """
    if task not in TASKS:
        raise ValueError(f"unknown task {task!r}; expected one of {TASKS}")
    if task in ("node-rec", "lp-exist", "lp-dir"):
        split = make_edge_split(g, ratios, split_seed)
        g_train = train_graph(g, split, use_coview=use_coview)
        emb = embed_all(g_train, features, params, batch_size=batch_size)
        if task == "node-rec":
            return _ranking_report(g_train, emb, split.test_edges, ks, threads)
        if task == "lp-exist":
            pos = relevance_scores(emb, split.test_edges)
            non_edges = sample_non_edges(g, len(split.test_edges), split_seed)
            neg = relevance_scores(emb, non_edges)
            report = MetricReport(counts={"test_edges": len(pos),
                                          "non_edges": len(neg)})
            report.auc["existence"] = auc_existence(pos, neg)
            return report
        ow = one_way_mask(g, split.test_edges)
        report = MetricReport(counts={"one_way_test_edges": int(ow.sum())})
        report.auc["direction"] = auc_direction(g, split.test_edges, emb)
        return report

    if task == "selection-bias":
        split = make_selection_bias_split(g, ratios, split_seed)
        g_train = train_graph(g, split, use_coview=use_coview)
        emb = embed_all(g_train, features, params, batch_size=batch_size)
        report = _ranking_report(g_train, emb, split.test_edges, ks, threads)
        synth = split.synth_test_edges
        if synth is not None and len(synth):
            sub = _ranking_report(g_train, emb, synth, ks, threads)
            for k in ks:
                report.hitrate[f"{k}_synth"] = sub.hitrate[k]
                report.mrr[f"{k}_synth"] = sub.mrr[k]
            report.counts["synth_test_edges"] = len(synth)
        return report

    # cold-start over a node split
    split = make_node_split(g, ratios, split_seed)
    g_train = train_graph(g, split, use_coview=use_coview)
    emb = embed_all(g_train, features, params, batch_size=batch_size)
    index = retrieval.EmbeddingIndex.build(emb, graph=g_train)
    train_set = np.zeros(g.num_nodes, dtype=bool)
    train_set[split.train_nodes] = True
    non_train = np.flatnonzero(~train_set)
    rankings: dict[int, list[int]] = {}
    test_edges = []
    k_max = max(ks)
    for c in split.test_nodes:
        targets = [int(v) for v in g.cp_out.neighbors(int(c)) if train_set[v]]
        if not targets:
            continue
        req = ColdStartRequest(key=f"cold-{c}", features=features[int(c)],
                               k_sim=k_sim)
        theta_s, _theta_t, _warm = attach_and_embed(
            g_train, features, params, req, eligible=split.train_nodes)
        recs = recommend_for_cold(theta_s, index, k_max, exclude=non_train)
        rankings[int(c)] = [i for i, _ in recs]
        test_edges.extend((int(c), v) for v in targets)
    if not test_edges:
        raise ValueError("node split produced no evaluable cold-start edges")
    report = hitrate_mrr(rankings, np.asarray(test_edges), ks)
    report.counts["cold_queries"] = len(rankings)
    return report
