"""Cold-start embedding: attach a new product to feature-similar warm
products and run the trained model over the augmented neighborhood.

The base graph and warm embeddings are never touched; each request works
against a private overlay, so concurrent cold products cannot interact.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from . import retrieval
from .graph import DirectedProductGraph, build_graph
from .model import ModelParams, forward
from .sampler import full_blocks


@dataclass
class ColdStartRequest:
    key: str
    features: np.ndarray
    k_sim: int = 5
    relation: str = "cv"   # "cp" available for ablation

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64).reshape(-1)
        if self.k_sim < 1:
            raise ValueError("k_sim must be >= 1")
        if self.relation not in ("cv", "cp"):
            raise ValueError("relation must be 'cv' or 'cp'")
        if not np.isfinite(self.features).all():
            raise ValueError("cold-start feature vector must be finite")
        if not np.any(self.features):
            raise ValueError("cold-start feature vector is all zeros")


def find_warm_neighbors(features: np.ndarray, vec: np.ndarray, k_sim: int,
                        eligible: np.ndarray | None = None) -> np.ndarray:
    """Top warm products by cosine similarity of input features, ties by id.

    `eligible` optionally restricts the candidate pool (e.g. to train
    nodes when held-out nodes share the feature matrix).
    """
    if vec.shape[0] != features.shape[1]:
        raise ValueError(
            f"feature dim mismatch: cold {vec.shape[0]}, warm {features.shape[1]}")
    norms = np.linalg.norm(features, axis=1)
    safe = np.where(norms > 0, norms, 1.0)
    cos = (features @ vec) / (safe * np.linalg.norm(vec))
    if eligible is not None:
        mask = np.zeros(len(cos), dtype=bool)
        mask[eligible] = True
        cos = np.where(mask, cos, -np.inf)
    order = np.lexsort((np.arange(len(cos)), -cos))
    order = order[~np.isneginf(cos[order])]
    return order[: min(k_sim, len(order))].astype(np.int64)


def attach_and_embed(g: DirectedProductGraph, features: np.ndarray,
                     params: ModelParams, req: ColdStartRequest,
                     eligible: np.ndarray | None = None):
    """Embed one cold product via a temporary edge overlay.

    Returns (theta_s, theta_t, warm_ids). The overlay adds symmetric
    co-view edges (or directed co-purchase edges under the ablation flag)
    from the cold node to its feature-nearest warm products, then runs
    the full-neighborhood forward pass for the cold node only.
    """
    warm = find_warm_neighbors(features, req.features, req.k_sim,
                               eligible=eligible)
    if len(warm) == 0:
        raise ValueError("no eligible warm products to attach to")
    cold_id = g.num_nodes
    extra = np.stack([np.full(len(warm), cold_id, dtype=np.int64), warm], axis=1)
    if req.relation == "cv":
        overlay = build_graph(g.cp_edges,
                              np.concatenate([g.cv_pairs, extra]) if len(g.cv_pairs)
                              else extra,
                              g.num_nodes + 1)
    else:
        overlay = build_graph(np.concatenate([g.cp_edges, extra]) if len(g.cp_edges)
                              else extra,
                              g.cv_pairs, g.num_nodes + 1)
    aug_features = np.vstack([features, req.features[None, :]])
    blocks = full_blocks(overlay, [cold_id], params.num_layers)
    emb = forward(blocks, aug_features, params)
    return emb.theta_s[0], emb.theta_t[0], warm


def recommend_for_cold(theta_s_cold: np.ndarray,
                       index: retrieval.EmbeddingIndex, k: int,
                       exclude=None) -> list[tuple[int, float]]:
    """Rank warm products for a cold query vector; same contract as
    related-product retrieval, with an optional id exclusion list."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if not np.any(theta_s_cold):
        warnings.warn("cold product has a zero embedding; returning no results",
                      stacklevel=2)
        return []
    scores = index.theta_t @ theta_s_cold
    excl = np.empty(0, dtype=np.int64) if exclude is None \
        else np.asarray(exclude, dtype=np.int64)
    return retrieval.top_k_by_score(scores, k, excl)
