"""Layer-wise neighbor sampling for the dual-channel forward pass.

For a batch of seed nodes we materialize, layer by layer, the frontier
each channel needs:

  * source channel of u pulls from cp out-neighbors (their target channel)
    and cv out-neighbors (their source channel);
  * target channel of u pulls from cp in-neighbors (their source channel)
    and cv in-neighbors (their target channel).

Per (relation, direction) a node keeps all neighbors when their count is
within the layer cap, otherwise a uniform sample without replacement of
exactly the cap. Everything is deterministic given the seed.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .graph import DirectedProductGraph
from .util import derive_rng

DEFAULT_FANOUTS = (20, 10, 10)

SOURCE = "s"
TARGET = "t"


@dataclass
class LayerBlock:
    """Sampled sub-adjacency feeding one (layer, channel) frontier.

    nodes[i]'s sampled neighbors sit in flat arrays between ptr[i] and
    ptr[i+1]; *_rows index directly into the previous layer's value matrix
    for the feeding channel (cp feeds the opposite channel, cv the same).
    """

    nodes: np.ndarray
    cp_ptr: np.ndarray
    cp_nbrs: np.ndarray
    cp_rows: np.ndarray
    cv_ptr: np.ndarray
    cv_nbrs: np.ndarray
    cv_rows: np.ndarray


@dataclass
class ComputationBlocks:
    seeds: np.ndarray  # sorted unique; output rows align with this
    num_layers: int
    # levels[0] holds input frontiers (adjacency arrays empty);
    # levels[l][channel] for l in 1..num_layers.
    levels: list[dict[str, LayerBlock]]


def _empty_block(nodes: np.ndarray) -> LayerBlock:
    z = np.zeros(len(nodes) + 1, dtype=np.int64)
    e = np.empty(0, dtype=np.int64)
    return LayerBlock(nodes, z, e, e, z.copy(), e, e)


def _sample_rows(adj, nodes, cap, rng) -> tuple[np.ndarray, np.ndarray]:
    """Concatenated sampled neighbor lists plus CSR offsets."""
    ptr = np.zeros(len(nodes) + 1, dtype=np.int64)
    chunks = []
    for i, u in enumerate(nodes):
        nbrs = adj.neighbors(u)
        if cap is not None and len(nbrs) > cap:
            sel = rng.choice(len(nbrs), size=cap, replace=False)
            nbrs = nbrs[np.sort(sel)]
        ptr[i + 1] = ptr[i] + len(nbrs)
        chunks.append(nbrs)
    flat = np.concatenate(chunks) if chunks else np.empty(0, dtype=np.int64)
    return ptr, flat.astype(np.int64)


def sample_blocks(g: DirectedProductGraph, seeds, fanouts,
                  rng_seed: int | None = 0) -> ComputationBlocks:
    """Build the per-layer computation blocks for both channels.

    fanouts lists per-layer caps outermost first (seed-adjacent hop
    first); a cap of None, or fanouts=None with an explicit layer count,
    keeps full neighborhoods. With all caps slack no randomness is drawn,
    so full-fanout blocks are seed-independent.
    """
    if isinstance(fanouts, int):
        raise TypeError("fanouts must be a sequence of per-layer caps")
    caps = list(fanouts)
    num_layers = len(caps)
    if num_layers < 1:
        raise ValueError("need at least one layer")
    if any(c is not None and c < 1 for c in caps):
        raise ValueError(f"fanout caps must be >= 1, got {caps}")
    seeds = np.unique(np.asarray(seeds, dtype=np.int64))
    if len(seeds) == 0:
        raise ValueError("seeds must be non-empty")
    if seeds[0] < 0 or seeds[-1] >= g.num_nodes:
        raise IndexError("seed id out of range")
    rng = derive_rng(rng_seed) if rng_seed is not None else None

    levels: list[dict[str, LayerBlock] | None] = [None] * (num_layers + 1)
    need = {SOURCE: seeds, TARGET: seeds}
    for l in range(num_layers, 0, -1):
        cap = caps[num_layers - l]
        s_nodes, t_nodes = need[SOURCE], need[TARGET]
        s_cp_ptr, s_cp = _sample_rows(g.cp_out, s_nodes, cap, rng)
        s_cv_ptr, s_cv = _sample_rows(g.cv_out, s_nodes, cap, rng)
        t_cp_ptr, t_cp = _sample_rows(g.cp_in, t_nodes, cap, rng)
        t_cv_ptr, t_cv = _sample_rows(g.cv_in, t_nodes, cap, rng)
        levels[l] = {
            SOURCE: LayerBlock(s_nodes, s_cp_ptr, s_cp, None, s_cv_ptr, s_cv, None),
            TARGET: LayerBlock(t_nodes, t_cp_ptr, t_cp, None, t_cv_ptr, t_cv, None),
        }
        need = {
            # cv keeps the channel, cp flips it
            SOURCE: np.unique(np.concatenate([s_cv, t_cp])),
            TARGET: np.unique(np.concatenate([s_cp, t_cv])),
        }
    levels[0] = {ch: _empty_block(need[ch]) for ch in (SOURCE, TARGET)}

    # Resolve neighbor ids to row indices in the feeding frontier.
    for l in range(1, num_layers + 1):
        below = levels[l - 1]
        for ch in (SOURCE, TARGET):
            blk = levels[l][ch]
            other = TARGET if ch == SOURCE else SOURCE
            blk.cp_rows = np.searchsorted(below[other].nodes, blk.cp_nbrs)
            blk.cv_rows = np.searchsorted(below[ch].nodes, blk.cv_nbrs)
    return ComputationBlocks(seeds=seeds, num_layers=num_layers, levels=levels)


def full_blocks(g: DirectedProductGraph, seeds, num_layers: int) -> ComputationBlocks:
    """Unsampled blocks (every neighbor kept at every layer)."""
    return sample_blocks(g, seeds, [None] * num_layers, rng_seed=None)


def sample_negatives(g: DirectedProductGraph, pos_edges, n_k: int,
                     rng_seed: int = 0,
                     exclude_positives: bool = True) -> np.ndarray:
    """Uniform negatives per positive co-purchase edge.

    For each positive (u, v) draws n_k distinct ids z uniformly from the
    catalog, rejecting u itself and, by default, u's known co-purchase
    out-neighbors. If fewer legal ids than n_k exist the draw falls back
    to sampling with replacement and warns.

    Returns an (len(pos_edges), n_k) id array.
    """
    if n_k < 1:
        raise ValueError("n_k must be >= 1")
    pos = np.asarray(pos_edges, dtype=np.int64).reshape(-1, 2)
    rng = derive_rng(rng_seed)
    n = g.num_nodes
    out = np.empty((len(pos), n_k), dtype=np.int64)
    for i, (u, _v) in enumerate(pos):
        if exclude_positives:
            excl = np.concatenate([[u], g.cp_out.neighbors(u)])
        else:
            excl = np.asarray([u])
        excl = np.unique(excl)
        legal = n - len(excl)
        if legal < n_k:
            warnings.warn(
                f"node {u}: only {legal} legal negatives for n_k={n_k}; "
                "sampling with replacement", stacklevel=2)
            allowed = np.setdiff1d(np.arange(n), excl)
            if len(allowed) == 0:
                # every non-self id is a known positive; z != u is the one
                # hard requirement, so fall back to that alone
                allowed = np.setdiff1d(np.arange(n), np.asarray([u]))
            if len(allowed) == 0:
                raise ValueError(
                    f"cannot sample negatives: node {u} is the whole catalog")
            out[i] = rng.choice(allowed, size=n_k, replace=True)
            continue
        picked: list[int] = []
        seen = set()
        while len(picked) < n_k:
            draws = rng.integers(0, n, size=max(2 * (n_k - len(picked)), 8))
            ok = draws[~np.isin(draws, excl)]
            for z in ok:
                if z not in seen:
                    seen.add(int(z))
                    picked.append(int(z))
                    if len(picked) == n_k:
                        break
        out[i] = picked
    return out
