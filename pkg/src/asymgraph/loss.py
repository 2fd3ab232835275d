"""Six-term asymmetric training loss and its embedding gradients.

Term layout over a batch:

  1. attract source(u) to target(v) for every co-purchase edge (u, v)
  2. repel source(u) from target(z) for each sampled negative z
  3. re-attract source(u) to target(v) for one-way co-purchase edges
  4. repel source(v) from target(u) for one-way co-purchase edges
  5. attract source(u) to source(v) for co-view pairs
  6. attract target(u) to target(v) for co-view pairs

Each attract term is log sigmoid(dot); repel terms use the literal
log sigmoid(1 - dot) form by default (`negative_form="one_minus_dot"`),
with the conventional log sigmoid(-dot) form available as
"negated_dot". The returned
total is the negated sum, so it is always >= 0. One-way edges contribute
to both terms 1 and 3, matching the printed sums.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

NEGATIVE_FORMS = ("one_minus_dot", "negated_dot")
NUM_TERMS = 6


@dataclass
class LossBatch:
    """Edge material for one loss evaluation; all ids must be embedded."""

    cp_edges: np.ndarray          # (m, 2) directed co-purchase edges
    one_way: np.ndarray           # (m,) bool, reverse edge absent
    cv_pairs: np.ndarray          # (c, 2) unordered co-view pairs
    negatives: np.ndarray         # (m, n_k) sampled ids per positive

    def __post_init__(self):
        self.cp_edges = np.asarray(self.cp_edges, dtype=np.int64).reshape(-1, 2)
        self.one_way = np.asarray(self.one_way, dtype=bool).reshape(-1)
        self.cv_pairs = np.asarray(self.cv_pairs, dtype=np.int64).reshape(-1, 2)
        m = len(self.cp_edges)
        neg = np.asarray(self.negatives, dtype=np.int64)
        if neg.size == 0:
            neg = neg.reshape(m, 0) if m else neg.reshape(0, 1)
        else:
            neg = neg.reshape(m, -1)
        self.negatives = neg
        if len(self.one_way) != m:
            raise ValueError("one_way flags must align with cp_edges")

    @classmethod
    def empty(cls) -> "LossBatch":
        z = np.empty((0, 2), dtype=np.int64)
        return cls(z, np.empty(0, dtype=bool), z.copy(),
                   np.empty((0, 1), dtype=np.int64))


@dataclass
class LossValue:
    """Negated total plus the six raw log-likelihood sums (each <= 0)."""

    total: float
    terms: np.ndarray

    @property
    def per_term_loss(self) -> np.ndarray:
        return -self.terms


def log_sigmoid(x: np.ndarray) -> np.ndarray:
    """Numerically stable log of the logistic function."""
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = -np.log1p(np.exp(-x[pos]))
    out[~pos] = x[~pos] - np.log1p(np.exp(x[~pos]))
    return out


def sigmoid(x: np.ndarray) -> np.ndarray:
    return np.exp(log_sigmoid(x))


def _repel_arg(dots: np.ndarray, negative_form: str) -> np.ndarray:
    if negative_form == "one_minus_dot":
        return 1.0 - dots
    return -dots


def _gather(emb, channel: str, nodes: np.ndarray) -> np.ndarray:
    mat = emb.theta_s if channel == "s" else emb.theta_t
    return mat[emb.rows_of(nodes)]


def _term_dots(emb, batch: LossBatch):
    """Dot products feeding each term, in term order."""
    e = batch.cp_edges
    ow = batch.one_way
    cv = batch.cv_pairs
    s_u = _gather(emb, "s", e[:, 0]) if len(e) else np.empty((0, 1))
    t_v = _gather(emb, "t", e[:, 1]) if len(e) else np.empty((0, 1))
    d1 = np.sum(s_u * t_v, axis=1)
    if batch.negatives.size:
        z = batch.negatives
        t_z = _gather(emb, "t", z.ravel()).reshape(z.shape[0], z.shape[1], -1)
        d2 = np.sum(s_u[:, None, :] * t_z, axis=2).ravel()
    else:
        d2 = np.empty(0)
    d3 = d1[ow]
    if ow.any():
        s_v = _gather(emb, "s", e[ow, 1])
        t_u = _gather(emb, "t", e[ow, 0])
        d4 = np.sum(s_v * t_u, axis=1)
    else:
        d4 = np.empty(0)
    if len(cv):
        s_a, s_b = _gather(emb, "s", cv[:, 0]), _gather(emb, "s", cv[:, 1])
        t_a, t_b = _gather(emb, "t", cv[:, 0]), _gather(emb, "t", cv[:, 1])
        d5 = np.sum(s_a * s_b, axis=1)
        d6 = np.sum(t_a * t_b, axis=1)
    else:
        d5 = np.empty(0)
        d6 = np.empty(0)
    return d1, d2, d3, d4, d5, d6


def asymmetric_loss(emb, batch: LossBatch, weights=None,
                    negative_form: str = "one_minus_dot") -> LossValue:
    """Evaluate the loss; `weights` optionally scales the six terms."""
    if negative_form not in NEGATIVE_FORMS:
        raise ValueError(f"negative_form must be one of {NEGATIVE_FORMS}")
    w = np.ones(NUM_TERMS) if weights is None else np.asarray(weights, dtype=np.float64)
    if w.shape != (NUM_TERMS,):
        raise ValueError(f"expected {NUM_TERMS} term weights")
    d1, d2, d3, d4, d5, d6 = _term_dots(emb, batch)
    terms = np.array([
        log_sigmoid(d1).sum(),
        log_sigmoid(_repel_arg(d2, negative_form)).sum(),
        log_sigmoid(d3).sum(),
        log_sigmoid(_repel_arg(d4, negative_form)).sum(),
        log_sigmoid(d5).sum(),
        log_sigmoid(d6).sum(),
    ])
    return LossValue(total=float(-(w * terms).sum()), terms=terms)


def loss_grad(emb, batch: LossBatch, weights=None,
              negative_form: str = "one_minus_dot"):
    """Gradients of the negated total w.r.t. the embedding rows.

    Attract terms contribute (sigmoid(dot) - 1) times the opposite row;
    repel terms contribute the derivative of -log sigmoid(1 - dot),
    which is 1 - sigmoid(1 - dot), times the opposite row (or the
    mirrored sign for the conventional -dot form). Returns (grad_s,
    grad_t) aligned with the embedding rows.
    """
    if negative_form not in NEGATIVE_FORMS:
        raise ValueError(f"negative_form must be one of {NEGATIVE_FORMS}")
    w = np.ones(NUM_TERMS) if weights is None else np.asarray(weights, dtype=np.float64)
    gs = np.zeros_like(emb.theta_s)
    gt = np.zeros_like(emb.theta_t)
    e = batch.cp_edges
    ow = batch.one_way
    cv = batch.cv_pairs

    def attract_coeff(dots):
        # d/ddot of -log sigmoid(dot)
        return sigmoid(dots) - 1.0

    def repel_coeff(dots):
        # d/ddot of -log sigmoid(repel_arg(dot))
        if negative_form == "one_minus_dot":
            return 1.0 - sigmoid(1.0 - dots)
        return sigmoid(dots)

    def accumulate(grad, rows, coeff, vecs):
        np.add.at(grad, rows, coeff[:, None] * vecs)

    if len(e):
        u_rows = emb.rows_of(e[:, 0])
        v_rows = emb.rows_of(e[:, 1])
        s_u = emb.theta_s[u_rows]
        t_v = emb.theta_t[v_rows]
        d1 = np.sum(s_u * t_v, axis=1)
        c1 = w[0] * attract_coeff(d1)
        accumulate(gs, u_rows, c1, t_v)
        accumulate(gt, v_rows, c1, s_u)
        if batch.negatives.size:
            z = batch.negatives
            z_rows = emb.rows_of(z.ravel())
            t_z = emb.theta_t[z_rows]
            s_u_rep = np.repeat(s_u, z.shape[1], axis=0)
            u_rows_rep = np.repeat(u_rows, z.shape[1])
            d2 = np.sum(s_u_rep * t_z, axis=1)
            c2 = w[1] * repel_coeff(d2)
            accumulate(gs, u_rows_rep, c2, t_z)
            accumulate(gt, z_rows, c2, s_u_rep)
        if ow.any():
            uo_rows, vo_rows = u_rows[ow], v_rows[ow]
            d3 = d1[ow]
            c3 = w[2] * attract_coeff(d3)
            accumulate(gs, uo_rows, c3, emb.theta_t[vo_rows])
            accumulate(gt, vo_rows, c3, emb.theta_s[uo_rows])
            s_v = emb.theta_s[vo_rows]
            t_u = emb.theta_t[uo_rows]
            d4 = np.sum(s_v * t_u, axis=1)
            c4 = w[3] * repel_coeff(d4)
            accumulate(gs, vo_rows, c4, t_u)
            accumulate(gt, uo_rows, c4, s_v)
    if len(cv):
        a_rows = emb.rows_of(cv[:, 0])
        b_rows = emb.rows_of(cv[:, 1])
        s_a, s_b = emb.theta_s[a_rows], emb.theta_s[b_rows]
        t_a, t_b = emb.theta_t[a_rows], emb.theta_t[b_rows]
        c5 = w[4] * attract_coeff(np.sum(s_a * s_b, axis=1))
        accumulate(gs, a_rows, c5, s_b)
        accumulate(gs, b_rows, c5, s_a)
        c6 = w[5] * attract_coeff(np.sum(t_a * t_b, axis=1))
        accumulate(gt, a_rows, c6, t_b)
        accumulate(gt, b_rows, c6, t_a)
    return gs, gt
