"""Loss terms of the training objective, all built from autodiff primitives.

``cross_entropy``  soft-target CE averaged over samples
``supcon``         supervised contrastive loss summed over anchors
``spd_loss``       squared between-group gap of mean class probabilities
``distill``        temperature-tempered teacher/student cross-entropy, summed
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from fairdd import autodiff as ad

ROW_TOL = 1e-6
UNIT_TOL = 1e-6


class LossInputError(ValueError):
    pass


@dataclass(frozen=True)
class LossWeights:
    alpha: float = 1.0
    beta: float = 1.0
    tau: float = 0.07
    T: float = 2.0

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise ValueError(f"loss weights must be nonnegative (alpha={self.alpha}, beta={self.beta})")
        if self.tau <= 0 or self.T <= 0:
            raise ValueError(f"temperatures must be positive (tau={self.tau}, T={self.T})")


@dataclass(frozen=True)
class LossBreakdown:
    ce: float
    sup: float
    dis: float
    spd: float
    total: float

    def as_dict(self) -> dict[str, float]:
        return {"ce": self.ce, "sup": self.sup, "dis": self.dis, "spd": self.spd, "total": self.total}


class SPDResult(NamedTuple):
    loss: ad.Node
    degenerate: bool


def _check_rows(name: str, m: np.ndarray) -> None:
    if m.ndim != 2:
        raise LossInputError(f"{name}: expected an N x U matrix, got shape {m.shape}")
    if np.any(m < -ROW_TOL):
        raise LossInputError(f"{name}: negative probabilities")
    bad = np.abs(m.sum(axis=1) - 1.0) > ROW_TOL
    if np.any(bad):
        raise LossInputError(f"{name}: rows {np.flatnonzero(bad).tolist()} do not sum to 1")


def _row_scale(m: ad.Node, col: ad.Node) -> ad.Node:
    """Multiply each row of ``m`` by the matching entry of column ``col`` (N x 1)."""
    ones = ad.constant(np.ones((1, m.shape[1])))
    return ad.mul(m, ad.matmul(col, ones))


def cross_entropy(p, q: ad.Node) -> ad.Node:
    p = ad.as_node(p)
    _check_rows("cross_entropy target", p.value)
    _check_rows("cross_entropy prediction", q.value)
    if p.shape != q.shape:
        raise ad.ShapeError(f"cross_entropy: target {p.shape} vs prediction {q.shape}")
    n = q.shape[0]
    return ad.scale(ad.sum(ad.mul(p, ad.log(q))), -1.0 / n)


def _supcon_parts(z: ad.Node, labels, tau: float):
    labels = np.asarray(labels)
    n = z.shape[0]
    if n < 2 or labels.shape != (n,):
        raise LossInputError(f"supcon needs >= 2 samples with one label each (got {n}, {labels.shape})")
    norms = np.linalg.norm(z.value, axis=1)
    if np.any(np.abs(norms - 1.0) > UNIT_TOL):
        raise LossInputError("supcon: embeddings must be unit-norm rows")

    others = ~np.eye(n, dtype=bool)
    pos = (labels[:, None] == labels[None, :]) & others
    n_pos = pos.sum(axis=1)

    sims = ad.scale(ad.matmul(z, ad.transpose(z)), 1.0 / tau)
    # unit rows bound sims by 1/tau; subtracting it keeps exp in range
    shifted = ad.add(sims, ad.constant(np.full((1, n), -1.0 / tau)))
    denom = ad.sum(ad.mul(ad.exp(shifted), ad.constant(others.astype(float))), axis=1, keepdims=True)
    log_denom = ad.matmul(ad.log(denom), ad.constant(np.ones((1, n))))
    neg_log_prob = ad.add(log_denom, ad.scale(shifted, -1.0))
    return neg_log_prob, pos, n_pos


def supcon_pair_terms(z: ad.Node, labels, tau: float = 0.07) -> tuple[np.ndarray, np.ndarray]:
    """Per (anchor, positive) terms ``-log softmax share`` and the positive mask."""
    terms, pos, _ = _supcon_parts(z, labels, tau)
    return terms.value, pos


def supcon(z: ad.Node, labels, tau: float = 0.07) -> ad.Node:
    """Supervised contrastive loss, summed over anchors; anchors without positives add 0."""
    neg_log_prob, pos, n_pos = _supcon_parts(z, labels, tau)
    weight = np.zeros(pos.shape)
    has = n_pos > 0
    weight[has] = pos[has] / n_pos[has, None]
    return ad.sum(ad.mul(neg_log_prob, ad.constant(weight)))


def spd_loss(q: ad.Node, attrs) -> SPDResult:
    attrs = np.asarray(attrs)
    if attrs.shape != (q.shape[0],):
        raise ad.ShapeError(f"spd_loss: {q.shape[0]} rows but {attrs.shape} attributes")
    g0 = attrs == 0
    g1 = attrs == 1
    if not g0.any() or not g1.any():
        return SPDResult(ad.constant(0.0), True)
    w = (g0 / g0.sum() - g1 / g1.sum())[None, :]
    gap = ad.matmul(ad.constant(w), q)
    return SPDResult(ad.sum(ad.power(gap, 2.0)), False)


def temper(q: ad.Node, T: float) -> ad.Node:
    """Raise probabilities to 1/T and renormalize over classes."""
    powered = ad.power(q, 1.0 / T)
    inv_total = ad.power(ad.sum(powered, axis=1, keepdims=True), -1.0)
    return _row_scale(powered, inv_total)


def distill(q_t, q_s: ad.Node, T: float = 2.0) -> ad.Node:
    q_t = ad.constant(ad.as_node(q_t).value)  # teacher is a constant
    _check_rows("distill teacher", q_t.value)
    _check_rows("distill student", q_s.value)
    if q_t.shape != q_s.shape:
        raise ad.ShapeError(f"distill: teacher {q_t.shape} vs student {q_s.shape}")
    soft_t = temper(q_t, T)
    soft_s = temper(q_s, T)
    return ad.scale(ad.sum(ad.mul(soft_t, ad.log(soft_s))), -1.0)


def combine(ce, sup, dis, spd, weights: LossWeights):
    """Weighted total ``ce + sup + alpha*dis + beta*spd``.

    Accepts floats or Nodes; ``dis`` may be None when there is no teacher.
    Returns ``(total, LossBreakdown)`` where ``total`` is a Node if any input is.
    """
    if weights.alpha < 0 or weights.beta < 0:
        raise ValueError("negative loss weights")
    terms = [(1.0, ce), (1.0, sup), (weights.alpha, dis), (weights.beta, spd)]
    total = None
    for w, t in terms:
        if t is None or w == 0:
            continue
        piece = ad.scale(ad.as_node(t), w) if w != 1.0 else ad.as_node(t)
        total = piece if total is None else ad.add(total, piece)
    if total is None:
        total = ad.constant(0.0)

    def val(t):
        return 0.0 if t is None else float(ad.as_node(t).value)

    parts = [val(ce), val(sup), val(dis), val(spd)]
    recomputed = parts[0] + parts[1] + weights.alpha * parts[2] + weights.beta * parts[3]
    bd = LossBreakdown(*parts, total=recomputed)
    return total, bd
