"""Training objectives with analytic gradients w.r.t. their feature inputs.

Every loss returns a LossOutput carrying the scalar value and a dict of
gradients, one entry per differentiable input, with matching shapes.
Text embedding batches are treated as constants: no gradient ever flows
into narration vectors.

Notation: for batches Z1, Z2 (N x d) let A[i, j] = <z1_i, z2_j> / tau.
The InfoNCE direction is the mean diagonal negative log-softmax of A;
the decoupled direction drops the diagonal term from the denominator and
may therefore go negative.  The weighted alignment direction multiplies
each positive term by a per-pair semantic weight with batch mean one.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .exceptions import (
    BatchTooSmallError,
    LabelOutOfRangeError,
    ShapeMismatchError,
)
from .numerics import as_f64, logsumexp_rows


@dataclass(frozen=True)
class LossConfig:
    tau: float = 0.5
    sigma: float = 1.0
    theta: float = 0.7
    w_t: float = 1.0
    w_aw: float = 1.0
    w_m: float = 1.0
    triplet_margin: float = 0.2

    def validate(self) -> None:
        if self.tau <= 0:
            raise ValueError("tau must be > 0")
        if self.sigma <= 0:
            raise ValueError("sigma must be > 0")
        if not -1.0 <= self.theta <= 1.0:
            raise ValueError("theta must lie in [-1, 1]")
        if self.w_t < 0 or self.w_aw < 0 or self.w_m < 0:
            raise ValueError("loss weights must be >= 0")
        if self.triplet_margin < 0:
            raise ValueError("triplet_margin must be >= 0")


@dataclass
class LossOutput:
    value: float
    grads: dict = field(default_factory=dict)


def _check_pair_batch(Z1, Z2, min_n=2):
    Z1 = as_f64(Z1)
    Z2 = as_f64(Z2)
    if Z1.shape != Z2.shape:
        raise ShapeMismatchError(f"batch shapes differ: {Z1.shape} vs {Z2.shape}")
    if Z1.ndim != 2:
        raise ShapeMismatchError("feature batches must be 2-D")
    if Z1.shape[0] < min_n:
        raise BatchTooSmallError(f"need at least {min_n} rows, got {Z1.shape[0]}")
    return Z1, Z2


def info_nce_direction(Z1, Z2, tau: float) -> LossOutput:
    """One direction of the contrastive loss; positives on the diagonal."""
    Z1, Z2 = _check_pair_batch(Z1, Z2)
    n = Z1.shape[0]
    A = (Z1 @ Z2.T) / tau
    lse = logsumexp_rows(A)
    value = float(np.mean(lse - np.diagonal(A)))
    P = np.exp(A - lse[:, None])
    G = (P - np.eye(n)) / (n * tau)
    return LossOutput(value, {"z1": G @ Z2, "z2": G.T @ Z1})


def info_nce_symmetric(Zf, Zt, tau: float) -> LossOutput:
    a = info_nce_direction(Zf, Zt, tau)
    b = info_nce_direction(Zt, Zf, tau)
    return LossOutput(
        a.value + b.value,
        {"zf": a.grads["z1"] + b.grads["z2"], "zt": a.grads["z2"] + b.grads["z1"]},
    )


def _dcl_core(Z1, Z2, tau, weights):
    """Decoupled direction with per-pair positive weights (ones => plain DCL)."""
    n = Z1.shape[0]
    A = (Z1 @ Z2.T) / tau
    A_off = A.copy()
    np.fill_diagonal(A_off, -np.inf)
    lse = logsumexp_rows(A_off)
    value = float(np.mean(lse - weights * np.diagonal(A)))
    Q = np.exp(A_off - lse[:, None])  # row-softmax over negatives, zero diagonal
    G = (Q - np.diag(weights)) / (n * tau)
    return value, G @ Z2, G.T @ Z1


def dcl_direction(Z1, Z2, tau: float) -> LossOutput:
    """Decoupled contrastive direction: positive term removed from the denominator."""
    Z1, Z2 = _check_pair_batch(Z1, Z2)
    value, g1, g2 = _dcl_core(Z1, Z2, tau, np.ones(Z1.shape[0]))
    return LossOutput(value, {"z1": g1, "z2": g2})


def semantic_weights(Df, Dt, sigma: float) -> np.ndarray:
    """Per-pair positive weights from narration similarity, normalized to mean one.

    Constants w.r.t. optimization: no gradients flow into Df or Dt.
    """
    Df = as_f64(Df)
    Dt = as_f64(Dt)
    if Df.shape != Dt.shape:
        raise ShapeMismatchError(f"text batch shapes differ: {Df.shape} vs {Dt.shape}")
    if Df.ndim != 2 or Df.shape[0] < 1:
        raise ShapeMismatchError("text batches must be 2-D with at least one row")
    s = np.sum(Df * Dt, axis=1) / sigma
    e = np.exp(s - np.max(s))  # shift-invariant in the ratio
    return e / np.mean(e)


def alignment_loss_unweighted(Zf, Zt, tau: float) -> LossOutput:
    """Both decoupled directions on the selected pseudo-pairs."""
    Zf, Zt = _check_pair_batch(Zf, Zt)
    ones = np.ones(Zf.shape[0])
    v1, gf1, gt1 = _dcl_core(Zf, Zt, tau, ones)
    v2, gt2, gf2 = _dcl_core(Zt, Zf, tau, ones)
    return LossOutput(v1 + v2, {"zf": gf1 + gf2, "zt": gt1 + gt2})


def weighted_alignment_loss(Zf, Zt, Df, Dt, tau: float, sigma: float) -> LossOutput:
    """Semantics-weighted alignment on the selected pseudo-pairs, both directions."""
    Zf, Zt = _check_pair_batch(Zf, Zt)
    w = semantic_weights(Df, Dt, sigma)
    if w.shape[0] != Zf.shape[0]:
        raise ShapeMismatchError("text batch size must match feature batch size")
    v1, gf1, gt1 = _dcl_core(Zf, Zt, tau, w)
    v2, gt2, gf2 = _dcl_core(Zt, Zf, tau, w)
    return LossOutput(v1 + v2, {"zf": gf1 + gf2, "zt": gt1 + gt2})


def _pooled_direction(Z_sel, Z_pool, pos_idx, tau, weights):
    """Weighted decoupled direction whose negatives come from a larger pool.

    Z_sel row i is positive with Z_pool[pos_idx[i]]; negatives are all other
    pool rows.  Used by the full-batch negative-set mode.
    """
    n = Z_sel.shape[0]
    A = (Z_sel @ Z_pool.T) / tau
    A_neg = A.copy()
    A_neg[np.arange(n), pos_idx] = -np.inf
    lse = logsumexp_rows(A_neg)
    pos = A[np.arange(n), pos_idx]
    value = float(np.mean(lse - weights * pos))
    Q = np.exp(A_neg - lse[:, None])
    G = Q / (n * tau)
    G[np.arange(n), pos_idx] -= weights / (n * tau)
    return value, G @ Z_pool, G.T @ Z_sel


def weighted_alignment_loss_pooled(
    Zf_sel, Zt_sel, Df_sel, Dt_sel, Zf_pool, Zt_pool, sel_idx, tau: float, sigma: float,
    weights=None,
) -> LossOutput:
    """Full-batch negative mode: positives from selected pairs, negatives from all pairs.

    ``sel_idx`` maps selected rows to their positions in the pool batches.
    Gradients are returned at pool shape so they add onto the whole batch.
    Pass ``weights`` explicitly (e.g. ones) to bypass the semantic weighting.
    """
    Zf_sel, Zt_sel = _check_pair_batch(Zf_sel, Zt_sel)
    sel_idx = np.asarray(sel_idx, dtype=int)
    w = semantic_weights(Df_sel, Dt_sel, sigma) if weights is None else as_f64(weights)
    v1, gf_sel1, gt_pool1 = _pooled_direction(Zf_sel, Zt_pool, sel_idx, tau, w)
    v2, gt_sel2, gf_pool2 = _pooled_direction(Zt_sel, Zf_pool, sel_idx, tau, w)
    gf = gf_pool2
    gf[sel_idx] += gf_sel1
    gt = gt_pool1
    gt[sel_idx] += gt_sel2
    return LossOutput(v1 + v2, {"zf": gf, "zt": gt})


def multimodal_loss(Zf, Df, Zt, Dt, tau: float) -> LossOutput:
    """Video-text alignment over the full batch; text vectors are constants."""
    Zf, Df = _check_pair_batch(Zf, Df)
    Zt, Dt = _check_pair_batch(Zt, Dt)
    ones_f = np.ones(Zf.shape[0])
    ones_t = np.ones(Zt.shape[0])
    v1, gzf1, _ = _dcl_core(Zf, Df, tau, ones_f)
    v2, _, gzf2 = _dcl_core(Df, Zf, tau, ones_f)
    v3, gzt1, _ = _dcl_core(Zt, Dt, tau, ones_t)
    v4, _, gzt2 = _dcl_core(Dt, Zt, tau, ones_t)
    return LossOutput(v1 + v2 + v3 + v4, {"zf": gzf1 + gzf2, "zt": gzt1 + gzt2})


def cross_entropy(logits, labels) -> LossOutput:
    """Mean negative log-softmax of the true class."""
    logits = as_f64(logits)
    labels = np.asarray(labels, dtype=int)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ShapeMismatchError("logits must be (N, C) with N labels")
    n, c = logits.shape
    if np.any(labels < 0) or np.any(labels >= c):
        raise LabelOutOfRangeError(f"labels must lie in [0, {c})")
    lse = logsumexp_rows(logits)
    value = float(np.mean(lse - logits[np.arange(n), labels]))
    P = np.exp(logits - lse[:, None])
    G = P.copy()
    G[np.arange(n), labels] -= 1.0
    return LossOutput(value, {"logits": G / n})


def triplet_loss(Zf, Zt, margin: float) -> LossOutput:
    """Hardest-in-batch margin loss over squared distances; subgradient 0 at the hinge."""
    Zf, Zt = _check_pair_batch(Zf, Zt)
    n = Zf.shape[0]
    sq_f = np.sum(Zf * Zf, axis=1)
    sq_t = np.sum(Zt * Zt, axis=1)
    D2 = sq_f[:, None] + sq_t[None, :] - 2.0 * (Zf @ Zt.T)
    pos = np.diagonal(D2).copy()
    D2_neg = D2.copy()
    np.fill_diagonal(D2_neg, np.inf)
    hardest = np.argmin(D2_neg, axis=1)  # ties break to the smallest index
    neg = D2_neg[np.arange(n), hardest]
    slack = pos - neg + margin
    active = slack > 0
    value = float(np.mean(np.where(active, slack, 0.0)))
    gf = np.zeros_like(Zf)
    gt = np.zeros_like(Zt)
    for i in np.flatnonzero(active):
        j = hardest[i]
        gf[i] += 2.0 * (Zt[j] - Zt[i]) / n
        gt[i] += -2.0 * (Zf[i] - Zt[i]) / n
        gt[j] += 2.0 * (Zf[i] - Zt[j]) / n
    return LossOutput(value, {"zf": gf, "zt": gt})


def total_loss(lf: LossOutput, lt: LossOutput, law: LossOutput, lm: LossOutput,
               config: LossConfig) -> LossOutput:
    """Weighted combination of the four training terms."""
    value = (
        lf.value
        + config.w_t * lt.value
        + config.w_aw * law.value
        + config.w_m * lm.value
    )
    grads = {}
    for prefix, out, w in (
        ("f", lf, 1.0),
        ("t", lt, config.w_t),
        ("aw", law, config.w_aw),
        ("m", lm, config.w_m),
    ):
        for key, g in out.grads.items():
            grads[f"{prefix}.{key}"] = w * g
    return LossOutput(value, grads)
