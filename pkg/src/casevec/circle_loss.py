"""Relevance-weighted circle loss over a batch of case embeddings.

For each anchor with K same-class and L other-class partners, the loss is

    log[1 + sum_j exp(g * an_j * (sn_j - dn)) * sum_i exp(-g * ap_i * (sp_i - dp))]

with cosine similarities sp (same class) and sn (other class), scale g,
margins dp and dn, and per-pair speeds

    ap_i = |exp(wp_i - 1) * Op - sp_i|        an_j = max(sn_j - On, 0)

where wp_i in [0, 1] is the pairwise relevance weight. At wp = 1 the
within-class optimum is Op, the plain circle loss setting; weaker
positives are pulled toward a lower effective optimum. The batch loss is
the mean over anchors that have both kinds of partner.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .relevance import WeightTable
from .sampling import BatchPartition

# mixing coefficient of this loss in the combined objective, e * 1e-6
DEFAULT_MIX = math.e * 1e-6


class CircleLossError(ValueError):
    pass


@dataclass(frozen=True)
class CircleLossParams:
    """Hyperparameters of the weighted circle loss."""

    gamma: float = 16.0
    optimum_pos: float = 1.25
    optimum_neg: float = 0.25
    margin_pos: float = 0.75
    margin_neg: float = 0.25
    class_threshold: float = 0.25
    mix: float = DEFAULT_MIX

    def __post_init__(self) -> None:
        if self.gamma <= 0:
            raise CircleLossError(f"gamma must be positive, got {self.gamma}")
        if not self.margin_neg < self.margin_pos:
            raise CircleLossError(
                f"margin_neg must be below margin_pos, got {self.margin_neg} >= {self.margin_pos}"
            )


@dataclass
class AnchorPairs:
    """Similarities of one anchor against the rest of the batch."""

    anchor: int
    pos_partners: np.ndarray  # row indices, shape (K,)
    pos_sims: np.ndarray  # (K,)
    pos_weights: np.ndarray  # (K,)
    neg_partners: np.ndarray  # (L,)
    neg_sims: np.ndarray  # (L,)


def cosine_matrix(embeddings: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Pairwise cosines and row norms; rows with zero norm get cosine 0."""
    norms = np.linalg.norm(embeddings, axis=1)
    safe = np.where(norms == 0.0, 1.0, norms)
    unit = embeddings / safe[:, None]
    sims = np.clip(unit @ unit.T, -1.0, 1.0)
    sims[norms == 0.0, :] = 0.0
    sims[:, norms == 0.0] = 0.0
    return sims, norms


def collect_pairs(
    embeddings: np.ndarray,
    partition: BatchPartition,
    table: WeightTable,
) -> list[AnchorPairs]:
    """Per-anchor similarity lists for the whole batch.

    Same-class pairs carry the symmetric relevance weight max(w_ab, w_ba);
    other-class pairs carry only their cosine.
    """
    n = embeddings.shape[0]
    if n != len(partition.case_ids):
        raise CircleLossError("embedding rows do not match the partition")
    sims, _ = cosine_matrix(embeddings)
    labels = np.asarray(partition.labels)
    out = []
    for a in range(n):
        same = (labels == labels[a]) & (np.arange(n) != a)
        diff = labels != labels[a]
        pos = np.flatnonzero(same)
        neg = np.flatnonzero(diff)
        weights = np.array(
            [table.pair_max(partition.case_ids[a], partition.case_ids[b]) for b in pos],
            dtype=np.float64,
        )
        out.append(
            AnchorPairs(
                anchor=a,
                pos_partners=pos,
                pos_sims=sims[a, pos],
                pos_weights=weights,
                neg_partners=neg,
                neg_sims=sims[a, neg],
            )
        )
    return out


def alpha_pos(weights, sims, hp: CircleLossParams) -> np.ndarray:
    """Within-class speed |exp(w - 1) * Op - s|."""
    return np.abs(np.exp(np.asarray(weights) - 1.0) * hp.optimum_pos - np.asarray(sims))


def alpha_neg(sims, hp: CircleLossParams) -> np.ndarray:
    """Between-class speed [s - On]_+."""
    return np.maximum(np.asarray(sims) - hp.optimum_neg, 0.0)


def _logsumexp(x: np.ndarray) -> float:
    m = float(np.max(x))
    return m + float(np.log(np.sum(np.exp(x - m))))


def _softplus(z: float) -> float:
    return float(np.logaddexp(0.0, z))


def _anchor_terms(pairs: AnchorPairs, hp: CircleLossParams):
    """Stable per-anchor exponent sums; None for ineligible anchors."""
    if pairs.pos_sims.size == 0 or pairs.neg_sims.size == 0:
        return None
    ap = alpha_pos(pairs.pos_weights, pairs.pos_sims, hp)
    an = alpha_neg(pairs.neg_sims, hp)
    pos_exponents = -hp.gamma * ap * (pairs.pos_sims - hp.margin_pos)
    neg_exponents = hp.gamma * an * (pairs.neg_sims - hp.margin_neg)
    return ap, an, pos_exponents, neg_exponents


def loss_value(pairs_list: list[AnchorPairs], hp: CircleLossParams) -> float:
    """Mean anchor loss; 0.0 when no anchor has both pair kinds.

    Evaluated as softplus(logsumexp(neg) + logsumexp(pos)) per anchor,
    which never overflows. Per-anchor terms are summed in batch order so
    results do not depend on scheduling.
    """
    total = 0.0
    eligible = 0
    for pairs in pairs_list:
        terms = _anchor_terms(pairs, hp)
        if terms is None:
            continue
        _, _, pos_exponents, neg_exponents = terms
        z = _logsumexp(neg_exponents) + _logsumexp(pos_exponents)
        total += _softplus(z)
        eligible += 1
    if eligible == 0:
        return 0.0
    value = total / eligible
    if not np.isfinite(value):
        raise CircleLossError("loss is not finite")
    return value


def _cosine_pair_grads(u, v, nu, nv, s):
    """Gradients of cos(u, v) with respect to u and v."""
    du = v / (nu * nv) - s * u / (nu * nu)
    dv = u / (nu * nv) - s * v / (nv * nv)
    return du, dv


def loss_gradient(
    embeddings: np.ndarray,
    partition: BatchPartition,
    table: WeightTable,
    hp: CircleLossParams,
) -> tuple[float, np.ndarray]:
    """Loss value and its exact gradient with respect to the embeddings.

    Relevance weights are treated as constants. The absolute value inside
    the within-class speed is subdifferentiated with sign(0) = 0, and the
    between-class hinge uses derivative 0 at its corner.
    """
    pairs_list = collect_pairs(embeddings, partition, table)
    sims, norms = cosine_matrix(embeddings)
    grad = np.zeros_like(embeddings, dtype=np.float64)
    total = 0.0
    eligible = 0
    for pairs in pairs_list:
        terms = _anchor_terms(pairs, hp)
        if terms is None:
            continue
        ap, an, pos_exponents, neg_exponents = terms
        lse_pos = _logsumexp(pos_exponents)
        lse_neg = _logsumexp(neg_exponents)
        z = lse_neg + lse_pos
        total += _softplus(z)
        eligible += 1
        sig = 1.0 / (1.0 + np.exp(-z)) if z >= 0 else np.exp(z) / (1.0 + np.exp(z))
        # d softplus / d exponent, via the softmax within each logsumexp
        dz_dpos = np.exp(pos_exponents - lse_pos)
        dz_dneg = np.exp(neg_exponents - lse_neg)
        # d exponent / d similarity, differentiating through the speeds
        centers = np.exp(pairs.pos_weights - 1.0) * hp.optimum_pos
        sign_pos = np.sign(centers - pairs.pos_sims)
        dpos_ds = hp.gamma * (sign_pos * (pairs.pos_sims - hp.margin_pos) - ap)
        active = (pairs.neg_sims > hp.optimum_neg).astype(np.float64)
        dneg_ds = hp.gamma * (active * (pairs.neg_sims - hp.margin_neg) + an)
        a = pairs.anchor
        u = embeddings[a]
        nu = norms[a]
        for partners, coeffs in (
            (pairs.pos_partners, sig * dz_dpos * dpos_ds),
            (pairs.neg_partners, sig * dz_dneg * dneg_ds),
        ):
            for b, coeff in zip(partners, coeffs):
                nv = norms[b]
                if nu == 0.0 or nv == 0.0:
                    continue
                du, dv = _cosine_pair_grads(u, embeddings[b], nu, nv, sims[a, b])
                grad[a] += coeff * du
                grad[b] += coeff * dv
    if eligible == 0:
        return 0.0, grad
    value = total / eligible
    grad /= eligible
    if not np.isfinite(value) or not np.all(np.isfinite(grad)):
        raise CircleLossError("loss or gradient is not finite")
    return value, grad


def dump_diagnostics(pairs_list: list[AnchorPairs], hp: CircleLossParams, path: str) -> None:
    """Write per-anchor diagnostics as JSON lines."""
    with open(path, "w", encoding="utf-8") as fh:
        for row in pair_diagnostics(pairs_list, hp):
            fh.write(json.dumps(row, sort_keys=True) + "\n")


def pair_diagnostics(pairs_list: list[AnchorPairs], hp: CircleLossParams) -> list[dict]:
    """Per-anchor (K, L, loss term) rows for debugging dumps."""
    out = []
    for pairs in pairs_list:
        terms = _anchor_terms(pairs, hp)
        loss = None
        if terms is not None:
            _, _, pos_exponents, neg_exponents = terms
            loss = _softplus(_logsumexp(neg_exponents) + _logsumexp(pos_exponents))
        out.append(
            {
                "anchor": pairs.anchor,
                "num_pos": int(pairs.pos_sims.size),
                "num_neg": int(pairs.neg_sims.size),
                "loss_term": loss,
            }
        )
    return out
