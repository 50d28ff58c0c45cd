"""Positive-pair sampling, batch assembly, and in-batch class structure.

Training batches hold N quadruples (anchor, sampled positive, and their
similarity profiles), 2N cases total. Within a batch, any two cases whose
relevance weight exceeds a threshold in either direction are merged into
one class, and the merge is transitive, so classes are the connected
components of the thresholded weight graph.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bm25 import SimilarityProfile
from .relevance import WeightTable

DEFAULT_POSITIVE_FLOOR = 0.5
DEFAULT_CLASS_THRESHOLD = 0.25


class SamplingError(RuntimeError):
    pass


class NoPositiveAvailable(SamplingError):
    """The anchor has no eligible positive and is excluded from training."""


@dataclass(frozen=True)
class Quadruple:
    anchor_id: str
    positive_id: str
    anchor_profile: SimilarityProfile | None
    positive_profile: SimilarityProfile | None
    weight: float


@dataclass
class BatchPartition:
    """Dense class labels for an ordered batch of case ids.

    Labels are canonical: components are numbered 0..C-1 in order of their
    smallest member position.
    """

    case_ids: list[str]
    labels: list[int]
    threshold: float


class UnionFind:
    def __init__(self, n: int):
        self.parent = list(range(n))

    def find(self, x: int) -> int:
        root = x
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[x] != root:
            self.parent[x], x = root, self.parent[x]
        return root

    def union(self, a: int, b: int) -> None:
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            # keep the smaller index as root so labels stay canonical
            if rb < ra:
                ra, rb = rb, ra
            self.parent[rb] = ra


def eligible_positives(
    anchor_id: str, table: WeightTable, floor: float = DEFAULT_POSITIVE_FLOOR
) -> list[tuple[str, float]]:
    """Cases other than the anchor with weight(anchor, case) >= floor."""
    out = []
    for other in table.ids:
        if other == anchor_id:
            continue
        w = table.get(anchor_id, other)
        if w >= floor:
            out.append((other, w))
    return out


def sample_positive(
    anchor_id: str,
    table: WeightTable,
    rng: np.random.Generator,
    floor: float = DEFAULT_POSITIVE_FLOOR,
    exclude: set[str] | None = None,
) -> tuple[str, float]:
    """Draw a positive for the anchor, proportional to weight.

    Only cases with weight >= floor are eligible; ``exclude`` removes ids
    already used in the batch. Deterministic for a given generator state.
    """
    candidates = eligible_positives(anchor_id, table, floor)
    if exclude:
        candidates = [(cid, w) for cid, w in candidates if cid not in exclude]
    if not candidates:
        raise NoPositiveAvailable(f"no positive available for anchor {anchor_id!r}")
    weights = np.array([w for _, w in candidates], dtype=np.float64)
    total = weights.sum()
    if total <= 0.0:
        raise NoPositiveAvailable(f"all candidate weights are zero for anchor {anchor_id!r}")
    pick = int(rng.choice(len(candidates), p=weights / total))
    return candidates[pick]


def sample_quadruples(
    table: WeightTable,
    n: int,
    rng: np.random.Generator,
    profiles: dict[str, SimilarityProfile] | None = None,
    floor: float = DEFAULT_POSITIVE_FLOOR,
    max_retries: int = 20,
) -> list[Quadruple]:
    """Sample N quadruples with 2N distinct cases.

    Anchors are drawn without replacement from the cases that have at
    least one eligible positive; each positive is then drawn among the
    eligible cases not already in the batch. A draw can dead-end when
    earlier picks exhaust an anchor's positives, so the whole batch is
    resampled a bounded number of times before giving up.
    """
    if n < 1:
        raise SamplingError(f"need at least one quadruple, got n={n}")
    pool = [cid for cid in table.ids if eligible_positives(cid, table, floor)]
    if len(pool) < n:
        raise SamplingError(
            f"only {len(pool)} cases have an eligible positive; cannot draw {n} anchors"
        )
    last_error: NoPositiveAvailable | None = None
    for _ in range(max_retries):
        anchors = [pool[i] for i in rng.choice(len(pool), size=n, replace=False)]
        used = set(anchors)
        quads = []
        try:
            for anchor in anchors:
                positive, w = sample_positive(anchor, table, rng, floor, exclude=used)
                used.add(positive)
                quads.append(
                    Quadruple(
                        anchor_id=anchor,
                        positive_id=positive,
                        anchor_profile=profiles.get(anchor) if profiles else None,
                        positive_profile=profiles.get(positive) if profiles else None,
                        weight=w,
                    )
                )
        except NoPositiveAvailable as exc:
            last_error = exc
            continue
        return quads
    raise SamplingError(
        f"could not assemble {n} collision-free quadruples in {max_retries} tries"
    ) from last_error


def build_batch(quadruples: list[Quadruple]) -> list[str]:
    """Interleave quadruples into the batch order (a1, p1, a2, p2, ...)."""
    if not quadruples:
        raise SamplingError("a batch needs at least one quadruple")
    ids: list[str] = []
    for quad in quadruples:
        ids.extend((quad.anchor_id, quad.positive_id))
    if len(set(ids)) != len(ids):
        raise SamplingError(f"batch case ids collide: {ids}")
    return ids


def class_partition(
    batch_ids: list[str],
    table: WeightTable,
    threshold: float = DEFAULT_CLASS_THRESHOLD,
) -> BatchPartition:
    """Merge batch cases into classes by thresholded weight, transitively.

    Two cases connect when the weight strictly exceeds the threshold in
    either direction; labels are the connected components of that graph.
    """
    uf = UnionFind(len(batch_ids))
    for i, a in enumerate(batch_ids):
        for j in range(i + 1, len(batch_ids)):
            b = batch_ids[j]
            if table.get(a, b) > threshold or table.get(b, a) > threshold:
                uf.union(i, j)
    roots = [uf.find(i) for i in range(len(batch_ids))]
    label_of_root: dict[int, int] = {}
    labels = []
    for root in roots:
        if root not in label_of_root:
            label_of_root[root] = len(label_of_root)
        labels.append(label_of_root[root])
    return BatchPartition(case_ids=list(batch_ids), labels=labels, threshold=threshold)
