"""Information-theoretic and evaluation metrics over histograms and bin splits.

All logarithms are base 2.  Values are normalized into probabilities against a
plot total; metrics over a refinement step keep the *pre-refinement* plot
total as the denominator on both sides, which is what makes entropy
monotonically increasing under non-trivial splits.

Degenerate inputs are defined rather than raised: empty parents have zero
deviance, p = 0 contributes nothing to entropy, and ratios against a zero
entropy come back as ``None`` flags.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

from .core import BinRef


def _log2(x: float) -> float:
    return math.log2(x)


@dataclass(frozen=True)
class BinSplit:
    """One bin together with the sub-bins a refinement step produced.

    `plot_total` is the pre-refinement plot total used to normalize both the
    parent and the sub-bin values.
    """

    parent: tuple[BinRef, float]
    subs: tuple[tuple[BinRef, float], ...]
    plot_total: float

    @property
    def parent_value(self) -> float:
        return self.parent[1]

    @property
    def sub_values(self) -> tuple[float, ...]:
        return tuple(y for _, y in self.subs)


@dataclass
class MetricReport:
    """Per-plot metric bundle attached to result frames and bench rows."""

    plot_ad: float | None = None
    plot_entropy: float | None = None
    plot_rec: float | None = None
    plot_igp: float | None = None
    plot_mei: float | None = None
    bin_ad: list[float] | None = None
    bin_entropy: list[float] | None = None
    bin_rec: list[float | None] | None = None
    bin_igp: list[float | None] | None = None
    result_error: list[float | None] | None = None
    anomalous_fraction: float | None = None


# ---------------------------------------------------------------------------
# average deviance


def average_deviance(split: BinSplit) -> float:
    """Mean relative deviation of sub-bins from the uniform-split expectation.

    A bin summarizes its sub-bins perfectly (deviance 0) when each sub-bin
    equals parent/|subs|; an empty parent has nothing to reveal and scores 0.
    """
    n = len(split.subs)
    if n == 0 or split.parent_value == 0:
        return 0.0
    expected = split.parent_value / n
    return sum(abs((expected - y) / expected) for y in split.sub_values) / n


def plot_average_deviance(splits: Sequence[BinSplit]) -> float | None:
    """Plot-level deviance: the mean over its bins' deviances."""
    if not splits:
        return None
    return sum(average_deviance(s) for s in splits) / len(splits)


# ---------------------------------------------------------------------------
# entropy and relative entropy change


def bin_entropy(y: float, plot_total: float) -> float:
    """-p * log2(p) with p = y / plot_total; 0 when p is 0."""
    if plot_total <= 0 or y <= 0:
        return 0.0
    p = y / plot_total
    return -p * _log2(p)


def entropy(values: Sequence[float], plot_total: float | None = None) -> tuple[list[float], float]:
    """Per-bin entropies and their sum (the plot entropy)."""
    if plot_total is None:
        plot_total = sum(values)
    per_bin = [bin_entropy(y, plot_total) for y in values]
    return per_bin, sum(per_bin)


def plot_rec(splits: Sequence[BinSplit]) -> float | None:
    """Relative entropy change of refining a whole plot.

    (entropy(sub-bins) - entropy(bins)) / entropy(bins), all normalized by the
    pre-refinement plot total.  None when the unrefined entropy is zero.
    Values near 0 mean the sub-bins were dissimilar (the refinement taught us
    something); large values mean near-uniform, uninformative splits.
    """
    if not splits:
        return None
    total = splits[0].plot_total
    before = sum(bin_entropy(s.parent_value, total) for s in splits)
    after = sum(bin_entropy(y, total) for s in splits for y in s.sub_values)
    if before == 0:
        return None
    return (after - before) / before


def bin_rec(split: BinSplit) -> float | None:
    """Relative entropy change of refining a single bin; None for empty bins."""
    before = bin_entropy(split.parent_value, split.plot_total)
    if before == 0:
        return None
    after = sum(bin_entropy(y, split.plot_total) for y in split.sub_values)
    return (after - before) / before


# ---------------------------------------------------------------------------
# refinement potential


def mei(values: Sequence[float], sub_bin_counts: Sequence[int],
        plot_total: float | None = None) -> float:
    """Upper bound on the entropy a refinement can add: sum p_i * log2(n_i).

    Depends only on bin probabilities and sub-bin counts, never on the
    sub-bin values, so it is computable before refining.
    """
    if len(values) != len(sub_bin_counts):
        raise ValueError("values and sub_bin_counts must align")
    for n in sub_bin_counts:
        if n < 1:
            raise ValueError(f"sub-bin count {n} < 1")
    if plot_total is None:
        plot_total = sum(values)
    if plot_total <= 0:
        return 0.0
    return sum(
        (y / plot_total) * _log2(n) for y, n in zip(values, sub_bin_counts) if y > 0
    )


def igp(values: Sequence[float], sub_bin_counts: Sequence[int],
        plot_total: float | None = None) -> tuple[float | None, list[float | None]]:
    """Information gain potential: MEI normalized by the unrefined entropy.

    Returns (plot IGP, per-bin IGPs).  Per bin, log2(n_i) / -log2(p_i):
    +inf when a bin holds all the mass (p = 1, nothing else to compare
    against, least important) and None for empty bins (excluded).  Plot IGP
    is None when the plot entropy is zero.  Lower IGP marks bins whose
    refinement is expected to pay off sooner.
    """
    if plot_total is None:
        plot_total = sum(values)
    _, plot_h = entropy(values, plot_total)
    m = mei(values, sub_bin_counts, plot_total)
    plot = None if plot_h == 0 else m / plot_h
    bins: list[float | None] = []
    for y, n in zip(values, sub_bin_counts):
        if plot_total <= 0 or y <= 0:
            bins.append(None)
            continue
        p = y / plot_total
        denom = -_log2(p)
        bins.append(math.inf if denom == 0 else _log2(n) / denom)
    return plot, bins


# ---------------------------------------------------------------------------
# evaluation metrics


def result_error(bin_value: float, base_subcells: Sequence[float]) -> float | None:
    """How far the true sub-cell values deviate from the uniform estimate.

    Same arithmetic as average deviance, but measured against the actual
    base-resolution data.  None (excluded from averages) when the uniform
    estimate is zero.
    """
    n = len(base_subcells)
    if n == 0:
        return None
    expected = bin_value / n
    if expected == 0:
        return None
    return sum(abs((y - expected) / expected) for y in base_subcells) / n


def anomalous_fraction(values: Sequence[float]) -> float | None:
    """Fraction of cells differing by more than 10% from every neighbor.

    Neighbors are the adjacent cells in x order (one at the ends, two in the
    interior).  A zero cell counts as anomalous only when all its neighbors
    are non-zero; the relative difference against zero is taken as infinite.
    None when there are fewer than two cells.
    """
    k = len(values)
    if k < 2:
        return None

    def differs(n: float, x: float) -> bool:
        if x == 0:
            return n != 0
        return abs((n - x) / x) > 0.1

    anomalous = 0
    for i, x in enumerate(values):
        neighbors = []
        if i > 0:
            neighbors.append(values[i - 1])
        if i < k - 1:
            neighbors.append(values[i + 1])
        if all(differs(n, x) for n in neighbors):
            anomalous += 1
    return anomalous / k


def sparsity(row_count: int, bins_per_dim: Sequence[int]) -> float:
    """Occupancy of a binned table: stored rows over the full cross product."""
    max_rows = 1
    for b in bins_per_dim:
        max_rows *= b
    return row_count / max_rows
