"""Shared domain types and exact bin arithmetic.

Every dimension carries a factor-2 hierarchy of equi-width binnings: level 0
is the coarsest, each level doubles the bin count, and the sentinel ``BASE``
denotes the atomic-resolution grid of the non-binned data.  All arithmetic is
done in integer atomic-cell units so that index mappings between levels are
exact and boundaries nest perfectly.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence, Union

from .errors import AlignmentError, ConfigError, DomainError, QueryError

#: Sentinel level naming the non-binned, atomic-resolution grid.
BASE = "base"

#: Every split produces this many sub-bins; fixed, not configurable.
SPLIT_FACTOR = 2

Level = Union[int, str]  # 0..max_level, or BASE


@dataclass(frozen=True)
class DimensionSpec:
    """Declares one dimension's domain and its binning hierarchy.

    ``domain_max`` is exclusive.  The domain length must be an integer
    multiple of ``atomic_resolution``, and the atomic cell count must be
    divisible by ``level0_bins * 2**max_level`` so that every bin at every
    level spans a whole number of atomic cells.
    """

    name: str
    domain_min: float
    domain_max: float
    atomic_resolution: float
    level0_bins: int = 32
    max_level: int = 4
    split_factor: int = SPLIT_FACTOR

    atomic_cells: int = field(init=False)

    def __post_init__(self):
        if self.domain_max <= self.domain_min:
            raise ConfigError(f"{self.name}: domain_max must exceed domain_min")
        if self.atomic_resolution <= 0:
            raise ConfigError(f"{self.name}: atomic_resolution must be positive")
        if self.level0_bins < 1 or self.max_level < 0:
            raise ConfigError(f"{self.name}: need level0_bins >= 1 and max_level >= 0")
        if self.split_factor != SPLIT_FACTOR:
            raise ConfigError(f"{self.name}: split factor is fixed at {SPLIT_FACTOR}")
        span = self.domain_max - self.domain_min
        cells = round(span / self.atomic_resolution)
        if cells < 1 or abs(cells * self.atomic_resolution - span) > 1e-9 * max(1.0, abs(span)):
            raise ConfigError(
                f"{self.name}: domain length {span} is not an integer multiple of "
                f"atomic_resolution {self.atomic_resolution}"
            )
        finest = self.level0_bins * (1 << self.max_level)
        if cells % finest != 0:
            raise ConfigError(
                f"{self.name}: {cells} atomic cells not divisible by "
                f"level0_bins * 2**max_level = {finest}"
            )
        object.__setattr__(self, "atomic_cells", cells)

    def bin_count(self, level: Level) -> int:
        if level == BASE:
            return self.atomic_cells
        if not 0 <= level <= self.max_level:
            raise QueryError(f"{self.name}: no level {level!r}")
        return self.level0_bins << level

    def width(self, level: Level) -> float:
        return (self.domain_max - self.domain_min) / self.bin_count(level)

    def cells_per_bin(self, level: Level) -> int:
        """Atomic cells spanned by one bin at `level` (1 for BASE)."""
        return self.atomic_cells // self.bin_count(level)

    def depth(self, level: Level) -> int:
        """Orderable depth: 0..max_level for binned levels, max_level+1 for BASE."""
        return self.max_level + 1 if level == BASE else int(level)

    def level_of_depth(self, depth: int) -> Level:
        return BASE if depth > self.max_level else depth

    def levels(self) -> list[Level]:
        """All queryable resolutions, coarse to fine, BASE last."""
        return [*range(self.max_level + 1), BASE]


@dataclass(frozen=True)
class BinRef:
    """One bin at one level of one dimension's hierarchy."""

    dim: str
    level: Level
    index: int

    def __post_init__(self):
        if self.index < 0:
            raise QueryError(f"negative bin index {self.index} on {self.dim}")


def make_ref(dim: DimensionSpec, level: Level, index: int) -> BinRef:
    if index >= dim.bin_count(level):
        raise QueryError(f"{dim.name}: index {index} out of range at level {level!r}")
    return BinRef(dim.name, level, index)


@dataclass(frozen=True)
class Predicate:
    """Half-open bin-index range [lo, hi) at a stated level of one dimension.

    Expressing filters in bin indices (not raw values) makes misaligned
    filters unrepresentable: a predicate at level j maps exactly onto any
    level >= j.
    """

    dim: str
    lo: int
    hi: int
    level: Level


def validate_predicate(pred: Predicate, dim: DimensionSpec) -> None:
    n = dim.bin_count(pred.level)
    if not (0 <= pred.lo < pred.hi <= n):
        raise QueryError(
            f"{dim.name}: predicate [{pred.lo},{pred.hi}) invalid at level "
            f"{pred.level!r} with {n} bins"
        )


@dataclass(frozen=True)
class Frontier:
    """Disjoint (level, bin) cells that exactly tile one dimension's domain."""

    dim: str
    cells: tuple[BinRef, ...]


@dataclass(frozen=True)
class MeasureSpec:
    """A distributive/algebraic aggregate: count, sum, min, max, or avg.

    avg is stored and merged as a (sum, count) pair; only at presentation is
    the quotient taken.
    """

    name: str
    kind: str
    column: str | None = None

    KINDS = ("count", "sum", "min", "max", "avg")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ConfigError(f"measure kind {self.kind!r} not one of {self.KINDS}")
        if self.kind != "count" and not self.column:
            raise ConfigError(f"measure {self.name!r}: kind {self.kind} needs a source column")

    def components(self) -> list[tuple[str, str, bool]]:
        """(component name, merge op, is_integer) triples backing this measure."""
        if self.kind == "count":
            return [(self.name, "sum", True)]
        if self.kind == "sum":
            return [(self.name, "sum", False)]
        if self.kind in ("min", "max"):
            return [(self.name, self.kind, False)]
        return [(f"{self.name}_sum", "sum", False), (f"{self.name}_count", "sum", True)]


# ---------------------------------------------------------------------------
# bin arithmetic


def bin_of(value: float, dim: DimensionSpec, level: Level) -> int:
    """Map a raw value to its bin index at `level`.

    Computed by flooring to an atomic cell first and integer-dividing, which
    coincides with floor((value - domain_min) / width(level)) but stays
    consistent across levels of the hierarchy.
    """
    if not (dim.domain_min <= value < dim.domain_max):
        raise DomainError(
            f"{dim.name}: value {value} outside [{dim.domain_min}, {dim.domain_max})"
        )
    cell = math.floor((value - dim.domain_min) / dim.atomic_resolution)
    cell = min(max(cell, 0), dim.atomic_cells - 1)
    return cell // dim.cells_per_bin(level)


def bin_range(ref: BinRef, dim: DimensionSpec) -> tuple[float, float]:
    """Raw half-open value range [x0, x1) covered by a bin."""
    if ref.index >= dim.bin_count(ref.level):
        raise QueryError(f"{dim.name}: bad ref index {ref.index} at level {ref.level!r}")
    w = dim.width(ref.level)
    x0 = dim.domain_min + ref.index * w
    return x0, x0 + w


def atomic_span(ref: BinRef, dim: DimensionSpec) -> tuple[int, int]:
    """Half-open atomic-cell range covered by a bin; exact integers."""
    m = dim.cells_per_bin(ref.level)
    return ref.index * m, (ref.index + 1) * m


def children(ref: BinRef, dim: DimensionSpec) -> tuple[BinRef, BinRef]:
    """The two sub-bins of `ref` at the next level."""
    if ref.level == BASE:
        raise QueryError(f"{dim.name}: BASE cells have no children")
    if ref.level >= dim.max_level:
        raise QueryError(
            f"{dim.name}: level {ref.level} is the deepest binned level; "
            "step to BASE cells instead"
        )
    nxt = ref.level + 1
    return (
        make_ref(dim, nxt, 2 * ref.index),
        make_ref(dim, nxt, 2 * ref.index + 1),
    )


def parent(ref: BinRef, dim: DimensionSpec) -> BinRef:
    if ref.level == BASE or ref.level == 0:
        raise QueryError(f"{dim.name}: no parent above level {ref.level!r}")
    return make_ref(dim, ref.level - 1, ref.index // 2)


def base_cells(ref: BinRef, dim: DimensionSpec) -> list[BinRef]:
    """The atomic-grid cells spanned by `ref` (identity for BASE refs)."""
    if ref.level == BASE:
        return [ref]
    lo, hi = atomic_span(ref, dim)
    return [make_ref(dim, BASE, i) for i in range(lo, hi)]


def refine_cells(ref: BinRef, dim: DimensionSpec) -> list[BinRef]:
    """Sub-cells one step finer: two children, or atomic cells at max_level."""
    if ref.level == BASE:
        raise QueryError(f"{dim.name}: cannot refine a BASE cell")
    if ref.level == dim.max_level:
        return base_cells(ref, dim)
    return list(children(ref, dim))


def snap_predicate(pred: Predicate, target_level: Level, dim: DimensionSpec) -> Predicate:
    """Re-express a predicate at a finer level; the selected range is unchanged."""
    validate_predicate(pred, dim)
    from_bins = dim.bin_count(pred.level)
    to_bins = dim.bin_count(target_level)
    if to_bins < from_bins:
        raise AlignmentError(
            f"{dim.name}: cannot snap level-{pred.level!r} predicate onto coarser "
            f"level {target_level!r}"
        )
    f = to_bins // from_bins
    return Predicate(pred.dim, pred.lo * f, pred.hi * f, target_level)


# ---------------------------------------------------------------------------
# frontiers


def level0_frontier(dim: DimensionSpec) -> Frontier:
    return Frontier(dim.name, tuple(make_ref(dim, 0, i) for i in range(dim.level0_bins)))


def sort_cells(cells: Iterable[BinRef], dim: DimensionSpec) -> tuple[BinRef, ...]:
    return tuple(sorted(cells, key=lambda c: atomic_span(c, dim)[0]))


def validate_frontier(frontier: Frontier, dim: DimensionSpec) -> None:
    """Check the tiling invariant: cells are disjoint, sorted, and cover the domain."""
    if frontier.dim != dim.name:
        raise QueryError(f"frontier dim {frontier.dim!r} != {dim.name!r}")
    cursor = 0
    for cell in frontier.cells:
        lo, hi = atomic_span(cell, dim)
        if lo != cursor:
            raise QueryError(
                f"{dim.name}: frontier gap/overlap at atomic cell {cursor} (cell starts {lo})"
            )
        cursor = hi
    if cursor != dim.atomic_cells:
        raise QueryError(
            f"{dim.name}: frontier covers {cursor} of {dim.atomic_cells} atomic cells"
        )


def replace_cells(frontier: Frontier, replacements: dict[BinRef, Sequence[BinRef]],
                  dim: DimensionSpec) -> Frontier:
    """Frontier with each key cell swapped for its replacement; re-validated."""
    missing = [c for c in replacements if c not in frontier.cells]
    if missing:
        raise QueryError(f"{dim.name}: cells not in frontier: {missing}")
    out: list[BinRef] = []
    for c in frontier.cells:
        if c in replacements:
            out.extend(replacements[c])
        else:
            out.append(c)
    new = Frontier(frontier.dim, sort_cells(out, dim))
    validate_frontier(new, dim)
    return new


def replace_cell(frontier: Frontier, cell: BinRef, with_cells: Sequence[BinRef],
                 dim: DimensionSpec) -> Frontier:
    """Frontier with `cell` swapped for `with_cells`; re-validated."""
    return replace_cells(frontier, {cell: with_cells}, dim)


def frontier_levels(frontier: Frontier) -> list[Level]:
    """Distinct levels present, coarse to fine, BASE last."""
    present = {c.level for c in frontier.cells}
    return sorted(present, key=lambda lv: (lv == BASE, 0 if lv == BASE else int(lv)))
