"""Result ranking and knob-driven refinement planning.

A plan is a sequence of rounds, each replacing frontier cells with their
sub-cells (two children, or the atomic cells when stepping past the deepest
binned level).  Rounds advance one level at a time so intermediate results
can be streamed; no round ever coarsens a cell, and every intermediate
frontier still tiles the domain.

The knob priority is strict: refinement levels bind over result counts,
counts over the deviance threshold, deviance over the entropy-change
threshold.  When the mandatory minimum level would produce more results than
the result budget allows, ranking decides which bins get refined and the rest
stay at parent resolution.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Protocol, Sequence

from .core import (
    BASE,
    BinRef,
    DimensionSpec,
    Frontier,
    Level,
    atomic_span,
    base_cells,
    refine_cells,
    replace_cells,
    sort_cells,
    validate_frontier,
)
from .errors import QueryError
from .metrics import BinSplit, average_deviance, bin_rec


@dataclass(frozen=True)
class RefinementKnobs:
    """Thresholds steering the generalized refinement operator.

    Defaults leave every knob open: refine from the current resolution all
    the way to the non-binned data, any number of results, no deviance or
    entropy-change gate.
    """

    min_ref: int = 0
    max_ref: Level = BASE
    min_nr: int = 0
    max_nr: int | None = None
    min_ad: float = 0.0
    max_rec: float | None = None
    scope: str = "all"

    def __post_init__(self):
        if self.min_ad < 0:
            raise QueryError("min_ad must be >= 0")
        if self.min_nr < 0 or (self.max_nr is not None and self.max_nr < self.min_nr):
            raise QueryError("need 0 <= min_nr <= max_nr")
        if isinstance(self.max_ref, int) and self.min_ref > self.max_ref:
            raise QueryError("min_ref exceeds max_ref")


@dataclass(frozen=True)
class FrontierEdit:
    """Replace `cell` with `replacement` (its children or atomic cells)."""

    cell: BinRef
    replacement: tuple[BinRef, ...]


@dataclass(frozen=True)
class RefinementPlan:
    dim: str
    rounds: tuple[tuple[FrontierEdit, ...], ...]
    frontiers: tuple[Frontier, ...]  # frontier after each round
    stop_reason: str

    @property
    def final_frontier(self) -> Frontier | None:
        return self.frontiers[-1] if self.frontiers else None


class PlotSource(Protocol):
    """Where the planner reads y-values from (normally the engine)."""

    @property
    def dim_spec(self) -> DimensionSpec: ...

    def values(self, cells: Sequence[BinRef]) -> list[float]: ...


@dataclass
class EnginePlotSource:
    """PlotSource over a live engine with the session's active predicates."""

    engine: object
    dim_name: str
    predicates: dict
    measure: str | None = None

    @property
    def dim_spec(self) -> DimensionSpec:
        return self.engine.dims[self.dim_name]

    def values(self, cells: Sequence[BinRef]) -> list[float]:
        return self.engine.cell_values(self.dim_name, list(cells),
                                       self.predicates, self.measure)


# ---------------------------------------------------------------------------
# ranking


def average_ranks(values: Sequence[float]) -> list[float]:
    """1-based ranks, ties sharing the average of their positions."""
    n = len(values)
    order = sorted(range(n), key=lambda i: values[i])
    ranks = [0.0] * n
    i = 0
    while i < n:
        j = i
        while j + 1 < n and values[order[j + 1]] == values[order[i]]:
            j += 1
        avg = (i + j) / 2 + 1
        for k in range(i, j + 1):
            ranks[order[k]] = avg
        i = j + 1
    return ranks


def rank_results(cells: Sequence[BinRef], ads: Sequence[float],
                 igps: Sequence[float | None],
                 dim: DimensionSpec) -> list[BinRef]:
    """Order bins by the average of their deviance rank and potential rank.

    Higher deviance is more important; lower information-gain potential is
    more important (empty bins and p = 1 bins sort last).  Ties break by
    ascending bin position.
    """
    if not (len(cells) == len(ads) == len(igps)):
        raise QueryError("cells, ads and igps must align")
    ad_rank = average_ranks([-a for a in ads])
    igp_clean = [math.inf if g is None else g for g in igps]
    igp_rank = average_ranks(igp_clean)
    scored = sorted(
        range(len(cells)),
        key=lambda i: (
            (ad_rank[i] + igp_rank[i]) / 2,
            atomic_span(cells[i], dim)[0],
            dim.depth(cells[i].level),
        ),
    )
    return [cells[i] for i in scored]


def select_top(ranked: Sequence[BinRef], max_nr: int,
               dim: DimensionSpec) -> list[BinRef]:
    """Prefix of ranked bins whose sub-cells fit the displayed-results budget.

    The selected bins get refined; everything after the first bin that does
    not fit stays at parent resolution, so the frontier still tiles.
    """
    chosen: list[BinRef] = []
    used = 0
    for cell in ranked:
        k = len(refine_cells(cell, dim))
        if used + k > max_nr:
            break
        chosen.append(cell)
        used += k
    return chosen


# ---------------------------------------------------------------------------
# planning


class _Planner:
    def __init__(self, frontier: Frontier, knobs: RefinementKnobs, source: PlotSource,
                 restrict_to: BinRef | None = None):
        self.dim = source.dim_spec
        validate_frontier(frontier, self.dim)
        if self.dim.depth(knobs.min_ref) > self.dim.depth(knobs.max_ref):
            raise QueryError("min_ref exceeds max_ref")
        self.knobs = knobs
        self.source = source
        self.frontier = frontier
        self.restrict_to = restrict_to
        self.values: dict[BinRef, float] = {}
        self.rounds: list[tuple[FrontierEdit, ...]] = []
        self.frontiers: list[Frontier] = []

    # -- data access --------------------------------------------------------

    def _ensure_values(self, cells: Sequence[BinRef]) -> None:
        missing = [c for c in cells if c not in self.values]
        if missing:
            for c, y in zip(missing, self.source.values(missing)):
                self.values[c] = y

    def _splits(self, cells: Sequence[BinRef]) -> dict[BinRef, BinSplit]:
        self._ensure_values(self.frontier.cells)
        plot_total = sum(self.values[c] for c in self.frontier.cells)
        subs = {c: refine_cells(c, self.dim) for c in cells}
        flat = [s for ss in subs.values() for s in ss]
        self._ensure_values(flat)
        return {
            c: BinSplit(
                (c, self.values[c]),
                tuple((s, self.values[s]) for s in subs[c]),
                plot_total,
            )
            for c in cells
        }

    def _igps(self, cells: Sequence[BinRef]) -> list[float | None]:
        self._ensure_values(self.frontier.cells)
        plot_total = sum(self.values[c] for c in self.frontier.cells)
        out: list[float | None] = []
        for c in cells:
            y = self.values[c]
            n = len(refine_cells(c, self.dim))
            if plot_total <= 0 or y <= 0:
                out.append(None)
            else:
                p = y / plot_total
                denom = -math.log2(p)
                out.append(math.inf if denom == 0 else math.log2(n) / denom)
        return out

    # -- frontier edits -----------------------------------------------------

    def _in_scope(self, cell: BinRef) -> bool:
        if self.restrict_to is None:
            return True
        rlo, rhi = atomic_span(self.restrict_to, self.dim)
        lo, hi = atomic_span(cell, self.dim)
        return rlo <= lo and hi <= rhi

    def _refinable(self, max_depth: int) -> list[BinRef]:
        return [
            c for c in self.frontier.cells
            if self.dim.depth(c.level) < max_depth and self._in_scope(c)
        ]

    def _apply_round(self, cells: Sequence[BinRef]) -> None:
        edits = tuple(
            FrontierEdit(c, tuple(refine_cells(c, self.dim)))
            for c in sort_cells(cells, self.dim)
        )
        frontier = replace_cells(
            self.frontier, {e.cell: e.replacement for e in edits}, self.dim,
        )
        self.frontier = frontier
        self.rounds.append(edits)
        self.frontiers.append(frontier)

    def _nr(self) -> int:
        return len(self.frontier.cells)

    # -- the knob-priority algorithm -----------------------------------------

    def plan(self) -> RefinementPlan:
        stop = self._mandatory_levels()
        if stop is None:
            stop = self._gated_refinement()
            backfill = self._min_nr_backfill()
            if backfill is not None:
                stop = backfill
        return RefinementPlan(
            self.dim.name, tuple(self.rounds), tuple(self.frontiers), stop,
        )

    def _mandatory_levels(self) -> str | None:
        """Rounds up to min_ref; a budgeted ranked subset on the landing round."""
        min_depth = self.dim.depth(self.knobs.min_ref)
        while True:
            below = [
                c for c in self.frontier.cells
                if self.dim.depth(c.level) < min_depth and self._in_scope(c)
            ]
            if not below:
                return None
            landing = all(self.dim.depth(c.level) + 1 == min_depth for c in below)
            produced = sum(len(refine_cells(c, self.dim)) for c in below)
            nr_after = self._nr() - len(below) + produced
            if (
                landing
                and self.knobs.max_nr is not None
                and nr_after > self.knobs.max_nr
            ):
                splits = self._splits(below)
                ads = [average_deviance(splits[c]) for c in below]
                igps = self._igps(below)
                ranked = rank_results(below, ads, igps, self.dim)
                chosen = select_top(ranked, self.knobs.max_nr, self.dim)
                if chosen:
                    self._apply_round(chosen)
                return "max_nr"
            self._apply_round(below)

    def _gated_refinement(self) -> str:
        """Per-bin rounds toward max_ref while deviance and entropy-change allow."""
        max_depth = self.dim.depth(self.knobs.max_ref)
        while True:
            refinable = self._refinable(max_depth)
            if not refinable:
                return "max_ref"
            splits = self._splits(refinable)
            ad_vetoed = rec_vetoed = False
            candidates = []
            for c in refinable:
                if average_deviance(splits[c]) < self.knobs.min_ad:
                    ad_vetoed = True
                    continue
                if self.knobs.max_rec is not None:
                    rec = bin_rec(splits[c])
                    if rec is not None and rec > self.knobs.max_rec:
                        rec_vetoed = True
                        continue
                candidates.append(c)
            if not candidates:
                return "min_ad" if ad_vetoed else "max_rec"
            if self.knobs.max_nr is not None:
                produced = sum(len(refine_cells(c, self.dim)) for c in candidates)
                nr_after = self._nr() - len(candidates) + produced
                if nr_after > self.knobs.max_nr:
                    return "max_nr"
            self._apply_round(candidates)

    def _min_nr_backfill(self) -> str | None:
        """Refine the highest-ranked stopped bins until min_nr is met."""
        max_depth = self.dim.depth(self.knobs.max_ref)
        changed = False
        while self._nr() < self.knobs.min_nr:
            refinable = self._refinable(max_depth)
            if not refinable:
                break
            splits = self._splits(refinable)
            ads = [average_deviance(splits[c]) for c in refinable]
            ranked = rank_results(refinable, ads, self._igps(refinable), self.dim)
            picked = []
            nr = self._nr()
            for c in ranked:
                if nr >= self.knobs.min_nr:
                    break
                gain = len(refine_cells(c, self.dim)) - 1
                if self.knobs.max_nr is not None and nr + gain > self.knobs.max_nr:
                    break
                picked.append(c)
                nr += gain
            if not picked:
                break
            self._apply_round(picked)
            changed = True
        return "min_nr" if changed else None


def gro_plan(frontier: Frontier, knobs: RefinementKnobs, source: PlotSource,
             restrict_to: BinRef | None = None) -> RefinementPlan:
    """Build the full progressive plan for one plot under the given knobs."""
    return _Planner(frontier, knobs, source, restrict_to).plan()


# ---------------------------------------------------------------------------
# handy single-click operators


def refine_to_max(frontier: Frontier, dim: DimensionSpec) -> RefinementPlan:
    """One round per level down to the non-binned data; nothing vetoes."""
    validate_frontier(frontier, dim)
    rounds: list[tuple[FrontierEdit, ...]] = []
    frontiers: list[Frontier] = []
    current = frontier
    base_depth = dim.depth(BASE)
    while True:
        refinable = [c for c in current.cells if dim.depth(c.level) < base_depth]
        if not refinable:
            break
        edits = tuple(
            FrontierEdit(c, tuple(refine_cells(c, dim)))
            for c in sort_cells(refinable, dim)
        )
        current = replace_cells(current, {e.cell: e.replacement for e in edits}, dim)
        rounds.append(edits)
        frontiers.append(current)
    return RefinementPlan(dim.name, tuple(rounds), tuple(frontiers), "max_ref")


def run_highest(frontier: Frontier, dim: DimensionSpec) -> RefinementPlan:
    """Jump straight to the non-binned data in a single round."""
    validate_frontier(frontier, dim)
    to_refine = sort_cells([c for c in frontier.cells if c.level != BASE], dim)
    if not to_refine:
        return RefinementPlan(dim.name, (), (), "max_ref")
    edits = tuple(FrontierEdit(c, tuple(base_cells(c, dim))) for c in to_refine)
    current = replace_cells(frontier, {e.cell: e.replacement for e in edits}, dim)
    return RefinementPlan(dim.name, (tuple(edits),), (current,), "max_ref")


#: Deviance below which a refinement is not worth showing (just-noticeable
#: relative difference for visual comparison).
INTEREST_THRESHOLD = 0.1


def refine_until_uninteresting(frontier: Frontier, source: PlotSource) -> RefinementPlan:
    """Keep refining bins while their deviance stays at or above 0.1."""
    knobs = RefinementKnobs(min_ad=INTEREST_THRESHOLD)
    return gro_plan(frontier, knobs, source)
