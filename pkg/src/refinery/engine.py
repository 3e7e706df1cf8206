"""In-memory sharded filter/group-aggregate engine.

One ShardSet per materialized level; a query fans out over the level's
workers and merges partial histograms cell-wise (a commutative, associative
monoid per measure component), so results are identical for any shard count.

Each worker keeps crossfilter-style state: per-dimension sorted orders plus a
per-row count of failing filters.  Changing one dimension's predicate only
touches the rows entering or leaving that range, which is what makes
session-based querying (small filter deltas, many queries) cheap.  Excluding
the grouped dimension's own filter (brushing-and-linking semantics) falls out
of the same bookkeeping: a row passes all-but-d exactly when its fail count
equals its fail flag on d.
"""
from __future__ import annotations

import os
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .binner import BinnedDataset, BinnedTable
from .core import (
    BinRef,
    DimensionSpec,
    Frontier,
    Level,
    MeasureSpec,
    Predicate,
    atomic_span,
    make_ref,
    snap_predicate,
    validate_frontier,
)
from .errors import QueryError


@dataclass(frozen=True)
class QueryRequest:
    """One filter/group/aggregate request against a single level's table."""

    level: Level
    predicates: tuple[Predicate, ...]
    group_dim: str
    group_level: Level
    measure: str
    exclude_own_filter: bool = True


@dataclass(frozen=True)
class Histogram:
    """Aggregated y per group bin, sorted by x; absent bins mean y = 0."""

    group_dim: str
    measure: str
    cells: tuple[tuple[BinRef, float], ...]
    total: float

    def values(self) -> list[float]:
        return [y for _, y in self.cells]

    def as_dict(self) -> dict[int, float]:
        return {ref.index: y for ref, y in self.cells}


@dataclass
class PartialHistogram:
    """Dense per-group components from one worker (or a merge of workers)."""

    group_dim: str
    group_level: Level
    measure: str
    nbins: int
    occupancy: np.ndarray
    comps: dict[str, np.ndarray]
    ops: dict[str, str] = field(default_factory=dict)


def merge_partials(partials: list[PartialHistogram]) -> PartialHistogram:
    """Cell-wise monoid merge; commutative and associative per component."""
    if not partials:
        raise QueryError("nothing to merge")
    first = partials[0]
    for p in partials[1:]:
        if (p.group_dim, p.group_level, p.measure, p.nbins) != (
            first.group_dim, first.group_level, first.measure, first.nbins,
        ):
            raise QueryError("mismatched partial histogram shapes")
    out = PartialHistogram(
        first.group_dim, first.group_level, first.measure, first.nbins,
        first.occupancy.copy(), {k: v.copy() for k, v in first.comps.items()},
        dict(first.ops),
    )
    for p in partials[1:]:
        out.occupancy += p.occupancy
        for name, arr in p.comps.items():
            op = out.ops[name]
            if op == "sum":
                out.comps[name] = out.comps[name] + arr
            elif op == "min":
                out.comps[name] = np.minimum(out.comps[name], arr)
            else:
                out.comps[name] = np.maximum(out.comps[name], arr)
    return out


class Worker:
    """Owns one shard: columnar copies, sorted per-dim orders, filter state."""

    def __init__(self, dims: dict[str, DimensionSpec], level: Level,
                 indices: dict[str, np.ndarray], comps: dict[str, np.ndarray]):
        self.dims = dims
        self.level = level
        self.idx = indices
        self.comps = comps
        self.n = 0 if not indices else len(next(iter(indices.values())))
        self.order: dict[str, np.ndarray] = {}
        self.sorted_vals: dict[str, np.ndarray] = {}
        for d, col in indices.items():
            order = np.argsort(col, kind="stable")
            self.order[d] = order
            self.sorted_vals[d] = col[order]
        self.fails: dict[str, np.ndarray] = {
            d: np.zeros(self.n, dtype=bool) for d in indices
        }
        self.fail_count = np.zeros(self.n, dtype=np.uint8)
        self.current: dict[str, tuple[int, int] | None] = {d: None for d in indices}

    def _positions(self, dim: str, rng: tuple[int, int] | None) -> tuple[int, int]:
        if rng is None:
            return 0, self.n
        sv = self.sorted_vals[dim]
        return (
            int(np.searchsorted(sv, rng[0], side="left")),
            int(np.searchsorted(sv, rng[1], side="left")),
        )

    def _shift(self, dim: str, pos_a: int, pos_b: int, entering: bool) -> None:
        """Rows at sorted positions [pos_a, pos_b) flip between pass and fail."""
        if pos_a >= pos_b:
            return
        rows = self.order[dim][pos_a:pos_b]
        if entering:
            self.fails[dim][rows] = False
            self.fail_count[rows] -= 1
        else:
            self.fails[dim][rows] = True
            self.fail_count[rows] += 1

    def set_filter(self, dim: str, rng: tuple[int, int] | None) -> None:
        if rng == self.current[dim]:
            return
        s1, e1 = self._positions(dim, self.current[dim])
        s2, e2 = self._positions(dim, rng)
        # interval set differences; the two pieces per direction never overlap
        self._shift(dim, s2, min(e2, s1), entering=True)
        self._shift(dim, max(s2, e1), e2, entering=True)
        self._shift(dim, s1, min(e1, s2), entering=False)
        self._shift(dim, max(s1, e2), e1, entering=False)
        self.current[dim] = rng

    def apply_filters(self, ranges: dict[str, "tuple[int, int] | None"]) -> None:
        for d in self.idx:
            self.set_filter(d, ranges.get(d))

    def aggregate(self, group_dim: str, group_level: Level, divisor: int, nbins: int,
                  measure: MeasureSpec, exclude_group: bool) -> PartialHistogram:
        if exclude_group and self.current.get(group_dim) is not None:
            passing = self.fail_count == self.fails[group_dim]
        else:
            passing = self.fail_count == 0
        sel = np.flatnonzero(passing)
        gidx = self.idx[group_dim][sel]
        if divisor > 1:
            gidx = gidx // divisor
        occupancy = np.bincount(gidx, minlength=nbins).astype(np.int64)
        comps: dict[str, np.ndarray] = {}
        ops: dict[str, str] = {}
        for cname, op, is_int in measure.components():
            vals = self.comps[cname][sel]
            if op == "sum":
                dense = np.bincount(gidx, weights=vals.astype(np.float64),
                                    minlength=nbins)
                comps[cname] = dense.astype(np.int64) if is_int else dense
            else:
                fill = np.inf if op == "min" else -np.inf
                dense = np.full(nbins, fill, dtype=np.float64)
                if len(gidx):
                    sub = np.argsort(gidx, kind="stable")
                    g2 = gidx[sub]
                    starts = np.flatnonzero(np.diff(g2, prepend=g2[0] - 1))
                    reducer = np.minimum if op == "min" else np.maximum
                    dense[g2[starts]] = reducer.reduceat(vals[sub], starts)
                comps[cname] = dense
            ops[cname] = op
        return PartialHistogram(group_dim, group_level, measure.name, nbins,
                                occupancy, comps, ops)


def shard_query(worker: Worker, ranges: dict, group_dim: str, group_level: Level,
                divisor: int, nbins: int, measure: MeasureSpec,
                exclude_group: bool) -> PartialHistogram:
    """Run one request against one shard: update filters, group, aggregate."""
    worker.apply_filters(ranges)
    return worker.aggregate(group_dim, group_level, divisor, nbins, measure,
                            exclude_group)


@dataclass
class ShardSet:
    """Round-robin row partition of one level's table, one worker per shard."""

    level: Level
    shard_count: int
    workers: list[Worker]


def build_shards(table: BinnedTable, shard_count: int,
                 dims: dict[str, DimensionSpec]) -> ShardSet:
    if shard_count < 1:
        raise QueryError(f"shard_count {shard_count} < 1")
    workers = []
    for s in range(shard_count):
        rows = slice(s, None, shard_count)
        indices = {d: arr[rows].copy() for d, arr in table.indices.items()}
        comps = {c: arr[rows].copy() for c, arr in table.components.items()}
        workers.append(Worker(dims, table.level, indices, comps))
    return ShardSet(table.level, shard_count, workers)


class Engine:
    """Master over per-level shard sets: fan-out, merge, finalize, record timing."""

    def __init__(self, dataset: BinnedDataset, shard_count: int | None = None,
                 parallel_min_depth: int = 2):
        self.dataset = dataset
        self.dims = dataset.dims
        self.shard_count = shard_count or (os.cpu_count() or 1)
        self.parallel_min_depth = parallel_min_depth
        self.shard_sets: dict[Level, ShardSet] = {
            lv: build_shards(t, self.shard_count, self.dims)
            for lv, t in dataset.tables.items()
        }
        self._pool = (
            ThreadPoolExecutor(max_workers=self.shard_count)
            if self.shard_count > 1 else None
        )
        self._lock = threading.Lock()
        self.query_log: list[dict] = []

    def close(self) -> None:
        if self._pool:
            self._pool.shutdown(wait=False)

    # -- internals ----------------------------------------------------------

    def _table_ranges(self, predicates: tuple[Predicate, ...],
                      level: Level) -> dict[str, tuple[int, int]]:
        ranges: dict[str, tuple[int, int]] = {}
        for pred in predicates:
            if pred.dim not in self.dims:
                raise QueryError(f"unknown dimension {pred.dim!r}")
            if pred.dim in ranges:
                raise QueryError(f"duplicate predicate on {pred.dim!r}")
            snapped = snap_predicate(pred, level, self.dims[pred.dim])
            ranges[pred.dim] = (snapped.lo, snapped.hi)
        return ranges

    def _run(self, shard_set: ShardSet, ranges: dict, group_dim: str,
             group_level: Level, divisor: int, nbins: int, measure: MeasureSpec,
             exclude: bool) -> PartialHistogram:
        def work(worker: Worker) -> PartialHistogram:
            return shard_query(worker, ranges, group_dim, group_level, divisor,
                               nbins, measure, exclude)

        depth = self.dims[group_dim].depth(shard_set.level)
        if self._pool is not None and depth >= self.parallel_min_depth:
            partials = list(self._pool.map(work, shard_set.workers))
        else:
            partials = [work(w) for w in shard_set.workers]
        return merge_partials(partials)

    def _finalize(self, partial: PartialHistogram, measure: MeasureSpec,
                  dim: DimensionSpec, group_level: Level) -> Histogram:
        occupied = np.flatnonzero(partial.occupancy > 0)
        cells = []
        total_components: dict[str, float] = {}
        for i in occupied:
            i = int(i)
            y = _cell_value(measure, partial.comps, i)
            cells.append((make_ref(dim, group_level, i), y))
        for cname, op, is_int in measure.components():
            col = partial.comps[cname][occupied]
            if len(col) == 0:
                total_components[cname] = 0
            elif op == "sum":
                s = col.sum()
                total_components[cname] = int(s) if is_int else float(s)
            elif op == "min":
                total_components[cname] = float(col.min())
            else:
                total_components[cname] = float(col.max())
        total = _measure_total(measure, total_components)
        return Histogram(partial.group_dim, measure.name, tuple(cells), total)

    # -- public api ---------------------------------------------------------

    def query(self, request: QueryRequest) -> Histogram:
        """Execute one request; equals the merge of all shard partials."""
        t0 = time.perf_counter()
        if request.level not in self.shard_sets:
            raise QueryError(f"level {request.level!r} not materialized")
        if request.group_dim not in self.dims:
            raise QueryError(f"unknown group dimension {request.group_dim!r}")
        dim = self.dims[request.group_dim]
        if dim.depth(request.group_level) > dim.depth(request.level):
            raise QueryError(
                f"group level {request.group_level!r} finer than table level "
                f"{request.level!r}"
            )
        measure = self.dataset.measure(request.measure)
        divisor = dim.bin_count(request.level) // dim.bin_count(request.group_level)
        nbins = dim.bin_count(request.group_level)
        with self._lock:
            ranges = self._table_ranges(request.predicates, request.level)
            full = {d: ranges.get(d) for d in self.dims}
            partial = self._run(
                self.shard_sets[request.level], full, request.group_dim,
                request.group_level, divisor, nbins, measure,
                request.exclude_own_filter,
            )
        hist = self._finalize(partial, measure, dim, request.group_level)
        elapsed = (time.perf_counter() - t0) * 1000
        self.query_log.append({"level": request.level, "ms": elapsed,
                               "dim": request.group_dim})
        return hist

    def cell_values(self, dname: str, cells: list[BinRef],
                    predicates: dict[str, Predicate],
                    measure: str | None = None) -> list[float]:
        """y per cell (possibly mixed levels) with dname's own filter excluded.

        Cells need not tile the domain; absent data yields 0.
        """
        if dname not in self.dims:
            raise QueryError(f"unknown dimension {dname!r}")
        dim = self.dims[dname]
        measure_spec = self.dataset.measure(measure)
        preds = tuple(predicates.values())
        pred_depth = max(
            (self.dims[p.dim].depth(p.level) for p in preds), default=0
        )
        out: list[float] = [0.0] * len(cells)
        by_level: dict[Level, list[int]] = {}
        for pos, cell in enumerate(cells):
            by_level.setdefault(cell.level, []).append(pos)
        for lv, positions in by_level.items():
            table_level = dim.level_of_depth(max(dim.depth(lv), pred_depth))
            hist = self.query(QueryRequest(
                level=table_level, predicates=preds, group_dim=dname,
                group_level=lv, measure=measure_spec.name,
                exclude_own_filter=True,
            ))
            lookup = hist.as_dict()
            for pos in positions:
                out[pos] = lookup.get(cells[pos].index, 0)
        return out

    def multi_query(self, predicates: dict[str, Predicate],
                    frontiers: dict[str, Frontier],
                    measure: str | None = None) -> dict[str, Histogram]:
        """Crossfilter round: one histogram per dimension at its frontier.

        Each dimension's histogram reflects every active filter except its
        own, carries exactly one cell per frontier cell (empty cells get
        y = 0), and mixes levels when the frontier does.
        """
        measure_spec = self.dataset.measure(measure)
        out: dict[str, Histogram] = {}
        for dname, frontier in frontiers.items():
            dim = self.dims[dname]
            validate_frontier(frontier, dim)
            ordered = sorted(frontier.cells, key=lambda c: atomic_span(c, dim)[0])
            ys = self.cell_values(dname, ordered, predicates, measure_spec.name)
            cells = tuple(zip(ordered, ys))
            total = _combine_totals(measure_spec, [y for y in ys if y != 0])
            out[dname] = Histogram(dname, measure_spec.name, cells, total)
        return out


def _cell_value(measure: MeasureSpec, comps: dict[str, np.ndarray], i: int):
    if measure.kind == "count":
        return int(comps[measure.name][i])
    if measure.kind in ("sum", "min", "max"):
        return float(comps[measure.name][i])
    s = float(comps[f"{measure.name}_sum"][i])
    c = int(comps[f"{measure.name}_count"][i])
    return s / c


def _measure_total(measure: MeasureSpec, totals: dict[str, float]):
    if measure.kind == "count":
        return int(totals[measure.name])
    if measure.kind in ("sum", "min", "max"):
        return float(totals[measure.name])
    c = totals[f"{measure.name}_count"]
    return float(totals[f"{measure.name}_sum"]) / c if c else 0.0


def _combine_totals(measure: MeasureSpec, values: list[float]):
    if not values:
        return 0
    if measure.kind in ("count", "sum"):
        return sum(values)
    if measure.kind == "min":
        return min(values)
    if measure.kind == "max":
        return max(values)
    return sum(values) / len(values)  # avg of cell averages is presentation-only
