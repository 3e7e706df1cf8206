"""Simulated-workload harness and evaluation reporter.

A workload alternates filter mutations (add / modify / remove, in the
proportions observed in interactive brushing sessions) with a full refinement
sweep over every plot from level 0 down to the deepest binned level, plus the
same queries against the non-binned table as the base case.  Reports carry,
per level: cumulative-time and result-count ratios against the base case,
result error, anomalous fraction, relative entropy change, table sparsity,
and the rank correlation of each result-ranking variant against the
ground-truth importance order.
"""
from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass, field
from pathlib import Path
from statistics import mean, median
from typing import Sequence

import numpy as np

from .binner import BinnedDataset
from .core import BASE, BinRef, Level, Predicate, atomic_span, refine_cells
from .engine import Engine, QueryRequest
from .errors import RefineryError
from .metrics import (
    anomalous_fraction,
    bin_entropy,
    result_error,
    sparsity,
)
from .refinement import average_ranks

REPORT_VERSION = 1

# observed shares of filter mutations in brushing-and-linking sessions
ADD_SHARE, MODIFY_SHARE, REMOVE_SHARE = 0.2441, 0.4582, 0.2977


class BenchInvariantError(RefineryError):
    """A reported metric violated one of its structural invariants."""


@dataclass(frozen=True)
class FilterStep:
    op: str  # add | modify | remove
    dim: str
    lo: int | None
    hi: int | None
    level: int = 0


@dataclass(frozen=True)
class Workload:
    name: str
    steps: tuple[FilterStep, ...]
    seed: int

    @property
    def query_count(self) -> int:
        return len(self.steps)


def simulate_workload(dataset: BinnedDataset, n_queries: int, seed: int) -> Workload:
    """Filter mutations at level-0 boundaries, each spanning 10-50% of a domain."""
    if n_queries < 1:
        raise BenchInvariantError("n_queries must be >= 1")
    rng = np.random.default_rng(seed)
    dims = list(dataset.dims.values())
    active: dict[str, tuple[int, int]] = {}
    steps: list[FilterStep] = []

    def draw_range(dim) -> tuple[int, int]:
        nbins = dim.level0_bins
        frac = 0.1 + 0.4 * rng.random()
        width = max(1, round(frac * nbins))
        lo = int(rng.integers(0, nbins - width + 1))
        return lo, lo + width

    for _ in range(n_queries):
        op = rng.choice(["add", "modify", "remove"],
                        p=[ADD_SHARE, MODIFY_SHARE, REMOVE_SHARE])
        inactive = [d for d in dims if d.name not in active]
        if op == "add" and not inactive:
            op = "modify"
        if op in ("modify", "remove") and not active:
            op = "add"
        if op == "add":
            dim = inactive[int(rng.integers(0, len(inactive)))]
            lo, hi = draw_range(dim)
            active[dim.name] = (lo, hi)
            steps.append(FilterStep("add", dim.name, lo, hi))
        elif op == "modify":
            name = sorted(active)[int(rng.integers(0, len(active)))]
            dim = dataset.dims[name]
            lo, hi = draw_range(dim)
            active[name] = (lo, hi)
            steps.append(FilterStep("modify", name, lo, hi))
        else:
            name = sorted(active)[int(rng.integers(0, len(active)))]
            del active[name]
            steps.append(FilterStep("remove", name, None, None))
    return Workload(dataset.name, tuple(steps), seed)


# ---------------------------------------------------------------------------
# per-level ratio metrics


def compute_rct(level_times: Sequence[float], base_time: float) -> list[float]:
    """Cumulative-time ratios: RCT(k) = sum(t_0..t_k) / t_base."""
    if base_time <= 0:
        raise BenchInvariantError("base time must be positive")
    out = []
    acc = 0.0
    for t in level_times:
        acc += t
        out.append(acc / base_time)
    return out


def compute_rnr(level_counts: Sequence[float], base_count: float) -> list[float]:
    """Result-count ratios: RNR(k) = shown(k) / shown(base)."""
    if base_count <= 0:
        raise BenchInvariantError("base result count must be positive")
    return [c / base_count for c in level_counts]


# ---------------------------------------------------------------------------
# rank correlation


def rank_correlation(xs: Sequence[float], ys: Sequence[float]) -> float | None:
    """Spearman rho over paired scores; average ranks for ties; None if flat."""
    if len(xs) != len(ys):
        raise BenchInvariantError("paired score vectors must align")
    if len(xs) < 2:
        raise BenchInvariantError("need at least two elements")
    rx = average_ranks(list(xs))
    ry = average_ranks(list(ys))
    ax, ay = np.asarray(rx), np.asarray(ry)
    sx, sy = ax - ax.mean(), ay - ay.mean()
    denom = np.sqrt((sx * sx).sum() * (sy * sy).sum())
    if denom == 0:
        return None
    return float((sx * sy).sum() / denom)


def spearman(order_a: Sequence, order_b: Sequence) -> float:
    """Rank correlation of two orderings of the same elements."""
    if len(order_a) < 2:
        raise BenchInvariantError("need at least two elements")
    if set(order_a) != set(order_b) or len(set(order_a)) != len(order_a):
        raise BenchInvariantError("orders must permute the same element set")
    pos_b = {e: i for i, e in enumerate(order_b)}
    rho = rank_correlation(list(range(len(order_a))),
                           [pos_b[e] for e in order_a])
    assert rho is not None  # permutations always have full rank variance
    return rho


def ranking_effectiveness(bins: Sequence[BinRef], values: Sequence[float],
                          ads: Sequence[float], igps: Sequence[float | None],
                          res: Sequence[float]) -> dict[str, float | None]:
    """Correlate each ranking variant with the true importance order.

    Ground truth: larger result error means greater importance.  Variants:
    deviance only (descending), gain potential only (ascending), and the
    average of the two ranks.
    """
    if not (len(bins) == len(values) == len(ads) == len(igps) == len(res)):
        raise BenchInvariantError("ranking inputs must align")
    if len(bins) < 2:
        return {"ad": None, "igp": None, "avg_rank": None}
    truth = list(res)
    igp_clean = [np.inf if g is None else g for g in igps]
    ad_imp = list(ads)
    igp_imp = [-g for g in igp_clean]
    avg = [
        -(a + g) / 2
        for a, g in zip(average_ranks([-a for a in ads]), average_ranks(igp_clean))
    ]
    return {
        "ad": rank_correlation(truth, ad_imp),
        "igp": rank_correlation(truth, igp_imp),
        "avg_rank": rank_correlation(truth, avg),
    }


# ---------------------------------------------------------------------------
# workload execution


@dataclass
class BenchReport:
    dataset: str
    runs: int
    seed: int
    queries: int
    shard_count: int
    version: int = REPORT_VERSION
    levels: list[dict] = field(default_factory=list)
    speedup: list[dict] = field(default_factory=list)
    query_log: list[dict] = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "version": self.version,
            "dataset": self.dataset,
            "runs": self.runs,
            "seed": self.seed,
            "queries": self.queries,
            "shard_count": self.shard_count,
            "levels": self.levels,
            "speedup": self.speedup,
        }


def _level_key(level: Level) -> str:
    return BASE if level == BASE else str(level)


def _apply_step(preds: dict[str, Predicate], step: FilterStep) -> None:
    if step.op == "remove":
        preds.pop(step.dim, None)
    else:
        preds[step.dim] = Predicate(step.dim, step.lo, step.hi, step.level)


def run_workload(dataset: BinnedDataset, workload: Workload, runs: int = 3,
                 shard_count: int | None = None,
                 measure: str | None = None) -> BenchReport:
    """Execute the workload `runs` times on fresh engines and average."""
    dims = list(dataset.dims.values())
    binned_levels = [lv for lv in dataset.tables if lv != BASE]
    binned_levels.sort()
    levels: list[Level] = [*binned_levels, BASE]
    mname = dataset.measure(measure).name

    time_sum = {lv: 0.0 for lv in levels}
    shown_sum = {lv: 0 for lv in levels}
    query_log: list[dict] = []
    engine = None
    for run in range(runs):
        if engine is not None:
            engine.close()
        engine = Engine(dataset, shard_count=shard_count)
        preds: dict[str, Predicate] = {}
        for step_idx, step in enumerate(workload.steps):
            _apply_step(preds, step)
            for lv in levels:
                for d in dims:
                    t0 = time.perf_counter()
                    hist = engine.query(QueryRequest(
                        lv, tuple(preds.values()), d.name, lv, mname))
                    elapsed = (time.perf_counter() - t0) * 1000
                    time_sum[lv] += elapsed
                    shown_sum[lv] += len(hist.cells)
                    query_log.append({
                        "run": run, "step": step_idx, "op": step.op,
                        "filter_dim": step.dim, "level": _level_key(lv),
                        "plot_dim": d.name, "elapsed_ms": elapsed,
                        "cells": len(hist.cells),
                    })
        final_preds = dict(preds)
    assert engine is not None

    # averages over runs
    avg_time = {lv: time_sum[lv] / runs for lv in levels}
    avg_shown = {lv: shown_sum[lv] / runs for lv in levels}
    rct = compute_rct([avg_time[lv] for lv in binned_levels], avg_time[BASE])
    rct.append((sum(avg_time[lv] for lv in binned_levels) + avg_time[BASE])
               / avg_time[BASE])
    rnr = compute_rnr([avg_shown[lv] for lv in levels], avg_shown[BASE])

    quality = _final_state_metrics(dataset, engine, final_preds, levels, mname)

    report = BenchReport(dataset.name, runs, workload.seed,
                         workload.query_count, engine.shard_count)
    report.query_log = query_log
    for i, lv in enumerate(levels):
        bins_per_dim = [d.bin_count(lv) for d in dims]
        row = {
            "level": _level_key(lv),
            "time_ms": avg_time[lv],
            "cum_time_ms": sum(avg_time[l] for l in levels[: i + 1]),
            "base_time_ms": avg_time[BASE],
            "rct": rct[i],
            "shown": avg_shown[lv],
            "base_shown": avg_shown[BASE],
            "rnr": rnr[i],
            "sparsity": sparsity(dataset.tables[lv].row_count, bins_per_dim),
            **quality[lv],
        }
        report.levels.append(row)
    engine.close()
    _check_invariants(report, len(levels))
    return report


def _final_state_metrics(dataset: BinnedDataset, engine: Engine,
                         preds: dict[str, Predicate], levels: list[Level],
                         mname: str) -> dict[Level, dict]:
    """RE / AF / REC / ranking quality on the post-workload filter state."""
    dims = list(dataset.dims.values())
    base_hists = {
        d.name: engine.query(QueryRequest(
            BASE, tuple(preds.values()), d.name, BASE, mname)).as_dict()
        for d in dims
    }
    out: dict[Level, dict] = {}
    for lv in levels:
        res: list[float] = []
        afs: list[float] = []
        recs: list[float] = []
        corr: dict[str, list[float]] = {"ad": [], "igp": [], "avg_rank": []}
        for d in dims:
            hist = engine.query(QueryRequest(
                lv, tuple(preds.values()), d.name, lv, mname))
            if not hist.cells:
                continue
            values = [y for _, y in hist.cells]
            total = sum(values)
            af = anomalous_fraction(values)
            if af is not None:
                afs.append(af)
            if lv == BASE:
                res.extend(0.0 for _ in hist.cells)
                recs.append(0.0)
                continue
            base = base_hists[d.name]
            # deviance ranks by the immediate next-level sub-bins, the error
            # ground truth by the non-binned data within the bin
            next_lv: Level = BASE if lv == d.max_level else lv + 1
            child_hist = engine.query(QueryRequest(
                next_lv, tuple(preds.values()), d.name, next_lv, mname)).as_dict()
            child_factor = d.bin_count(next_lv) // d.bin_count(lv)
            bin_res: list[float] = []
            ads: list[float] = []
            igps: list[float | None] = []
            before_h = after_h = 0.0
            for ref, y in hist.cells:
                lo, hi = atomic_span(ref, d)
                subcells = [base.get(i, 0) for i in range(lo, hi)]
                re = result_error(y, subcells)
                bin_res.append(re if re is not None else 0.0)
                if re is not None:
                    res.append(re)
                kids = [
                    child_hist.get(i, 0)
                    for i in range(ref.index * child_factor,
                                   (ref.index + 1) * child_factor)
                ]
                expected = y / len(kids)
                dev = sum(abs((s - expected) / expected) for s in kids) \
                    / len(kids) if expected else 0.0
                ads.append(dev)
                p = y / total if total else 0.0
                igps.append(
                    None if p <= 0 else (
                        np.inf if p == 1 else np.log2(hi - lo) / -np.log2(p)
                    )
                )
                before_h += bin_entropy(y, total)
                after_h += sum(bin_entropy(s, total) for s in subcells)
            if before_h > 0:
                recs.append((after_h - before_h) / before_h)
            eff = ranking_effectiveness(
                [ref for ref, _ in hist.cells], values, ads, igps, bin_res)
            for k, v in eff.items():
                if v is not None:
                    corr[k].append(v)
        out[lv] = {
            "re_mean": mean(res) if res else None,
            "re_median": median(res) if res else None,
            "af": mean(afs) if afs else None,
            "rec": mean(recs) if recs else None,
            "spearman_ad": mean(corr["ad"]) if corr["ad"] else None,
            "spearman_igp": mean(corr["igp"]) if corr["igp"] else None,
            "spearman_avg_rank": mean(corr["avg_rank"]) if corr["avg_rank"] else None,
        }
    return out


def rank_report(dataset: BinnedDataset, shard_count: int | None = None,
                measure: str | None = None) -> dict:
    """Ranking-effectiveness coefficients per level on the unfiltered dataset."""
    engine = Engine(dataset, shard_count=shard_count)
    try:
        levels = sorted([lv for lv in dataset.tables if lv != BASE]) + [BASE]
        mname = dataset.measure(measure).name
        quality = _final_state_metrics(dataset, engine, {}, levels, mname)
    finally:
        engine.close()
    return {
        "dataset": dataset.name,
        "version": REPORT_VERSION,
        "levels": [
            {
                "level": _level_key(lv),
                "spearman_ad": quality[lv]["spearman_ad"],
                "spearman_igp": quality[lv]["spearman_igp"],
                "spearman_avg_rank": quality[lv]["spearman_avg_rank"],
            }
            for lv in levels
        ],
    }


def measure_speedup(dataset: BinnedDataset, shard_count: int,
                    reps: int = 3, measure: str | None = None) -> list[dict]:
    """Serial vs parallel wall time per level for a fixed query set."""
    mname = dataset.measure(measure).name
    dims = list(dataset.dims.values())
    levels = sorted([lv for lv in dataset.tables if lv != BASE]) + [BASE]
    rows = []
    serial = Engine(dataset, shard_count=1)
    parallel = Engine(dataset, shard_count=shard_count, parallel_min_depth=0)
    try:
        for lv in levels:
            times = {}
            for label, eng in (("serial", serial), ("parallel", parallel)):
                best = np.inf
                for _ in range(reps):
                    t0 = time.perf_counter()
                    for d in dims:
                        eng.query(QueryRequest(lv, (), d.name, lv, mname))
                    best = min(best, time.perf_counter() - t0)
                times[label] = best * 1000
            rows.append({
                "level": _level_key(lv),
                "serial_ms": times["serial"],
                "parallel_ms": times["parallel"],
                "speedup": times["serial"] / times["parallel"]
                if times["parallel"] > 0 else None,
            })
    finally:
        serial.close()
        parallel.close()
    return rows


def _check_invariants(report: BenchReport, n_levels: int) -> None:
    if len(report.levels) != n_levels:
        raise BenchInvariantError(
            f"expected {n_levels} per-level rows, got {len(report.levels)}")
    rcts = [row["rct"] for row in report.levels]
    if any(b < a - 1e-12 for a, b in zip(rcts, rcts[1:])):
        raise BenchInvariantError(f"RCT must be non-decreasing, got {rcts}")
    for row in report.levels:
        if not (0 < row["rnr"] <= 1.0 + 1e-12):
            raise BenchInvariantError(f"RNR out of (0,1]: {row}")
    if abs(report.levels[-1]["rnr"] - 1.0) > 1e-12:
        raise BenchInvariantError("RNR at the non-binned level must be 1")


# ---------------------------------------------------------------------------
# report output


def emit_report(report: BenchReport, path: str | Path,
                figures: bool = True) -> list[Path]:
    """Write report.json plus per-level CSV, the raw query log, and figures."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    written = [path]
    with path.open("w") as fh:
        json.dump(report.to_json(), fh, indent=2)

    levels_csv = path.with_name(path.stem + "_levels.csv")
    with levels_csv.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(report.levels[0].keys()))
        w.writeheader()
        w.writerows(report.levels)
    written.append(levels_csv)

    log_csv = path.with_name(path.stem + "_query_log.csv")
    with log_csv.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=[
            "run", "step", "op", "filter_dim", "level", "plot_dim",
            "elapsed_ms", "cells",
        ])
        w.writeheader()
        w.writerows(report.query_log)
    written.append(log_csv)

    if figures:
        from .figures import render_report_figures

        written.extend(render_report_figures(report, path.parent / "figures"))
    return written


def load_report(path: str | Path) -> dict:
    with Path(path).open() as fh:
        doc = json.load(fh)
    if doc.get("version") != REPORT_VERSION:
        raise BenchInvariantError(f"unsupported report version {doc.get('version')}")
    return doc
