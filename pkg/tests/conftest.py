"""Shared fixtures: small dimension specs, dataset builders, brute-force oracles."""
from __future__ import annotations

import numpy as np
import pytest

from refinery.binner import (
    BinnedDataset,
    RawDataset,
    compute_hierarchy,
    dataset_from_tables,
    materialize_all,
)
from refinery.core import BASE, DimensionSpec, MeasureSpec, Predicate, bin_of


@pytest.fixture
def dim_quarters() -> DimensionSpec:
    """The 4-bin [0,100) dimension used throughout the worked examples."""
    return DimensionSpec("x", 0.0, 100.0, 0.25, level0_bins=4, max_level=2)


@pytest.fixture
def dim_units() -> DimensionSpec:
    """Integer-domain dimension: 128 atomic cells, 4 level-0 bins, 2 levels."""
    return DimensionSpec("x", 0.0, 128.0, 1.0, level0_bins=4, max_level=2)


def make_dims(n_dims: int, atomic_cells: int = 128, level0_bins: int = 4,
              max_level: int = 2) -> list[DimensionSpec]:
    return [
        DimensionSpec(f"d{i}", 0.0, float(atomic_cells), 1.0,
                      level0_bins=level0_bins, max_level=max_level)
        for i in range(n_dims)
    ]


def random_raw(dims: list[DimensionSpec], n_rows: int, seed: int,
               measures: tuple[MeasureSpec, ...] = (MeasureSpec("n", "count"),),
               integer_values: bool = True) -> RawDataset:
    """Random rows; integer-valued so sums stay exact under any addition order."""
    rng = np.random.default_rng(seed)
    columns = {}
    for d in dims:
        if integer_values:
            cells = rng.integers(0, d.atomic_cells, n_rows)
            columns[d.name] = d.domain_min + (cells + 0.5) * d.atomic_resolution
        else:
            columns[d.name] = d.domain_min + rng.random(n_rows) * (
                d.domain_max - d.domain_min
            )
    return RawDataset(tuple(dims), measures, columns)


def build_dataset(dims: list[DimensionSpec], n_rows: int, seed: int,
                  measures: tuple[MeasureSpec, ...] = (MeasureSpec("n", "count"),),
                  name: str = "test") -> tuple[RawDataset, BinnedDataset]:
    raw = random_raw(dims, n_rows, seed, measures)
    hierarchy = compute_hierarchy(dims)
    tables = materialize_all(raw, hierarchy)
    return raw, dataset_from_tables(name, tables, hierarchy, measures)


def oracle_histogram(raw: RawDataset, group_dim: str, group_level,
                     predicates: dict[str, Predicate], measure: MeasureSpec,
                     exclude_own: bool = True) -> dict[int, float]:
    """Nested-loop filter + group-by over raw rows, mapped through bin_of.

    Deliberately independent of the engine: plain python loops and dicts.
    """
    dims = {d.name: d for d in raw.dims}
    names = [d.name for d in raw.dims]
    cols = [raw.columns[n] for n in names]
    mcol = raw.columns[measure.column] if measure.column else None
    out: dict[int, list] = {}
    for r in range(raw.row_count):
        keep = True
        for pred in predicates.values():
            if exclude_own and pred.dim == group_dim:
                continue
            v = cols[names.index(pred.dim)][r]
            b = bin_of(float(v), dims[pred.dim], pred.level)
            if not (pred.lo <= b < pred.hi):
                keep = False
                break
        if not keep:
            continue
        g = bin_of(float(cols[names.index(group_dim)][r]), dims[group_dim], group_level)
        bucket = out.setdefault(g, [])
        bucket.append(float(mcol[r]) if mcol is not None else 1.0)
    result: dict[int, float] = {}
    for g, vals in out.items():
        if measure.kind == "count":
            result[g] = len(vals)
        elif measure.kind == "sum":
            result[g] = sum(vals)
        elif measure.kind == "min":
            result[g] = min(vals)
        elif measure.kind == "max":
            result[g] = max(vals)
        else:
            result[g] = sum(vals) / len(vals)
    return result
