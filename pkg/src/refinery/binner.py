"""Offline binning pipeline.

Ingests raw columnar data, builds the per-dimension boundary hierarchy,
materializes one aggregated table per refinement level plus the BASE
(atomic-resolution) table, and writes everything under a JSON manifest.

Rows are snapped to atomic cells exactly once at ingest; every level's bin
indices are derived from those integers, so roll-ups between levels are exact
by construction.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .core import BASE, DimensionSpec, Level, MeasureSpec
from .errors import ConfigError, IngestError, ManifestError

MANIFEST_VERSION = 1
MANIFEST_NAME = "manifest.json"


@dataclass
class RawDataset:
    """Raw numeric columns, already validated against their dimension domains."""

    dims: tuple[DimensionSpec, ...]
    measures: tuple[MeasureSpec, ...]
    columns: dict[str, np.ndarray]

    @property
    def row_count(self) -> int:
        return 0 if not self.columns else len(next(iter(self.columns.values())))

    def column_names(self) -> list[str]:
        names = [d.name for d in self.dims]
        for m in self.measures:
            if m.column and m.column not in names:
                names.append(m.column)
        return names

    def iter_rows(self) -> Iterator[tuple[float, ...]]:
        names = self.column_names()
        cols = [self.columns[n] for n in names]
        for i in range(self.row_count):
            yield tuple(float(c[i]) for c in cols)


@dataclass
class BinnedTable:
    """One materialized level: non-empty bin-index tuples with aggregate components."""

    level: Level
    dims: tuple[str, ...]
    indices: dict[str, np.ndarray]
    components: dict[str, np.ndarray]

    @property
    def row_count(self) -> int:
        if not self.indices:
            return 0
        return len(next(iter(self.indices.values())))


class BinHierarchy:
    """Equi-width boundary hierarchy for every dimension, levels 0..max plus BASE."""

    def __init__(self, dims: Sequence[DimensionSpec]):
        self.dims: dict[str, DimensionSpec] = {d.name: d for d in dims}
        if len(self.dims) != len(dims):
            raise ConfigError("duplicate dimension names")

    def boundaries(self, dim: str, level: Level) -> np.ndarray:
        d = self.dims[dim]
        n = d.bin_count(level)
        return d.domain_min + np.arange(n + 1) * (d.domain_max - d.domain_min) / n

    def levels(self) -> list[Level]:
        max_level = min(d.max_level for d in self.dims.values())
        return [*range(max_level + 1), BASE]


def compute_hierarchy(dims: Sequence[DimensionSpec]) -> BinHierarchy:
    """Validate divisibility constraints and return the boundary hierarchy.

    DimensionSpec construction already enforces that every bin at every level
    spans a whole number of atomic cells; this re-checks dims jointly and is
    the single entry point the pipeline goes through.
    """
    if not dims:
        raise ConfigError("at least one dimension required")
    return BinHierarchy(dims)


# ---------------------------------------------------------------------------
# ingest


def _atomic_cells(values: np.ndarray, dim: DimensionSpec) -> np.ndarray:
    """Snap raw values to atomic cell ids; raises on out-of-domain values."""
    bad = (values < dim.domain_min) | (values >= dim.domain_max)
    if bad.any():
        row = int(np.argmax(bad))
        raise IngestError(
            f"row {row}: {dim.name}={values[row]} outside "
            f"[{dim.domain_min}, {dim.domain_max})"
        )
    cells = np.floor((values - dim.domain_min) / dim.atomic_resolution).astype(np.int64)
    np.clip(cells, 0, dim.atomic_cells - 1, out=cells)
    return cells


def ingest_csv(path: str | Path, dims: Sequence[DimensionSpec],
               measures: Sequence[MeasureSpec] = ()) -> RawDataset:
    """Parse a headered CSV into a RawDataset, rejecting out-of-domain values."""
    path = Path(path)
    if not path.exists():
        raise IngestError(f"no such file: {path}")
    ds = RawDataset(tuple(dims), tuple(measures), {})
    needed = ds.column_names()
    data: dict[str, list[float]] = {n: [] for n in needed}
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        missing = [n for n in needed if n not in header]
        if missing:
            raise IngestError(f"{path}: missing columns {missing}")
        for lineno, row in enumerate(reader):
            for n in needed:
                raw = row.get(n)
                try:
                    data[n].append(float(raw))  # type: ignore[arg-type]
                except (TypeError, ValueError):
                    raise IngestError(f"{path} row {lineno}: non-numeric {n}={raw!r}")
    ds.columns = {n: np.asarray(v, dtype=np.float64) for n, v in data.items()}
    for d in dims:
        col = ds.columns[d.name]
        bad = (col < d.domain_min) | (col >= d.domain_max)
        if bad.any():
            row = int(np.argmax(bad))
            raise IngestError(
                f"{path} row {row}: {d.name}={col[row]} outside "
                f"[{d.domain_min}, {d.domain_max})"
            )
    return ds


def write_csv(ds: RawDataset, path: str | Path) -> None:
    names = ds.column_names()
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(names)
        cols = [ds.columns[n] for n in names]
        for i in range(ds.row_count):
            w.writerow([repr(float(c[i])) for c in cols])


# ---------------------------------------------------------------------------
# synthetic data


def _zipf_masses(cells: int, skew: float) -> np.ndarray:
    ranks = np.arange(1, cells + 1, dtype=np.float64)
    m = ranks ** (-skew)
    return m / m.sum()


def generate_synthetic(dims: Sequence[DimensionSpec], distributions: dict[str, dict],
                       n_rows: int, seed: int,
                       measures: Sequence[MeasureSpec] = ()) -> RawDataset:
    """Draw independent per-dimension marginals; deterministic for a fixed seed.

    Supported distribution kinds per dimension:
      uniform: continuous over the domain
      normal:  truncated normal, params mean/stddev (defaults: domain center,
               one sixth of the span)
      zipf:    mass (rank+1)^-skew over atomic cells, values at cell centers
    """
    if n_rows < 1:
        raise ConfigError("n_rows must be >= 1")
    rng = np.random.default_rng(seed)
    columns: dict[str, np.ndarray] = {}
    for d in dims:
        spec = distributions.get(d.name, {"kind": "uniform"})
        kind = spec.get("kind", "uniform")
        span = d.domain_max - d.domain_min
        if kind == "uniform":
            col = d.domain_min + rng.random(n_rows) * span
        elif kind == "normal":
            mean = float(spec.get("mean", d.domain_min + span / 2))
            std = float(spec.get("stddev", span / 6))
            if std <= 0:
                raise ConfigError(f"{d.name}: stddev must be positive")
            col = rng.normal(mean, std, n_rows)
            bad = (col < d.domain_min) | (col >= d.domain_max)
            while bad.any():
                col[bad] = rng.normal(mean, std, int(bad.sum()))
                bad = (col < d.domain_min) | (col >= d.domain_max)
        elif kind == "zipf":
            skew = float(spec.get("skew", 1.5))
            if skew <= 0:
                raise ConfigError(f"{d.name}: zipf skew must be positive")
            cum = np.cumsum(_zipf_masses(d.atomic_cells, skew))
            cells = np.searchsorted(cum, rng.random(n_rows), side="right")
            np.clip(cells, 0, d.atomic_cells - 1, out=cells)
            col = d.domain_min + (cells + 0.5) * d.atomic_resolution
        else:
            raise ConfigError(f"{d.name}: unknown distribution kind {kind!r}")
        columns[d.name] = col
    return RawDataset(tuple(dims), tuple(measures), columns)


def zipf_bin_masses(dim: DimensionSpec, skew: float, level: Level) -> np.ndarray:
    """Analytic probability mass per bin at `level` for the zipf marginal."""
    cell_mass = _zipf_masses(dim.atomic_cells, skew)
    per_bin = dim.cells_per_bin(level)
    return cell_mass.reshape(dim.bin_count(level), per_bin).sum(axis=1)


# ---------------------------------------------------------------------------
# materialization


def materialize_level(raw: RawDataset, hierarchy: BinHierarchy, level: Level) -> BinnedTable:
    """Group rows by their bin-index tuple at `level` and aggregate each measure.

    Only non-empty cells are emitted; the sum of any count measure over the
    emitted cells equals the raw row count.
    """
    n = raw.row_count
    if n == 0:
        raise IngestError("cannot materialize an empty dataset")
    dims = [hierarchy.dims[d.name] for d in raw.dims]
    idx_cols = []
    for d in dims:
        cells = _atomic_cells(raw.columns[d.name], d)
        per_bin = d.cells_per_bin(level)
        idx_cols.append(cells if per_bin == 1 else cells // per_bin)

    # lexsort avoids packing multi-dim keys into one integer (can overflow)
    order = np.lexsort(tuple(reversed(idx_cols)))
    sorted_cols = [c[order] for c in idx_cols]
    new_group = np.zeros(n, dtype=bool)
    new_group[0] = True
    for c in sorted_cols:
        new_group[1:] |= c[1:] != c[:-1]
    starts = np.flatnonzero(new_group)
    counts = np.diff(np.append(starts, n))

    indices = {
        d.name: col[starts].astype(np.int64) for d, col in zip(dims, sorted_cols)
    }
    components: dict[str, np.ndarray] = {}
    for m in raw.measures:
        if m.kind == "count":
            components[m.name] = counts.astype(np.int64)
            continue
        vals = raw.columns[m.column][order].astype(np.float64)
        if m.kind == "sum":
            components[m.name] = np.add.reduceat(vals, starts)
        elif m.kind == "min":
            components[m.name] = np.minimum.reduceat(vals, starts)
        elif m.kind == "max":
            components[m.name] = np.maximum.reduceat(vals, starts)
        elif m.kind == "avg":
            components[f"{m.name}_sum"] = np.add.reduceat(vals, starts)
            components[f"{m.name}_count"] = counts.astype(np.int64)
    return BinnedTable(level, tuple(d.name for d in dims), indices, components)


def materialize_all(raw: RawDataset, hierarchy: BinHierarchy) -> dict[Level, BinnedTable]:
    return {lv: materialize_level(raw, hierarchy, lv) for lv in hierarchy.levels()}


# ---------------------------------------------------------------------------
# manifest + on-disk layout


@dataclass
class Manifest:
    name: str
    version: int
    dims: tuple[DimensionSpec, ...]
    measures: tuple[MeasureSpec, ...]
    levels: list[dict] = field(default_factory=list)  # {level, row_count, path}

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "version": self.version,
            "dims": [
                {
                    "name": d.name,
                    "domain_min": d.domain_min,
                    "domain_max": d.domain_max,
                    "atomic_resolution": d.atomic_resolution,
                    "level0_bins": d.level0_bins,
                    "max_level": d.max_level,
                    "split_factor": d.split_factor,
                }
                for d in self.dims
            ],
            "measures": [
                {"name": m.name, "kind": m.kind, "column": m.column} for m in self.measures
            ],
            "levels": self.levels,
        }

    @classmethod
    def from_json(cls, doc: dict) -> "Manifest":
        try:
            dims = tuple(DimensionSpec(**d) for d in doc["dims"])
            measures = tuple(MeasureSpec(**m) for m in doc["measures"])
            return cls(doc["name"], doc["version"], dims, measures, doc["levels"])
        except (KeyError, TypeError) as exc:
            raise ManifestError(f"malformed manifest: {exc}")


def _level_key(level: Level) -> str:
    return BASE if level == BASE else str(level)


def _table_columns(table: BinnedTable) -> list[tuple[str, np.ndarray]]:
    cols = [(f"bin_{d}", table.indices[d]) for d in table.dims]
    cols += list(table.components.items())
    return cols


def write_manifest(name: str, tables: dict[Level, BinnedTable], hierarchy: BinHierarchy,
                   measures: Sequence[MeasureSpec], out_dir: str | Path) -> Manifest:
    """Write one CSV per level plus manifest.json; the result is re-loadable."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = Manifest(name, MANIFEST_VERSION, tuple(hierarchy.dims.values()),
                        tuple(measures))
    for level in hierarchy.levels():
        if level not in tables:
            raise ManifestError(f"level {level!r} not materialized")
        table = tables[level]
        fname = f"level_{_level_key(level)}.csv"
        cols = _table_columns(table)
        with (out / fname).open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([c for c, _ in cols])
            arrays = [a for _, a in cols]
            for i in range(table.row_count):
                w.writerow([
                    int(a[i]) if np.issubdtype(a.dtype, np.integer) else repr(float(a[i]))
                    for a in arrays
                ])
        manifest.levels.append(
            {"level": _level_key(level), "row_count": table.row_count, "path": fname}
        )
    with (out / MANIFEST_NAME).open("w") as fh:
        json.dump(manifest.to_json(), fh, indent=2)
    return manifest


@dataclass
class BinnedDataset:
    """A loaded dataset: specs plus one table per level, ready for the engine."""

    manifest: Manifest
    tables: dict[Level, BinnedTable]

    @property
    def name(self) -> str:
        return self.manifest.name

    @property
    def dims(self) -> dict[str, DimensionSpec]:
        return {d.name: d for d in self.manifest.dims}

    @property
    def measures(self) -> tuple[MeasureSpec, ...]:
        return self.manifest.measures

    def measure(self, name: str | None = None) -> MeasureSpec:
        if name is None:
            return self.manifest.measures[0]
        for m in self.manifest.measures:
            if m.name == name:
                return m
        raise ManifestError(f"no measure named {name!r}")


def dataset_from_tables(name: str, tables: dict[Level, BinnedTable],
                        hierarchy: BinHierarchy,
                        measures: Sequence[MeasureSpec]) -> BinnedDataset:
    """In-memory dataset without touching disk (bench and tests use this)."""
    manifest = Manifest(name, MANIFEST_VERSION, tuple(hierarchy.dims.values()),
                        tuple(measures))
    manifest.levels = [
        {"level": _level_key(lv), "row_count": t.row_count, "path": None}
        for lv, t in tables.items()
    ]
    return BinnedDataset(manifest, tables)


def load_dataset(data_dir: str | Path) -> BinnedDataset:
    """Load a dataset written by write_manifest, validating row counts."""
    data_dir = Path(data_dir)
    mpath = data_dir / MANIFEST_NAME
    if not mpath.exists():
        raise ManifestError(f"no manifest at {mpath}")
    with mpath.open() as fh:
        manifest = Manifest.from_json(json.load(fh))
    if manifest.version != MANIFEST_VERSION:
        raise ManifestError(f"unsupported manifest version {manifest.version}")
    hierarchy = BinHierarchy(manifest.dims)
    expected = {_level_key(lv) for lv in hierarchy.levels()}
    declared = {e["level"] for e in manifest.levels}
    if expected != declared:
        raise ManifestError(f"manifest levels {sorted(declared)} != expected {sorted(expected)}")

    dim_names = tuple(d.name for d in manifest.dims)
    comps = [(c, is_int) for m in manifest.measures for c, _, is_int in m.components()]
    tables: dict[Level, BinnedTable] = {}
    for entry in manifest.levels:
        level: Level = BASE if entry["level"] == BASE else int(entry["level"])
        path = data_dir / entry["path"]
        if not path.exists():
            raise ManifestError(f"missing table file {path}")
        with path.open(newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            rows = list(reader)
        want = [f"bin_{d}" for d in dim_names] + [c for c, _ in comps]
        if header != want:
            raise ManifestError(f"{path}: header {header} != {want}")
        if len(rows) != entry["row_count"]:
            raise ManifestError(
                f"{path}: {len(rows)} rows but manifest declares {entry['row_count']}"
            )
        arr = np.asarray(rows, dtype=np.float64) if rows else np.zeros((0, len(want)))
        indices = {
            d: arr[:, i].astype(np.int64) for i, d in enumerate(dim_names)
        }
        components = {}
        for j, (cname, is_int) in enumerate(comps):
            col = arr[:, len(dim_names) + j]
            components[cname] = col.astype(np.int64) if is_int else col
        tables[level] = BinnedTable(level, dim_names, indices, components)
    return BinnedDataset(manifest, tables)
