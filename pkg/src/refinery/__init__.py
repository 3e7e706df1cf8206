"""Progressive-refinement analytics over a factor-2 bin hierarchy.

Raw tabular data is pre-binned offline into one aggregated table per
refinement level; filter and refine queries are answered error-free from the
coarse tables within interactive latency, and result resolution is increased
over time under information-theoretic control.
"""

from .core import (
    BASE,
    BinRef,
    DimensionSpec,
    Frontier,
    MeasureSpec,
    Predicate,
)
from .binner import (
    BinnedDataset,
    BinnedTable,
    RawDataset,
    compute_hierarchy,
    generate_synthetic,
    ingest_csv,
    load_dataset,
    materialize_all,
    write_manifest,
)
from .engine import Engine, Histogram, QueryRequest
from .refinement import RefinementKnobs, RefinementPlan, gro_plan

__version__ = "0.1.0"

__all__ = [
    "BASE",
    "BinRef",
    "BinnedDataset",
    "BinnedTable",
    "DimensionSpec",
    "Engine",
    "Frontier",
    "Histogram",
    "MeasureSpec",
    "Predicate",
    "QueryRequest",
    "RawDataset",
    "RefinementKnobs",
    "RefinementPlan",
    "compute_hierarchy",
    "generate_synthetic",
    "gro_plan",
    "ingest_csv",
    "load_dataset",
    "materialize_all",
    "write_manifest",
]
