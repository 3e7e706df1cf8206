"""Command line interface: build, synth, serve, and the bench harness."""
from __future__ import annotations

import json
import sys
from pathlib import Path

import click

from .bench import (
    emit_report,
    measure_speedup,
    rank_report,
    run_workload,
    simulate_workload,
)
from .binner import (
    compute_hierarchy,
    generate_synthetic,
    ingest_csv,
    load_dataset,
    materialize_all,
    write_csv,
    write_manifest,
)
from .core import DimensionSpec, MeasureSpec
from .errors import RefineryError


def _parse_measures(doc: dict) -> tuple[MeasureSpec, ...]:
    raw = doc.get("measures") or [{"name": "count", "kind": "count"}]
    return tuple(
        MeasureSpec(m["name"], m["kind"], m.get("column")) for m in raw
    )


def _parse_dims(doc: dict, level0_bins: str | None = None,
                max_level: int | None = None) -> list[DimensionSpec]:
    per_dim_bins: dict[str, int] = {}
    default_bins = None
    if level0_bins:
        try:
            default_bins = int(level0_bins)
        except ValueError:
            per_dim_bins = {k: int(v) for k, v in json.loads(level0_bins).items()}
    dims = []
    for d in doc["dims"]:
        lo, hi = d["domain"]
        dims.append(DimensionSpec(
            name=d["name"],
            domain_min=float(lo),
            domain_max=float(hi),
            atomic_resolution=float(d.get("atomic_resolution", 1.0)),
            level0_bins=per_dim_bins.get(
                d["name"], default_bins or d.get("level0_bins", 32)),
            max_level=max_level if max_level is not None
            else d.get("max_level", 4),
        ))
    return dims


@click.group()
def main():
    """Progressive-refinement analytics over pre-binned tables."""


@main.command()
@click.option("--input", "input_csv", required=True, type=click.Path(exists=True),
              help="Raw CSV with one column per dimension (plus measure columns).")
@click.option("--schema", required=True, type=click.Path(exists=True),
              help="JSON schema: {name, dims:[{name, domain, atomic_resolution}], measures}.")
@click.option("--level0-bins", default=None,
              help="Bins per dimension at level 0: an integer or per-dim JSON object.")
@click.option("--max-level", default=None, type=int,
              help="Deepest binned level (level k has level0_bins * 2^k bins).")
@click.option("--out", required=True, type=click.Path(),
              help="Output directory for the binned tables and manifest.")
def build(input_csv, schema, level0_bins, max_level, out):
    """Bin a raw CSV into one table per refinement level plus the base table."""
    doc = json.loads(Path(schema).read_text())
    try:
        dims = _parse_dims(doc, level0_bins, max_level)
        measures = _parse_measures(doc)
        raw = ingest_csv(input_csv, dims, measures)
        hierarchy = compute_hierarchy(dims)
        tables = materialize_all(raw, hierarchy)
        manifest = write_manifest(doc.get("name", Path(input_csv).stem), tables,
                                  hierarchy, measures, out)
    except RefineryError as exc:
        raise click.ClickException(str(exc))
    for entry in manifest.levels:
        click.echo(f"level {entry['level']}: {entry['row_count']} rows -> {entry['path']}")
    click.echo(f"manifest written to {Path(out) / 'manifest.json'}")


@main.command()
@click.option("--spec", required=True, type=click.Path(exists=True),
              help="JSON spec: {dims:[{name, domain, atomic_resolution, dist}]}.")
@click.option("--rows", required=True, type=int)
@click.option("--seed", default=0, type=int)
@click.option("--out", required=True, type=click.Path())
def synth(spec, rows, seed, out):
    """Generate a synthetic raw CSV from per-dimension marginal distributions."""
    doc = json.loads(Path(spec).read_text())
    try:
        dims = _parse_dims(doc)
        distributions = {d["name"]: d.get("dist", {"kind": "uniform"})
                         for d in doc["dims"]}
        raw = generate_synthetic(dims, distributions, rows, seed,
                                 _parse_measures(doc))
        write_csv(raw, out)
    except RefineryError as exc:
        raise click.ClickException(str(exc))
    click.echo(f"{rows} rows -> {out}")


@main.command()
@click.option("--data", required=True, type=click.Path(exists=True),
              help="Dataset directory (or a directory of dataset directories).")
@click.option("--port", default=8000, type=int)
@click.option("--shards", default=None, type=int,
              help="Workers per level table; defaults to the core count.")
@click.option("--debounce-ms", default=50.0, type=float)
@click.option("--latency-budget-ms", default=100.0, type=float)
@click.option("--ui", default=None, type=click.Path(),
              help="Static UI bundle to serve under /ui (default: ./frontend/dist).")
def serve(data, port, shards, debounce_ms, latency_budget_ms, ui):
    """Serve sessions: POST /sessions, GET /datasets, WS /sessions/{id}/stream."""
    import uvicorn

    from .server import DatasetRegistry, create_app, startup_probe

    registry = DatasetRegistry(shard_count=shards)
    try:
        registry.load_dir(data)
    except RefineryError as exc:
        raise click.ClickException(str(exc))
    for name, ms in startup_probe(registry, latency_budget_ms).items():
        status = "ok" if ms <= latency_budget_ms else "OVER BUDGET"
        click.echo(f"probe {name}: level-0 multi-plot query {ms:.1f} ms [{status}]")
    ui_dir = ui or (Path.cwd() / "frontend" / "dist")
    app = create_app(registry, debounce_ms=debounce_ms, ui_dir=ui_dir)
    uvicorn.run(app, host="0.0.0.0", port=port)


@main.group()
def bench():
    """Simulated-workload benchmark harness."""


@bench.command("run")
@click.option("--data", required=True, type=click.Path(exists=True))
@click.option("--queries", default=100, type=int)
@click.option("--runs", default=3, type=int)
@click.option("--seed", default=0, type=int)
@click.option("--shards", default=None, type=int)
@click.option("--out", default="report.json", type=click.Path())
@click.option("--figures/--no-figures", default=True)
def bench_run(data, queries, runs, seed, shards, out, figures):
    """Run the filter+refine workload and emit the evaluation report."""
    try:
        dataset = load_dataset(data)
        workload = simulate_workload(dataset, queries, seed)
        report = run_workload(dataset, workload, runs=runs, shard_count=shards)
        report.speedup = measure_speedup(dataset, shard_count=report.shard_count)
        written = emit_report(report, out, figures=figures)
    except RefineryError as exc:
        click.echo(f"bench failed: {exc}", err=True)
        sys.exit(1)
    for row in report.levels:
        click.echo(
            f"level {row['level']:>4}: rct={row['rct']:.4f} rnr={row['rnr']:.4f} "
            f"sparsity={row['sparsity']:.3g}"
        )
    click.echo("wrote " + ", ".join(str(p) for p in written))


@bench.command("rank")
@click.option("--data", required=True, type=click.Path(exists=True))
@click.option("--shards", default=None, type=int)
@click.option("--out", default="ranks.json", type=click.Path())
def bench_rank(data, shards, out):
    """Report ranking-variant effectiveness (rank correlation per level)."""
    try:
        dataset = load_dataset(data)
        doc = rank_report(dataset, shard_count=shards)
    except RefineryError as exc:
        click.echo(f"bench failed: {exc}", err=True)
        sys.exit(1)
    Path(out).write_text(json.dumps(doc, indent=2))
    for row in doc["levels"]:
        click.echo(f"level {row['level']:>4}: {row}")
    click.echo(f"wrote {out}")


if __name__ == "__main__":
    main()
