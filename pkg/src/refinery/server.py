"""Session middleware and the streaming HTTP endpoint.

The middleware layer (SessionService / SessionRunner) is transport
independent: it turns UI actions into engine queries and refinement plans and
yields result frames in sequence order.  The FastAPI app wraps it with a
WebSocket per session; actions and frames travel as JSON objects over that
single connection.

A session's actions are strictly serialized.  While a progressive plan is
executing, a newly arriving filter, reset, or stop cancels the remaining
rounds between one round and the next; queued filter actions on the same
dimension coalesce to the last writer.
"""
from __future__ import annotations

import asyncio
import json
import time
import uuid
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterator

from fastapi import FastAPI, HTTPException, WebSocket, WebSocketDisconnect

from .binner import BinnedDataset, load_dataset
from .core import (
    BASE,
    BinRef,
    Frontier,
    Level,
    Predicate,
    bin_range,
    level0_frontier,
    make_ref,
    refine_cells,
    replace_cell,
    validate_predicate,
)
from .engine import Engine, Histogram
from .errors import ManifestError, QueryError, RefineryError
from .metrics import (
    BinSplit,
    MetricReport,
    bin_entropy,
    entropy,
    igp,
    plot_average_deviance,
)
from .refinement import (
    EnginePlotSource,
    RefinementKnobs,
    RefinementPlan,
    gro_plan,
    refine_to_max,
    refine_until_uninteresting,
    run_highest,
)

SUPERSEDING_ACTIONS = ("filter", "reset", "stop")


def _level_json(level: Level):
    return level if level == BASE else int(level)


def _level_from_json(value) -> Level:
    if value == BASE:
        return BASE
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise QueryError(f"bad level {value!r}")
    return int(value)


@dataclass
class Session:
    id: str
    dataset: BinnedDataset
    engine: Engine
    measure: str
    predicates: dict[str, Predicate] = field(default_factory=dict)
    frontiers: dict[str, Frontier] = field(default_factory=dict)
    seq: int = 0
    last_snapshot: dict[str, dict] = field(default_factory=dict)
    last_active: float = field(default_factory=time.monotonic)

    def next_seq(self) -> int:
        self.seq += 1
        return self.seq


class DatasetRegistry:
    """Loaded datasets and their shared engines, keyed by dataset name."""

    def __init__(self, shard_count: int | None = None):
        self.shard_count = shard_count
        self._datasets: dict[str, BinnedDataset] = {}
        self._engines: dict[str, Engine] = {}

    def add(self, dataset: BinnedDataset) -> None:
        self._datasets[dataset.name] = dataset

    def load_dir(self, data_dir: str | Path) -> None:
        data_dir = Path(data_dir)
        if (data_dir / "manifest.json").exists():
            self.add(load_dataset(data_dir))
            return
        found = False
        for sub in sorted(data_dir.iterdir()):
            if sub.is_dir() and (sub / "manifest.json").exists():
                self.add(load_dataset(sub))
                found = True
        if not found:
            raise ManifestError(f"no datasets under {data_dir}")

    def names(self) -> list[str]:
        return sorted(self._datasets)

    def dataset(self, name: str) -> BinnedDataset:
        if name not in self._datasets:
            raise KeyError(name)
        return self._datasets[name]

    def engine(self, name: str) -> Engine:
        if name not in self._engines:
            self._engines[name] = Engine(self.dataset(name),
                                         shard_count=self.shard_count)
        return self._engines[name]


class SessionService:
    """Translates actions into queries and plans; emits frames in seq order."""

    def __init__(self, registry: DatasetRegistry):
        self.registry = registry

    # -- frames ---------------------------------------------------------------

    def _frame_metrics(self, session: Session, dname: str,
                       hist: Histogram) -> MetricReport:
        dim = session.dataset.dims[dname]
        values = [y for _, y in hist.cells]
        total = sum(values)
        _, plot_entropy = entropy(values, total)
        counts = [
            len(refine_cells(ref, dim)) if ref.level != BASE else 1
            for ref, _ in hist.cells
        ]
        plot_igp, _ = igp(values, counts, total)
        report = MetricReport(plot_entropy=plot_entropy, plot_igp=plot_igp)
        refinable = [ref for ref, _ in hist.cells if ref.level != BASE]
        if refinable:
            kids = {ref: refine_cells(ref, dim) for ref in refinable}
            flat = [c for cs in kids.values() for c in cs]
            child_vals = dict(zip(flat, session.engine.cell_values(
                dname, flat, session.predicates, session.measure)))
            lookup = dict(hist.cells)
            splits = [
                BinSplit((ref, lookup[ref]),
                         tuple((c, child_vals[c]) for c in kids[ref]), total)
                for ref in refinable
            ]
            report.plot_ad = plot_average_deviance(splits)
            before = sum(bin_entropy(lookup[ref], total) for ref in refinable)
            after = sum(bin_entropy(v, total)
                        for s in splits for v in s.sub_values)
            report.plot_rec = None if before == 0 else (after - before) / before
        return report

    def _plot_frame(self, session: Session, dname: str, kind: str) -> dict:
        t0 = time.perf_counter()
        hist = session.engine.multi_query(
            session.predicates, {dname: session.frontiers[dname]},
            session.measure)[dname]
        dim = session.dataset.dims[dname]
        cells = []
        for ref, y in hist.cells:
            x0, x1 = bin_range(ref, dim)
            cells.append({
                "level": _level_json(ref.level), "bin": ref.index,
                "x0": x0, "x1": x1, "y": y,
            })
        metrics = self._frame_metrics(session, dname, hist)
        frame = {
            "seq": session.next_seq(),
            "kind": kind,
            "dim": dname,
            "cells": cells,
            "metrics": {
                "plot_ad": metrics.plot_ad,
                "plot_entropy": metrics.plot_entropy,
                "plot_rec": metrics.plot_rec,
                "plot_igp": metrics.plot_igp,
            },
            "elapsed_ms": (time.perf_counter() - t0) * 1000,
        }
        if kind == "snapshot":
            session.last_snapshot[dname] = frame
        return frame

    def _control_frame(self, session: Session, kind: str,
                       error: str | None = None) -> dict:
        frame = {
            "seq": session.next_seq(),
            "kind": kind,
            "dim": None,
            "cells": [],
            "metrics": {"plot_ad": None, "plot_entropy": None,
                        "plot_rec": None, "plot_igp": None},
            "elapsed_ms": 0.0,
        }
        if error is not None:
            frame["error"] = error
        return frame

    # -- session lifecycle ----------------------------------------------------

    def create_session(self, dataset_name: str) -> tuple[Session, list[dict]]:
        dataset = self.registry.dataset(dataset_name)
        engine = self.registry.engine(dataset_name)
        session = Session(
            id=uuid.uuid4().hex,
            dataset=dataset,
            engine=engine,
            measure=dataset.measures[0].name,
        )
        for name, dim in dataset.dims.items():
            session.frontiers[name] = level0_frontier(dim)
        frames = [self._plot_frame(session, d, "snapshot")
                  for d in dataset.dims]
        return session, frames

    def replay_snapshots(self, session: Session) -> list[dict]:
        """Fresh copies of the last snapshot per plot, re-stamped in seq order."""
        frames = []
        for dname in session.dataset.dims:
            cached = session.last_snapshot.get(dname)
            if cached is None:
                continue
            frame = dict(cached)
            frame["seq"] = session.next_seq()
            frames.append(frame)
            session.last_snapshot[dname] = frame
        return frames

    # -- actions ----------------------------------------------------------------

    def apply_action(self, session: Session, action: dict,
                     should_cancel: Callable[[], bool] | None = None,
                     ) -> Iterator[dict]:
        session.last_active = time.monotonic()
        should_cancel = should_cancel or (lambda: False)
        try:
            kind = action.get("action")
            if kind == "filter":
                yield from self._do_filter(session, action)
            elif kind == "refine_bin":
                yield from self._do_refine_bin(session, action)
            elif kind == "gro":
                yield from self._do_gro(session, action, should_cancel)
            elif kind == "refine_max":
                yield from self._run_plan_action(
                    session, action, should_cancel,
                    lambda dname: refine_to_max(
                        session.frontiers[dname], session.dataset.dims[dname]))
            elif kind == "run_base":
                yield from self._run_plan_action(
                    session, action, should_cancel,
                    lambda dname: run_highest(
                        session.frontiers[dname], session.dataset.dims[dname]))
            elif kind == "refine_interesting":
                yield from self._run_plan_action(
                    session, action, should_cancel,
                    lambda dname: refine_until_uninteresting(
                        session.frontiers[dname], self._source(session, dname)))
            elif kind == "reset":
                yield from self._do_reset(session)
            elif kind == "stop":
                yield self._control_frame(session, "done")
            else:
                yield self._control_frame(session, "error",
                                          f"unknown action {kind!r}")
        except RefineryError as exc:
            yield self._control_frame(session, "error", str(exc))
        except (KeyError, TypeError, ValueError) as exc:
            yield self._control_frame(session, "error", f"malformed action: {exc}")

    def _source(self, session: Session, dname: str) -> EnginePlotSource:
        return EnginePlotSource(session.engine, dname, session.predicates,
                                session.measure)

    def _do_filter(self, session: Session, action: dict) -> Iterator[dict]:
        dname = action["dim"]
        if dname not in session.dataset.dims:
            raise QueryError(f"unknown dimension {dname!r}")
        rng = action.get("range")
        if rng is None:
            session.predicates.pop(dname, None)
        else:
            pred = Predicate(dname, int(rng["lo"]), int(rng["hi"]),
                             _level_from_json(rng["level"]))
            validate_predicate(pred, session.dataset.dims[dname])
            session.predicates[dname] = pred
        for d in session.dataset.dims:
            yield self._plot_frame(session, d, "snapshot")

    def _do_refine_bin(self, session: Session, action: dict) -> Iterator[dict]:
        dname = action["dim"]
        dim = session.dataset.dims[dname]
        level = _level_from_json(action["level"])
        if level == BASE:
            raise QueryError("cannot refine past the non-binned data")
        cell = make_ref(dim, level, int(action["bin"]))
        if cell not in session.frontiers[dname].cells:
            raise QueryError(f"{dname}: bin {cell.index} at level {level} "
                             "is not displayed")
        session.frontiers[dname] = replace_cell(
            session.frontiers[dname], cell, refine_cells(cell, dim), dim)
        yield self._plot_frame(session, dname, "refine")

    def _do_reset(self, session: Session) -> Iterator[dict]:
        session.predicates.clear()
        for name, dim in session.dataset.dims.items():
            session.frontiers[name] = level0_frontier(dim)
        for d in session.dataset.dims:
            yield self._plot_frame(session, d, "snapshot")

    def _parse_knobs(self, raw: dict | None) -> RefinementKnobs:
        raw = raw or {}
        max_ref = raw.get("max_ref", BASE)
        return RefinementKnobs(
            min_ref=int(raw.get("min_ref", 0) or 0),
            max_ref=BASE if max_ref in (None, BASE) else int(max_ref),
            min_nr=int(raw.get("min_nr", 0) or 0),
            max_nr=None if raw.get("max_nr") is None else int(raw["max_nr"]),
            min_ad=float(raw.get("min_ad", 0.0) or 0.0),
            max_rec=None if raw.get("max_rec") is None else float(raw["max_rec"]),
        )

    def _do_gro(self, session: Session, action: dict,
                should_cancel: Callable[[], bool]) -> Iterator[dict]:
        knobs = self._parse_knobs(action.get("knobs"))
        scope = action.get("scope", "all")
        restrict: BinRef | None = None
        if scope in (None, "all", "all-plots"):
            dims = list(session.dataset.dims)
        elif isinstance(scope, dict) and "dim" in scope:
            dname = scope["dim"]
            if dname not in session.dataset.dims:
                raise QueryError(f"unknown dimension {dname!r}")
            dims = [dname]
            if "bin" in scope:
                restrict = make_ref(session.dataset.dims[dname],
                                    _level_from_json(scope.get("level", 0)),
                                    int(scope["bin"]))
        else:
            raise QueryError(f"bad scope {scope!r}")
        plans = {
            dname: gro_plan(session.frontiers[dname], knobs,
                            self._source(session, dname), restrict_to=restrict)
            for dname in dims
        }
        yield from self._execute_plans(session, plans, should_cancel)

    def _run_plan_action(self, session: Session, action: dict,
                         should_cancel: Callable[[], bool],
                         builder: Callable[[str], RefinementPlan]) -> Iterator[dict]:
        dname = action["dim"]
        if dname not in session.dataset.dims:
            raise QueryError(f"unknown dimension {dname!r}")
        yield from self._execute_plans(session, {dname: builder(dname)},
                                       should_cancel)

    def _execute_plans(self, session: Session, plans: dict[str, RefinementPlan],
                       should_cancel: Callable[[], bool]) -> Iterator[dict]:
        """One frame per round per affected plot; cancellable between rounds."""
        total_rounds = max((len(p.frontiers) for p in plans.values()), default=0)
        for r in range(total_rounds):
            if should_cancel():
                yield self._control_frame(session, "done")
                return
            for dname, plan in plans.items():
                if r < len(plan.frontiers):
                    session.frontiers[dname] = plan.frontiers[r]
                    yield self._plot_frame(session, dname, "refine")
        yield self._control_frame(session, "done")


class SessionRunner:
    """Per-session action queue: coalescing, supersede-on-filter, cancellation."""

    def __init__(self, service: SessionService, session: Session):
        self.service = service
        self.session = session
        self.inbox: deque[dict] = deque()

    def submit(self, action: dict) -> None:
        self.inbox.append(action)

    def _has_superseding(self) -> bool:
        return any(a.get("action") in SUPERSEDING_ACTIONS for a in self.inbox)

    def stream_frames(self) -> Iterator[dict]:
        while self.inbox:
            action = self.inbox.popleft()
            if action.get("action") == "filter":
                later = any(
                    a.get("action") == "filter" and a.get("dim") == action.get("dim")
                    for a in self.inbox
                )
                if later:
                    continue  # last writer wins per dimension
            cancelled = False

            def should_cancel() -> bool:
                nonlocal cancelled
                if self._has_superseding():
                    cancelled = True
                    return True
                return False

            yield from self.service.apply_action(self.session, action, should_cancel)
            if cancelled and self.inbox and self.inbox[0].get("action") == "stop":
                self.inbox.popleft()  # the stop did its job by cancelling


# ---------------------------------------------------------------------------
# HTTP layer


def create_app(registry: DatasetRegistry, debounce_ms: float = 50.0,
               session_timeout_s: float = 600.0, ui_dir: str | Path | None = None):
    app = FastAPI(title="refinery")
    service = SessionService(registry)
    runners: dict[str, SessionRunner] = {}
    initial_frames: dict[str, list[dict]] = {}

    app.state.registry = registry
    app.state.service = service
    app.state.runners = runners

    def _sweep() -> None:
        now = time.monotonic()
        stale = [
            sid for sid, r in runners.items()
            if now - r.session.last_active > session_timeout_s
        ]
        for sid in stale:
            runners.pop(sid, None)
            initial_frames.pop(sid, None)

    @app.get("/datasets")
    def list_datasets():
        return [
            registry.dataset(name).manifest.to_json() for name in registry.names()
        ]

    @app.post("/sessions")
    def create_session(body: dict):
        _sweep()
        name = body.get("dataset")
        try:
            session, frames = service.create_session(name)
        except KeyError:
            raise HTTPException(status_code=404, detail=f"unknown dataset {name!r}")
        runners[session.id] = SessionRunner(service, session)
        initial_frames[session.id] = frames
        return {"session_id": session.id}

    @app.websocket("/sessions/{session_id}/stream")
    async def stream(ws: WebSocket, session_id: str):
        runner = runners.get(session_id)
        if runner is None:
            await ws.close(code=4404)
            return
        await ws.accept()
        runner.session.last_active = time.monotonic()
        pending = initial_frames.pop(session_id, None)
        if pending is None:
            pending = service.replay_snapshots(runner.session)
        for frame in pending:
            await ws.send_text(json.dumps(frame))

        queue_event = asyncio.Event()
        closed = False

        async def reader():
            nonlocal closed
            try:
                while True:
                    text = await ws.receive_text()
                    try:
                        action = json.loads(text)
                    except json.JSONDecodeError:
                        action = {"action": "__malformed__"}
                    runner.submit(action)
                    queue_event.set()
            except WebSocketDisconnect:
                closed = True
                queue_event.set()

        reader_task = asyncio.create_task(reader())
        try:
            while not closed:
                await queue_event.wait()
                queue_event.clear()
                if closed:
                    break
                if debounce_ms and runner.inbox and \
                        runner.inbox[-1].get("action") == "filter":
                    await asyncio.sleep(debounce_ms / 1000.0)
                for frame in runner.stream_frames():
                    await ws.send_text(json.dumps(frame))
                    await asyncio.sleep(0)  # let the reader see cancellations
        finally:
            reader_task.cancel()

    if ui_dir and Path(ui_dir).is_dir():
        from fastapi.staticfiles import StaticFiles

        app.mount("/ui", StaticFiles(directory=str(ui_dir), html=True), name="ui")

    return app


def startup_probe(registry: DatasetRegistry, budget_ms: float = 100.0) -> dict[str, float]:
    """Time one full level-0 multi-plot query per dataset; warn when over budget."""
    import logging

    log = logging.getLogger("refinery.server")
    results = {}
    for name in registry.names():
        dataset = registry.dataset(name)
        engine = registry.engine(name)
        frontiers = {
            d.name: level0_frontier(d) for d in dataset.manifest.dims
        }
        t0 = time.perf_counter()
        engine.multi_query({}, frontiers)
        elapsed = (time.perf_counter() - t0) * 1000
        results[name] = elapsed
        if elapsed > budget_ms:
            log.warning(
                "dataset %s: level-0 multi-plot query took %.1f ms "
                "(budget %.0f ms); consider fewer level-0 bins", name, elapsed,
                budget_ms,
            )
    return results
