import numpy as np
import pytest

from refinery.binner import compute_hierarchy, materialize_all, dataset_from_tables
from refinery.core import (
    BASE,
    Frontier,
    MeasureSpec,
    Predicate,
    children,
    level0_frontier,
    make_ref,
    replace_cell,
)
from refinery.engine import (
    Engine,
    PartialHistogram,
    QueryRequest,
    build_shards,
    merge_partials,
    shard_query,
)
from refinery.errors import QueryError

from conftest import build_dataset, make_dims, oracle_histogram, random_raw


@pytest.fixture(scope="module")
def dataset():
    dims = make_dims(3, atomic_cells=64)
    measures = (
        MeasureSpec("n", "count"),
        MeasureSpec("s", "sum", "d1"),
        MeasureSpec("lo", "min", "d2"),
        MeasureSpec("hi", "max", "d2"),
        MeasureSpec("m", "avg", "d1"),
    )
    raw = random_raw(dims, 10_000, seed=21, measures=measures)
    h = compute_hierarchy(dims)
    tables = materialize_all(raw, h)
    return raw, dataset_from_tables("t", tables, h, measures)


@pytest.fixture(scope="module")
def engine(dataset):
    _, binned = dataset
    return Engine(binned, shard_count=4, parallel_min_depth=2)


class TestShards:
    def test_even_split(self, dataset):
        _, binned = dataset
        table = binned.tables[0]
        rows = table.row_count
        if rows % 2:
            pytest.skip("table size not even, exercise below covers it")
        ss = build_shards(table, 2, binned.dims)
        assert [w.n for w in ss.workers] == [rows - rows // 2, rows // 2]

    def test_ten_rows_two_shards(self, dataset):
        _, binned = dataset
        table = binned.tables[0]
        trimmed = type(table)(
            table.level, table.dims,
            {d: a[:10] for d, a in table.indices.items()},
            {c: a[:10] for c, a in table.components.items()},
        )
        ss = build_shards(trimmed, 2, binned.dims)
        assert [w.n for w in ss.workers] == [5, 5]

    def test_single_shard_is_identity(self, dataset):
        _, binned = dataset
        table = binned.tables[1]
        ss = build_shards(table, 1, binned.dims)
        assert ss.workers[0].n == table.row_count
        for d, arr in table.indices.items():
            assert np.array_equal(ss.workers[0].idx[d], arr)

    def test_union_is_table_as_multiset(self, dataset):
        _, binned = dataset
        table = binned.tables[0]
        for count in (1, 3, 7):
            ss = build_shards(table, count, binned.dims)
            rebuilt = {
                d: np.concatenate([w.idx[d] for w in ss.workers])
                for d in table.indices
            }
            for d, arr in table.indices.items():
                assert sorted(arr.tolist()) == sorted(rebuilt[d].tolist())

    def test_bad_shard_count(self, dataset):
        _, binned = dataset
        with pytest.raises(QueryError):
            build_shards(binned.tables[0], 0, binned.dims)


class TestShardQuery:
    def test_empty_predicates_give_shard_totals(self, dataset):
        raw, binned = dataset
        ss = build_shards(binned.tables[0], 3, binned.dims)
        mspec = binned.measure("n")
        dim = binned.dims["d0"]
        totals = np.zeros(dim.bin_count(0), dtype=np.int64)
        for worker in ss.workers:
            part = shard_query(worker, {}, "d0", 0, 1, dim.bin_count(0), mspec,
                               exclude_group=True)
            totals += part.comps["n"]
        expected = oracle_histogram(raw, "d0", 0, {}, mspec)
        assert {i: int(c) for i, c in enumerate(totals) if c} == expected

    def test_zero_selectivity_gives_empty_partial(self):
        # d1 kept in the lower half, so its top level-2 bin holds nothing
        dims = make_dims(2, atomic_cells=64)
        raw = random_raw(dims, 400, seed=8)
        raw.columns["d1"] = raw.columns["d1"] % 32.0
        h = compute_hierarchy(dims)
        binned = dataset_from_tables("zero", materialize_all(raw, h), h,
                                     raw.measures)
        ss = build_shards(binned.tables[2], 2, binned.dims)
        mspec = binned.measure("n")
        nbins = binned.dims["d0"].bin_count(2)
        part = shard_query(ss.workers[0], {"d1": (15, 16)}, "d0", 2, 1,
                           nbins, mspec, exclude_group=True)
        assert part.occupancy.sum() == 0

    def test_incremental_filter_state_matches_fresh_worker(self, dataset):
        _, binned = dataset
        mspec = binned.measure("n")
        dim = binned.dims["d0"]
        nbins = dim.bin_count(1)
        stateful = build_shards(binned.tables[1], 1, binned.dims).workers[0]
        sequences = [{"d1": (0, 4)}, {"d1": (2, 6)}, {"d1": (2, 6), "d2": (1, 3)},
                     {"d2": (1, 3)}, {}]
        for ranges in sequences:
            got = shard_query(stateful, ranges, "d0", 1, 1, nbins, mspec, True)
            fresh = build_shards(binned.tables[1], 1, binned.dims).workers[0]
            want = shard_query(fresh, ranges, "d0", 1, 1, nbins, mspec, True)
            assert np.array_equal(got.comps["n"], want.comps["n"])


class TestMerge:
    def make_partial(self, counts):
        dense = np.zeros(4, dtype=np.int64)
        occ = np.zeros(4, dtype=np.int64)
        for idx, c in counts.items():
            dense[idx] = c
            occ[idx] = 1 if c else 0
        return PartialHistogram("d0", 0, "n", 4, occ, {"n": dense}, {"n": "sum"})

    def test_counts_add(self):
        merged = merge_partials([self.make_partial({0: 3}), self.make_partial({0: 5})])
        assert merged.comps["n"][0] == 8

    def test_empty_partial_is_identity(self):
        a = self.make_partial({1: 4, 2: 9})
        merged = merge_partials([a, self.make_partial({})])
        assert np.array_equal(merged.comps["n"], a.comps["n"])

    def test_permutation_invariant(self):
        import itertools
        parts = [self.make_partial({0: 1, 2: 5}), self.make_partial({1: 2}),
                 self.make_partial({0: 7, 3: 3})]
        reference = merge_partials(parts)
        for perm in itertools.permutations(parts):
            merged = merge_partials(list(perm))
            assert np.array_equal(merged.comps["n"], reference.comps["n"])

    def test_shape_mismatch(self):
        a = self.make_partial({0: 1})
        b = PartialHistogram("d1", 0, "n", 4, a.occupancy.copy(), dict(a.comps),
                             dict(a.ops))
        with pytest.raises(QueryError):
            merge_partials([a, b])


class TestQuery:
    def test_empty_predicates_gives_totals(self, dataset, engine):
        raw, _ = dataset
        hist = engine.query(QueryRequest(0, (), "d0", 0, "n"))
        expected = oracle_histogram(raw, "d0", 0, {}, MeasureSpec("n", "count"))
        assert hist.as_dict() == expected
        assert hist.total == raw.row_count

    def test_zero_selectivity_predicate(self):
        # all rows live in the lower half of d1, so its top level-2 bin is empty
        dims = make_dims(2, atomic_cells=64)
        raw = random_raw(dims, 500, seed=55)
        raw.columns["d1"] = raw.columns["d1"] % 32.0
        h = compute_hierarchy(dims)
        binned = dataset_from_tables("z", materialize_all(raw, h), h, raw.measures)
        eng = Engine(binned, shard_count=2)
        pred = Predicate("d1", 15, 16, 2)
        hist = eng.query(QueryRequest(2, (pred,), "d0", 2, "n"))
        eng.close()
        assert hist.cells == ()

    @pytest.mark.parametrize("measure", ["n", "s", "lo", "hi", "m"])
    def test_matches_nested_loop_oracle(self, dataset, engine, measure):
        raw, binned = dataset
        rng = np.random.default_rng(33)
        mspec = binned.measure(measure)
        levels = [0, 1, 2, BASE]
        for _ in range(8):
            preds = {}
            max_pred_depth = 0
            for d in raw.dims:
                if rng.random() < 0.5:
                    plevel = int(rng.integers(0, 3))
                    n = d.bin_count(plevel)
                    lo = int(rng.integers(0, n - 1))
                    hi = int(rng.integers(lo + 1, n + 1))
                    preds[d.name] = Predicate(d.name, lo, hi, plevel)
                    max_pred_depth = max(max_pred_depth, plevel)
            level = levels[int(rng.integers(max_pred_depth, len(levels)))]
            gdepth = int(rng.integers(0, (3 if level == BASE else level) + 1))
            glevel: object = BASE if gdepth == 3 else gdepth
            hist = engine.query(QueryRequest(level, tuple(preds.values()), "d0",
                                             glevel, measure))
            expected = oracle_histogram(raw, "d0", glevel, preds, mspec)
            got = hist.as_dict()
            assert set(got) == set(expected)
            for k, v in expected.items():
                if mspec.kind in ("count", "sum", "min", "max"):
                    assert got[k] == v
                else:
                    assert got[k] == pytest.approx(v, rel=1e-12)

    def test_parallel_equals_serial_bit_exact(self, dataset):
        _, binned = dataset
        preds = (Predicate("d1", 1, 3, 0),)
        results = []
        for shards in (1, 2, 4, 8):
            eng = Engine(binned, shard_count=shards, parallel_min_depth=0)
            hist = eng.query(QueryRequest(2, preds, "d0", 2, "n"))
            results.append(hist)
            eng.close()
        for other in results[1:]:
            assert other.cells == results[0].cells
            assert other.total == results[0].total

    def test_rollup_matches_direct_coarser_query(self, dataset, engine):
        preds = (Predicate("d2", 0, 2, 0),)
        fine = engine.query(QueryRequest(2, preds, "d0", 2, "n"))
        coarse = engine.query(QueryRequest(1, preds, "d0", 1, "n"))
        rolled: dict[int, int] = {}
        for ref, y in fine.cells:
            rolled[ref.index // 2] = rolled.get(ref.index // 2, 0) + y
        assert rolled == coarse.as_dict()

    def test_group_finer_than_table_rejected(self, engine):
        with pytest.raises(QueryError):
            engine.query(QueryRequest(0, (), "d0", 2, "n"))

    def test_unknown_dim_rejected(self, engine):
        with pytest.raises(QueryError):
            engine.query(QueryRequest(0, (), "nope", 0, "n"))
        with pytest.raises(QueryError):
            engine.query(QueryRequest(0, (Predicate("nope", 0, 1, 0),), "d0", 0, "n"))

    def test_elapsed_recorded(self, engine):
        engine.query_log.clear()
        engine.query(QueryRequest(0, (), "d0", 0, "n"))
        assert engine.query_log and engine.query_log[-1]["ms"] >= 0


class TestMultiQuery:
    def test_level0_marginals_no_predicates(self, dataset, engine):
        raw, binned = dataset
        frontiers = {d.name: level0_frontier(d) for d in raw.dims}
        out = engine.multi_query({}, frontiers)
        for d in raw.dims:
            expected = oracle_histogram(raw, d.name, 0, {}, binned.measure("n"))
            hist = out[d.name]
            assert len(hist.cells) == d.level0_bins
            for ref, y in hist.cells:
                assert y == expected.get(ref.index, 0)

    def test_mixed_frontier_one_value_per_cell(self, dataset, engine):
        raw, _ = dataset
        d0 = raw.dims[0]
        f = level0_frontier(d0)
        f = replace_cell(f, make_ref(d0, 0, 1),
                         children(make_ref(d0, 0, 1), d0), d0)
        out = engine.multi_query({}, {"d0": f})
        assert len(out["d0"].cells) == len(f.cells)

    def test_mixed_frontier_matches_base_aggregation(self, dataset, engine):
        raw, binned = dataset
        d0 = raw.dims[0]
        f = level0_frontier(d0)
        f = replace_cell(f, make_ref(d0, 0, 2),
                         children(make_ref(d0, 0, 2), d0), d0)
        preds = {"d1": Predicate("d1", 0, 3, 1)}
        out = engine.multi_query(preds, {"d0": f})
        base = oracle_histogram(raw, "d0", BASE, preds, binned.measure("n"))
        from refinery.core import atomic_span
        for ref, y in out["d0"].cells:
            lo, hi = atomic_span(ref, d0)
            assert y == sum(base.get(i, 0) for i in range(lo, hi))

    def test_crossfilter_own_histogram_unchanged(self, dataset, engine):
        raw, _ = dataset
        frontiers = {d.name: level0_frontier(d) for d in raw.dims}
        before = engine.multi_query({}, frontiers)
        preds = {"d0": Predicate("d0", 0, 1, 0)}
        after = engine.multi_query(preds, frontiers)
        assert after["d0"].cells == before["d0"].cells
        assert after["d1"].cells != before["d1"].cells

    def test_rollup_commutes_with_aligned_filter(self, dataset, engine):
        preds = (Predicate("d1", 1, 2, 0),)
        fine = engine.query(QueryRequest(2, preds, "d0", 1, "n"))
        coarse = engine.query(QueryRequest(1, preds, "d0", 1, "n"))
        assert fine.as_dict() == coarse.as_dict()
