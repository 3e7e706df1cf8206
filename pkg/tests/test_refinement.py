"""Planner tests driven by a deterministic in-memory value source.

The fixture dimension has 4 level-0 bins over 16 atomic cells (levels 0..2,
then BASE) and carries the worked-example data: level-0 values {10,20,30,40}
splitting at level 1 into {4,6}, {10,10}, {10,20}, {15,25}.
"""
import math
from dataclasses import dataclass

import numpy as np
import pytest

from refinery.core import (
    BASE,
    BinRef,
    DimensionSpec,
    Frontier,
    atomic_span,
    level0_frontier,
    make_ref,
    validate_frontier,
)
from refinery.errors import QueryError
from refinery.refinement import (
    RefinementKnobs,
    average_ranks,
    gro_plan,
    rank_results,
    refine_to_max,
    refine_until_uninteresting,
    run_highest,
    select_top,
)

# atomic profile whose level-1 sums give the worked-example splits
EXAMPLE_ATOMIC = [2, 2, 3, 3, 5, 5, 5, 5, 5, 5, 10, 10, 7.5, 7.5, 12.5, 12.5]


def example_dim() -> DimensionSpec:
    return DimensionSpec("x", 0.0, 16.0, 1.0, level0_bins=4, max_level=2)


@dataclass
class ArraySource:
    """PlotSource over a fixed atomic-cell profile; any cell sums its span."""

    dim_spec: DimensionSpec
    atomic: np.ndarray

    def values(self, cells):
        out = []
        for c in cells:
            lo, hi = atomic_span(c, self.dim_spec)
            out.append(float(self.atomic[lo:hi].sum()))
        return out


@pytest.fixture
def source() -> ArraySource:
    return ArraySource(example_dim(), np.asarray(EXAMPLE_ATOMIC, dtype=float))


PAPER_ADS = [0.2, 0.0, 0.33, 0.25]
PAPER_IGPS = [2.0, 2.86, 3.82, 5.03]


class TestRanking:
    def test_average_ranks_with_ties(self):
        assert average_ranks([3.0, 1.0, 3.0, 0.5]) == [3.5, 2.0, 3.5, 1.0]

    def test_paper_example_order(self):
        dim = example_dim()
        cells = [make_ref(dim, 0, i) for i in range(4)]
        ranked = rank_results(cells, PAPER_ADS, PAPER_IGPS, dim)
        assert [c.index for c in ranked] == [0, 2, 1, 3]

    def test_all_equal_falls_back_to_index_order(self):
        dim = example_dim()
        cells = [make_ref(dim, 0, i) for i in (2, 0, 3, 1)]
        ranked = rank_results(cells, [0.1] * 4, [1.0] * 4, dim)
        assert [c.index for c in ranked] == [0, 1, 2, 3]

    def test_output_is_permutation(self):
        dim = example_dim()
        rng = np.random.default_rng(1)
        cells = [make_ref(dim, 1, i) for i in range(8)]
        ranked = rank_results(cells, list(rng.random(8)),
                              list(rng.random(8)), dim)
        assert sorted(ranked, key=lambda c: c.index) == cells

    def test_infinite_and_missing_igp_rank_last(self):
        dim = example_dim()
        cells = [make_ref(dim, 0, i) for i in range(3)]
        ranked = rank_results(cells, [0.0, 0.0, 0.0], [math.inf, 1.0, None], dim)
        assert [c.index for c in ranked] == [1, 0, 2]


class TestSelectTop:
    def test_budget_limits_refined_cells(self):
        dim = example_dim()
        ranked = [make_ref(dim, 0, i) for i in (0, 2, 1, 3)]
        chosen = select_top(ranked, 6, dim)
        assert [c.index for c in chosen] == [0, 2, 1]

    def test_budget_covers_everything(self):
        dim = example_dim()
        ranked = [make_ref(dim, 0, i) for i in range(4)]
        assert select_top(ranked, 8, dim) == ranked

    def test_zero_budget_refines_nothing(self):
        dim = example_dim()
        ranked = [make_ref(dim, 0, i) for i in range(4)]
        assert select_top(ranked, 0, dim) == []


class TestGroPlan:
    def test_min_ref_with_max_nr_selects_top(self, source):
        dim = source.dim_spec
        plan = gro_plan(level0_frontier(dim), RefinementKnobs(min_ref=1, max_nr=6),
                        source)
        assert plan.stop_reason == "max_nr"
        assert len(plan.rounds) == 1
        refined = {e.cell.index for e in plan.rounds[0]}
        assert refined == {0, 1, 2}  # top-ranked parents under the example data
        final = plan.final_frontier
        level1 = [c for c in final.cells if c.level == 1]
        assert len(level1) == 6
        assert len(final.cells) == 7
        validate_frontier(final, dim)

    def test_all_defaults_refine_to_base(self, source):
        dim = source.dim_spec
        plan = gro_plan(level0_frontier(dim), RefinementKnobs(), source)
        assert len(plan.rounds) == dim.max_level + 1
        assert all(c.level == BASE for c in plan.final_frontier.cells)
        assert plan.stop_reason == "max_ref"

    def test_min_ad_threshold_gates_bins(self, source):
        dim = source.dim_spec
        plan = gro_plan(level0_frontier(dim),
                        RefinementKnobs(min_ad=0.3, max_ref=1), source)
        # only the {10,20} bin deviates enough (AD 1/3)
        assert [e.cell.index for e in plan.rounds[0]] == [2]
        assert len(plan.rounds) == 1
        assert plan.stop_reason == "max_ref" or plan.stop_reason == "min_ad"

    def test_every_round_tiles(self, source):
        dim = source.dim_spec
        plan = gro_plan(level0_frontier(dim), RefinementKnobs(max_nr=12), source)
        for frontier in plan.frontiers:
            validate_frontier(frontier, dim)

    def test_monotone_resolution(self, source):
        dim = source.dim_spec
        plan = gro_plan(level0_frontier(dim), RefinementKnobs(), source)
        for before, after in zip((level0_frontier(dim),) + plan.frontiers,
                                 plan.frontiers):
            depth_at = {}
            for c in before.cells:
                lo, hi = atomic_span(c, dim)
                for cell in range(lo, hi):
                    depth_at[cell] = dim.depth(c.level)
            for c in after.cells:
                lo, hi = atomic_span(c, dim)
                for cell in range(lo, hi):
                    assert dim.depth(c.level) >= depth_at[cell]

    def test_determinism(self, source):
        dim = source.dim_spec
        knobs = RefinementKnobs(min_ref=1, max_nr=6, min_ad=0.1)
        a = gro_plan(level0_frontier(dim), knobs, source)
        b = gro_plan(level0_frontier(dim), knobs, source)
        assert a == b

    def test_scaling_invariance(self, source):
        dim = source.dim_spec
        scaled = ArraySource(dim, source.atomic * 37.5)
        knobs = RefinementKnobs(min_ref=1, max_nr=6)
        assert gro_plan(level0_frontier(dim), knobs, source).rounds == \
            gro_plan(level0_frontier(dim), knobs, scaled).rounds

    def test_invalid_knobs(self, source):
        with pytest.raises(QueryError):
            RefinementKnobs(min_nr=5, max_nr=3)
        with pytest.raises(QueryError):
            gro_plan(level0_frontier(source.dim_spec),
                     RefinementKnobs(min_ref=2, max_ref=1), source)


class TestKnobPriority:
    def test_levels_bind_over_counts(self, source):
        # min_nr wants many results, but max_ref stops refinement first
        dim = source.dim_spec
        plan = gro_plan(level0_frontier(dim),
                        RefinementKnobs(max_ref=1, min_nr=1000), source)
        assert all(dim.depth(c.level) <= 1 for c in plan.final_frontier.cells)
        assert len(plan.final_frontier.cells) == 8 < 1000

    def test_counts_bind_over_deviance(self, source):
        # every bin's deviance says refine, but the budget halts the plan
        dim = source.dim_spec
        plan = gro_plan(level0_frontier(dim),
                        RefinementKnobs(min_ad=0.0, max_nr=10), source)
        assert plan.stop_reason == "max_nr"
        assert len(plan.final_frontier.cells) == 8 <= 10

    def test_counts_raise_results_despite_deviance(self, source):
        # min_ad vetoes everything, min_nr forces top-ranked bins one level down
        dim = source.dim_spec
        plan = gro_plan(level0_frontier(dim),
                        RefinementKnobs(min_ad=10.0, min_nr=6), source)
        assert plan.stop_reason == "min_nr"
        assert len(plan.final_frontier.cells) == 6

    def test_deviance_binds_over_entropy_change(self, source):
        # REC gate would allow refinement, the deviance gate vetoes it
        dim = source.dim_spec
        plan = gro_plan(level0_frontier(dim),
                        RefinementKnobs(min_ad=0.5, max_rec=100.0), source)
        assert plan.rounds == ()
        assert plan.stop_reason == "min_ad"

    def test_entropy_change_gates_only_deviance_passers(self, source):
        dim = source.dim_spec
        plan = gro_plan(level0_frontier(dim),
                        RefinementKnobs(min_ad=0.1, max_rec=0.3, max_ref=1), source)
        # bin RECs: {0.29, 0.43, 0.53, 0.72}; ADs: {0.2, 0, 1/3, 0.25}
        # bin0 passes both gates; bin1 fails AD; bins 2,3 pass AD but fail REC
        assert [e.cell.index for e in plan.rounds[0]] == [0]


class TestHandyOperators:
    def test_refine_to_max_round_count(self):
        dims = DimensionSpec("x", 0.0, 512.0, 1.0, level0_bins=16, max_level=4)
        plan = refine_to_max(level0_frontier(dims), dims)
        assert len(plan.rounds) == 5
        assert all(c.level == BASE for c in plan.final_frontier.cells)

    def test_refine_to_max_on_base_frontier_is_empty(self):
        dim = example_dim()
        cells = tuple(make_ref(dim, BASE, i) for i in range(dim.atomic_cells))
        plan = refine_to_max(Frontier("x", cells), dim)
        assert plan.rounds == ()

    def test_refine_to_max_equals_default_gro(self, source):
        dim = source.dim_spec
        assert refine_to_max(level0_frontier(dim), dim) == \
            gro_plan(level0_frontier(dim), RefinementKnobs(), source)

    def test_run_highest_single_round(self, source):
        dim = source.dim_spec
        plan = run_highest(level0_frontier(dim), dim)
        assert len(plan.rounds) == 1
        assert all(c.level == BASE for c in plan.final_frontier.cells)

    def test_run_highest_matches_refine_to_max_final_frame(self, source):
        dim = source.dim_spec
        jump = run_highest(level0_frontier(dim), dim)
        gradual = refine_to_max(level0_frontier(dim), dim)
        assert jump.final_frontier == gradual.final_frontier

    def test_run_highest_mixed_start(self, source):
        dim = source.dim_spec
        f = Frontier("x", tuple(
            [make_ref(dim, 1, i) for i in range(2)]
            + [make_ref(dim, 0, i) for i in (1, 2, 3)]
        ))
        plan = run_highest(f, dim)
        assert len(plan.rounds) == 1
        assert all(c.level == BASE for c in plan.final_frontier.cells)

    def test_uninteresting_bins_not_refined(self, source):
        dim = source.dim_spec
        plan = refine_until_uninteresting(level0_frontier(dim), source)
        first = {e.cell.index for e in plan.rounds[0]}
        assert first == {0, 2, 3}  # bin 1 splits uniformly (AD 0) and stops

    def test_threshold_is_inclusive(self):
        dim = example_dim()
        # bin 0 splits {6,4}: AD = exactly 0.1... construct: parent 10, subs 6,4
        # AD = (|5-6|/5 + |5-4|/5)/2 = 0.2; need AD 0.1: subs {5.5, 4.5}
        atomic = np.array([2.75, 2.75, 2.25, 2.25] + [1.0] * 12)
        src = ArraySource(dim, atomic)
        plan = refine_until_uninteresting(level0_frontier(dim), src)
        assert 0 in {e.cell.index for e in plan.rounds[0]}


class TestScopedPlans:
    def test_single_bin_scope(self, source):
        dim = source.dim_spec
        target = make_ref(dim, 0, 2)
        plan = gro_plan(level0_frontier(dim), RefinementKnobs(), source,
                        restrict_to=target)
        final = plan.final_frontier
        validate_frontier(final, dim)
        lo, hi = atomic_span(target, dim)
        for c in final.cells:
            clo, chi = atomic_span(c, dim)
            if clo >= lo and chi <= hi:
                assert c.level == BASE
            else:
                assert c.level == 0
