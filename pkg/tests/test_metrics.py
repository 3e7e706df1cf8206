"""Metric checks against the hand-worked 4-bin example plus property tests.

The running example: bins y = {10, 20, 30, 40} splitting into sub-bins
{4,6}, {10,10}, {10,20}, {15,25}, with 100 atomic cells per bin.
"""
import math

import numpy as np
import pytest

from refinery.core import BinRef
from refinery.metrics import (
    BinSplit,
    anomalous_fraction,
    average_deviance,
    bin_entropy,
    bin_rec,
    entropy,
    igp,
    mei,
    plot_average_deviance,
    plot_rec,
    result_error,
    sparsity,
)

BINS = [10.0, 20.0, 30.0, 40.0]
SUBS = [(4.0, 6.0), (10.0, 10.0), (10.0, 20.0), (15.0, 25.0)]
TOTAL = 100.0


def example_splits() -> list[BinSplit]:
    out = []
    for i, (y, subs) in enumerate(zip(BINS, SUBS)):
        parent = (BinRef("x", 0, i), y)
        children = tuple(
            (BinRef("x", 1, 2 * i + j), s) for j, s in enumerate(subs)
        )
        out.append(BinSplit(parent, children, TOTAL))
    return out


class TestAverageDeviance:
    def test_first_bin(self):
        assert average_deviance(example_splits()[0]) == pytest.approx(0.2, abs=1e-12)

    def test_uniform_split_is_zero(self):
        assert average_deviance(example_splits()[1]) == 0.0

    def test_all_bins(self):
        ads = [average_deviance(s) for s in example_splits()]
        assert ads == pytest.approx([0.2, 0.0, 1 / 3, 0.25], abs=0.01)

    def test_plot_level(self):
        assert plot_average_deviance(example_splits()) == pytest.approx(0.19, abs=0.01)

    def test_empty_parent(self):
        split = BinSplit((BinRef("x", 0, 0), 0.0),
                         ((BinRef("x", 1, 0), 0.0), (BinRef("x", 1, 1), 0.0)), 10.0)
        assert average_deviance(split) == 0.0


class TestEntropy:
    def test_example_bins(self):
        per_bin, plot = entropy(BINS, TOTAL)
        assert per_bin == pytest.approx([0.33, 0.46, 0.52, 0.52], abs=0.01)
        assert plot == pytest.approx(1.83, abs=0.05)

    def test_single_bin_all_mass(self):
        _, plot = entropy([42.0], 42.0)
        assert plot == 0.0

    def test_uniform_is_log2_k(self):
        for k in (2, 4, 8, 16):
            _, plot = entropy([1.0] * k)
            assert plot == pytest.approx(math.log2(k), rel=1e-12)

    def test_bin_entropy_bounded(self):
        peak = math.log2(math.e) / math.e
        for p in np.linspace(0, 1, 1001):
            assert 0.0 <= bin_entropy(p, 1.0) <= peak + 1e-12

    def test_refined_plot_entropy(self):
        refined = [y for subs in SUBS for y in subs]
        _, plot = entropy(refined, TOTAL)
        assert plot == pytest.approx(2.78, abs=0.05)


class TestRec:
    def test_plot_level(self):
        assert plot_rec(example_splits()) == pytest.approx(0.52, abs=0.05)

    def test_bin_level(self):
        recs = [bin_rec(s) for s in example_splits()]
        assert recs == pytest.approx([0.27, 0.43, 0.52, 0.75], abs=0.05)

    def test_trivial_splits_change_nothing(self):
        splits = [
            BinSplit((BinRef("x", 0, i), y),
                     ((BinRef("x", 1, 2 * i), y), (BinRef("x", 1, 2 * i + 1), 0.0)),
                     TOTAL)
            for i, y in enumerate(BINS)
        ]
        assert plot_rec(splits) == pytest.approx(0.0, abs=1e-12)

    def test_zero_entropy_flagged(self):
        split = BinSplit((BinRef("x", 0, 0), 0.0),
                         ((BinRef("x", 1, 0), 0.0), (BinRef("x", 1, 1), 0.0)), 10.0)
        assert bin_rec(split) is None
        assert plot_rec([split]) is None


class TestMei:
    def test_example(self):
        assert mei(BINS, [100] * 4) == pytest.approx(6.64, abs=0.01)

    def test_single_subbin_gains_nothing(self):
        assert mei(BINS, [1] * 4) == 0.0

    def test_rejects_empty_splits(self):
        with pytest.raises(ValueError):
            mei(BINS, [100, 100, 0, 100])

    def test_bounds_refined_entropy_on_random_splits(self):
        rng = np.random.default_rng(11)
        for _ in range(300):
            k = int(rng.integers(2, 6))
            values = rng.integers(1, 50, k).astype(float)
            counts = [int(rng.integers(2, 8)) for _ in range(k)]
            total = float(values.sum())
            _, before = entropy(values, total)
            refined = []
            for y, n in zip(values, counts):
                shares = rng.dirichlet(np.ones(n)) * y
                refined.extend(shares)
            _, after = entropy(refined, total)
            bound = mei(values, counts, total)
            assert after - before <= bound + 1e-9 * max(1.0, bound)


class TestIgp:
    def test_plot_level(self):
        plot, _ = igp(BINS, [100] * 4)
        assert plot == pytest.approx(3.63, abs=0.05)

    def test_bin_level(self):
        _, bins = igp(BINS, [100] * 4)
        assert bins == pytest.approx([2.01, 2.89, 3.83, 5.11], abs=0.1)

    def test_equal_probability_equal_igp(self):
        _, bins = igp([5.0, 5.0], [64, 64])
        assert bins[0] == bins[1]

    def test_full_mass_bin_is_infinite(self):
        _, bins = igp([7.0], [16])
        assert bins == [math.inf]

    def test_empty_bins_excluded(self):
        plot, bins = igp([0.0, 10.0, 0.0], [4, 4, 4], plot_total=20.0)
        assert bins[0] is None and bins[2] is None
        assert bins[1] is not None


class TestResultError:
    def test_matches_deviance_arithmetic(self):
        assert result_error(10.0, [4.0, 6.0]) == pytest.approx(0.2, abs=1e-12)

    def test_uniform_cells_zero(self):
        assert result_error(12.0, [3.0, 3.0, 3.0, 3.0]) == 0.0

    def test_zero_estimate_flagged(self):
        assert result_error(0.0, [1.0, 2.0]) is None

    def test_coincides_with_average_deviance(self):
        rng = np.random.default_rng(5)
        for _ in range(100):
            subs = rng.integers(0, 20, 2).astype(float)
            y = float(subs.sum())
            split = BinSplit((BinRef("x", 0, 0), y),
                             ((BinRef("x", 1, 0), subs[0]),
                              (BinRef("x", 1, 1), subs[1])), 100.0)
            re = result_error(y, list(subs))
            ad = average_deviance(split)
            if y == 0:
                assert re is None and ad == 0.0
            else:
                assert re == pytest.approx(ad, rel=1e-12)


class TestAnomalousFraction:
    def test_step_histogram(self):
        # the literal all-neighbors rule: both the 20 (between two 10s) and the
        # trailing 10 (single neighbor 20, 100% off) qualify
        assert anomalous_fraction([10, 10, 20, 10]) == pytest.approx(0.5)

    def test_interior_spike_only(self):
        assert anomalous_fraction([10, 10, 20, 10, 10]) == pytest.approx(0.2)

    def test_constant(self):
        assert anomalous_fraction([5, 5, 5, 5]) == 0.0

    def test_alternating_is_fully_anomalous(self):
        assert anomalous_fraction([1, 100] * 5) == 1.0

    def test_zero_cell_rules(self):
        # zero flanked by non-zeros is anomalous; zero next to zero is not
        assert anomalous_fraction([5, 5, 0, 5, 5]) == pytest.approx(1 / 5)
        assert anomalous_fraction([5, 5, 0, 0, 5, 5]) == pytest.approx(0.0)

    def test_too_few_cells(self):
        assert anomalous_fraction([1.0]) is None


class TestSparsity:
    def test_full_table(self):
        assert sparsity(16, [4, 4]) == 1.0

    def test_single_row(self):
        assert sparsity(1, [4, 4]) == pytest.approx(1 / 16)


class TestEntropyMonotonicity:
    def test_random_splits_never_decrease(self):
        rng = np.random.default_rng(23)
        for _ in range(500):
            k = int(rng.integers(1, 6))
            values = rng.integers(0, 50, k).astype(float)
            total = float(values.sum()) or 1.0
            _, before = entropy(values, total)
            refined = []
            for y in values:
                n = int(rng.integers(2, 6))
                refined.extend(rng.multinomial(int(y), np.ones(n) / n).astype(float))
            _, after = entropy(refined, total)
            assert after >= before - 1e-9 * max(1.0, before)

    def test_uniform_split_attains_mei(self):
        values = [6.0, 18.0, 12.0]
        counts = [3, 2, 4]
        total = sum(values)
        _, before = entropy(values, total)
        refined = [y / n for y, n in zip(values, counts) for _ in range(n)]
        _, after = entropy(refined, total)
        assert after - before == pytest.approx(mei(values, counts, total), rel=1e-12)
