"""Sampling strategy tests: allocations, determinism, and record draws."""

import numpy as np
import pytest

from auditopt.errors import CapacityExceeded
from auditopt.information import Design
from auditopt.model import StratumTable
from auditopt.search import GridSchedule
from auditopt.strategies import (
    bcc_star_design,
    build_strata_index,
    cc_star_design,
    opt_mle_design,
    sample_records,
    srs_design,
    tabulate_strata,
)

from helpers import binary_spec, binary_theta, four_strata


class TestSrs:
    def test_full_sample_is_census(self):
        strata = four_strata((50, 30, 20, 10))
        d = srs_design(strata, 110, rng_seed=5)
        assert d.allocation == strata.counts

    def test_seed_reproducibility(self):
        strata = four_strata((5297, 1130, 2655, 918))
        assert srs_design(strata, 400, 7).allocation == srs_design(strata, 400, 7).allocation

    def test_mean_allocation_matches_hypergeometric_expectation(self):
        strata = four_strata((5297, 1130, 2655, 918))
        n, draws = 400, 2000
        totals = np.zeros(4)
        for seed in range(draws):
            totals += srs_design(strata, n, seed).allocation
        mean = totals / draws
        counts = strata.counts_array()
        N = counts.sum()
        p = counts / N
        expected = n * p
        var = n * p * (1 - p) * (N - n) / (N - 1)
        se = np.sqrt(var / draws)
        assert np.all(np.abs(mean - expected) <= 3 * se)


class TestCcStar:
    def test_even_split_when_groups_large(self):
        strata = four_strata((500, 500, 500, 500))
        d = cc_star_design(strata, 200, 3)
        by_ystar = {0: 0, 1: 0}
        for (ys, _, _), a in zip(strata.keys, d.allocation):
            by_ystar[ys] += a
        assert by_ystar == {0: 100, 1: 100}

    def test_short_group_overflows_to_other(self):
        strata = four_strata((1000, 1000, 20, 10))  # y*=1 group holds 30
        d = cc_star_design(strata, 200, 3)
        by_ystar = {0: 0, 1: 0}
        for (ys, _, _), a in zip(strata.keys, d.allocation):
            by_ystar[ys] += a
        assert by_ystar == {0: 170, 1: 30}

    def test_seeded_reproducibility(self):
        strata = four_strata((5297, 1130, 2655, 918))
        assert cc_star_design(strata, 400, 11).allocation == cc_star_design(strata, 400, 11).allocation


class TestBccStar:
    def test_vccc_eight_stratum_allocation(self):
        strata = StratumTable.for_z_levels(2, (171, 701, 34, 93, 333, 649, 8, 23))
        assert bcc_star_design(strata, 200).allocation == (28, 28, 28, 29, 28, 28, 8, 23)

    def test_vccc_four_stratum_allocation(self):
        strata = four_strata((504, 1350, 42, 116))
        assert bcc_star_design(strata, 200).allocation == (53, 53, 42, 52)

    def test_equal_strata(self):
        assert bcc_star_design(four_strata((1000,) * 4), 400).allocation == (100,) * 4

    def test_waterfill_overflow(self):
        assert bcc_star_design(four_strata((5, 5, 5, 1000)), 40).allocation == (5, 5, 5, 25)

    def test_permutation_equivariance(self):
        counts = (171, 701, 34, 93, 333, 649, 8, 23)
        strata = StratumTable.for_z_levels(2, counts)
        base = dict(zip(strata.keys, bcc_star_design(strata, 200).allocation))
        perm = [3, 0, 6, 2, 7, 5, 1, 4]
        shuffled = StratumTable(
            keys=tuple(strata.keys[i] for i in perm),
            counts=tuple(counts[i] for i in perm),
        )
        out = dict(zip(shuffled.keys, bcc_star_design(shuffled, 200).allocation))
        assert out == base


class TestOptMle:
    def test_single_populated_stratum_takes_everything(self):
        spec, theta = binary_spec(), binary_theta()
        strata = StratumTable.for_z_levels(1, (50, 0, 0, 0))
        design, trace = opt_mle_design(theta, spec, strata, 20, GridSchedule(m=2))
        assert design.allocation == (20, 0, 0, 0)

    def test_trace_structure_on_large_instance(self):
        spec, theta = binary_spec(), binary_theta()
        strata = four_strata((5297, 1130, 2655, 918))
        design, trace = opt_mle_design(theta, spec, strata, 400, GridSchedule(m=10, steps=(15, 5, 1)))
        assert trace.iterations[0].rows == 2925
        assert len(trace.iterations) == 3
        assert design.n == 400
        assert design.allocation == trace.design.allocation


class TestSampleRecords:
    def _setup(self):
        rng = np.random.default_rng(0)
        ystar = rng.integers(0, 2, size=300)
        xstar = rng.integers(0, 2, size=300)
        z = np.zeros(300, dtype=int)
        index = build_strata_index(ystar, xstar, z)
        strata = tabulate_strata(ystar, xstar, z, 1)
        return index, strata

    def test_full_stratum_draw(self):
        index, strata = self._setup()
        design = Design(allocation=strata.counts, strata=strata)
        picked = sample_records(design, index, rng_seed=1)
        assert picked == set(range(300))

    def test_disjoint_from_already_validated(self):
        index, strata = self._setup()
        already = set(range(0, 300, 3))
        counts = [len(set(v) - already) for v in (index[k] for k in strata.keys)]
        design = Design(allocation=tuple(min(5, c) for c in counts), strata=strata)
        picked = sample_records(design, index, already, rng_seed=2)
        assert picked.isdisjoint(already)

    def test_seeded_reproducibility(self):
        index, strata = self._setup()
        design = Design(allocation=(10, 10, 10, 10), strata=strata)
        assert sample_records(design, index, rng_seed=3) == sample_records(design, index, rng_seed=3)

    def test_capacity_exceeded(self):
        index, strata = self._setup()
        design = Design(allocation=(strata.counts[0], 0, 0, 0), strata=strata)
        already = {index[strata.keys[0]][0]}
        with pytest.raises(CapacityExceeded):
            sample_records(design, index, already, rng_seed=4)
