"""Multi-wave plan tests: structure, floors, fallback, and degenerate cases."""

import numpy as np
import pytest

from auditopt.multiwave import ArrayCohortProvider, multiwave_optimal, wave_sizes
from auditopt.search import GridSchedule
from auditopt.strategies import bcc_star_design, opt_mle_design, tabulate_strata

from helpers import binary_spec, binary_theta, draw_arrays


def make_provider(theta, spec, n_cohort, seed):
    rng = np.random.default_rng(seed)
    ystar, xstar, y, x, z = draw_arrays(theta, spec, n_cohort, rng)
    provider = ArrayCohortProvider(ystar, xstar, y, x, z)
    strata = tabulate_strata(ystar, xstar, z, spec.n_levels)
    return provider, strata


class TestWaveSizes:
    def test_two_wave_split(self):
        assert wave_sizes(200, 2) == [100, 100]
        assert wave_sizes(201, 2) == [100, 101]

    def test_three_wave_split(self):
        assert wave_sizes(200, 3) == [100, 50, 50]
        assert wave_sizes(202, 3) == [101, 50, 51]

    def test_single_wave(self):
        assert wave_sizes(57, 1) == [57]


class TestTwoWave:
    def test_structure_on_seeded_cohort(self):
        spec, theta = binary_spec(), binary_theta()
        provider, strata = make_provider(theta, spec, 2000, seed=21)
        schedule = GridSchedule(m=10)
        plan, fit = multiwave_optimal(provider, spec, strata, 200, waves=2,
                                      schedule=schedule, rng_seed=5)
        # wave (a) is exactly the balanced allocation
        assert plan.waves[0].incremental == bcc_star_design(strata, 100).allocation
        # wave (b) optimizes the total with wave (a) as the floor
        cum = np.asarray(plan.cumulative_allocation())
        assert cum.sum() == 200
        assert np.all(cum <= strata.counts_array())
        assert np.all(np.asarray(plan.waves[1].cumulative)
                      >= np.asarray(plan.waves[0].cumulative))
        assert np.all(np.asarray(plan.waves[1].incremental) >= 0)
        assert fit.converged
        assert not plan.fallback

    def test_cumulative_monotone_three_waves(self):
        spec, theta = binary_spec(), binary_theta()
        provider, strata = make_provider(theta, spec, 3000, seed=29)
        plan, fit = multiwave_optimal(provider, spec, strata, 240, waves=3,
                                      schedule=GridSchedule(m=10), rng_seed=6)
        assert [w.size for w in plan.waves] == [120, 60, 60]
        prev = np.zeros(strata.n_strata, dtype=int)
        for w in plan.waves:
            cum = np.asarray(w.cumulative)
            assert np.all(cum >= prev)
            prev = cum
        assert prev.sum() == 240

    def test_single_wave_with_true_prior_matches_opt_mle(self):
        spec, theta = binary_spec(), binary_theta()
        provider, strata = make_provider(theta, spec, 2000, seed=33)
        schedule = GridSchedule(m=10)
        plan, _ = multiwave_optimal(provider, spec, strata, 200, waves=1,
                                    init="prior", prior=theta,
                                    schedule=schedule, rng_seed=7)
        design, _ = opt_mle_design(theta, spec, strata, 200, schedule)
        assert plan.waves[0].incremental == design.allocation

    def test_wave_records_disjoint_and_counted(self):
        spec, theta = binary_spec(), binary_theta()
        provider, strata = make_provider(theta, spec, 1500, seed=41)
        plan, fit = multiwave_optimal(provider, spec, strata, 150, waves=2,
                                      schedule=GridSchedule(m=5), rng_seed=8)
        # final theta carries the empirical z marginal
        np.testing.assert_allclose(fit.theta_hat.z_marginal.sum(), 1.0, atol=1e-12)

    def test_fallback_on_degenerate_first_wave(self):
        # a cohort whose surrogates equal the truth separates every fit:
        # the plan falls back to balanced sampling, and the final fit's
        # failure surfaces with the executed plan attached
        from auditopt.errors import WaveFitFailed

        spec = binary_spec()
        rng = np.random.default_rng(3)
        n = 1000
        x = (rng.random(n) < 0.3).astype(np.int8)
        y = (rng.random(n) < 0.4).astype(np.int8)
        provider = ArrayCohortProvider(y, x, y, x, np.zeros(n, dtype=int))
        strata = tabulate_strata(y, x, np.zeros(n, dtype=int), 1)
        with pytest.raises(WaveFitFailed) as excinfo:
            multiwave_optimal(provider, spec, strata, 100, waves=2,
                              schedule=GridSchedule(m=5), rng_seed=9)
        plan = excinfo.value.plan
        assert plan.fallback
        assert plan.fallback_reason
        assert plan.waves[1].strategy == "bccstar-fallback"
        assert sum(plan.waves[1].incremental) == 50

    def test_plan_serializes(self):
        spec, theta = binary_spec(), binary_theta()
        provider, strata = make_provider(theta, spec, 1200, seed=55)
        plan, _ = multiwave_optimal(provider, spec, strata, 120, waves=2,
                                    schedule=GridSchedule(m=5), rng_seed=10)
        doc = plan.to_json_dict()
        assert doc["n"] == 120
        assert len(doc["waves"]) == 2
        assert doc["waves"][1]["theta_after"]["beta"] is not None
