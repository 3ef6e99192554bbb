import math
import unittest
from types import SimpleNamespace

import numpy as np

from fg_explore.algorithms import EstimatorState, update_estimates
from fg_explore.divergence import BernoulliFamily, GaussianFamily, Instance
from fg_explore.environment import INFORMED, Environment
from fg_explore.solver import inverse_time
from fg_explore.stopping import (PRACTICAL, THEORETICAL, StoppingConfig, c_exp, glrt_from_counts, glrt_statistic, h,
                                 h_inverse, h_tilde, should_stop, threshold)
from tests.base import FeedbackGraphBase


class TestThreshold(unittest.TestCase):

    def test_practical_threshold_at_first_round(self):
        self.assertAlmostEqual(math.log(10.0), threshold(StoppingConfig(PRACTICAL, 0.1), 1, 5), places=6)

    def test_practical_threshold(self):
        expected = math.log(1.0 / 0.05) + 3.0 * math.log(1.0 + 2.0 * math.log(100.0))
        self.assertAlmostEqual(expected, threshold(StoppingConfig(PRACTICAL, 0.05), 100, 3))

    def test_theoretical_threshold(self):
        cfg = StoppingConfig(THEORETICAL, 0.1)
        expected = 2.0 * c_exp(math.log(4.0 / 0.1) / 2.0) + 6.0 * math.log(1.0 + math.log(50.0))
        self.assertAlmostEqual(expected, threshold(cfg, 50, 5))
        self.assertGreater(threshold(cfg, 1, 5), threshold(StoppingConfig(PRACTICAL, 0.1), 1, 5))
        self.assertGreater(threshold(cfg, 1000, 5), threshold(cfg, 10, 5))
        self.assertGreater(threshold(StoppingConfig(THEORETICAL, 0.01), 10, 5), threshold(cfg, 10, 5))

    def test_threshold_needs_a_round(self):
        with self.assertRaises(ValueError):
            threshold(StoppingConfig(PRACTICAL, 0.1), 0, 3)

    def test_config_validation(self):
        with self.assertRaises(ValueError):
            StoppingConfig(PRACTICAL, 1.0)
        with self.assertRaises(ValueError):
            StoppingConfig("anytime", 0.1)


class TestExplorationConstant(unittest.TestCase):

    def test_h_inverse_round_trip(self):
        for u in (1.5, 3.0, 10.0):
            self.assertAlmostEqual(u, h_inverse(h(u)), delta=1e-10)

    def test_h_inverse_domain(self):
        self.assertEqual(1.0, h_inverse(1.0))
        with self.assertRaises(ValueError):
            h_inverse(0.5)

    def test_h_tilde_below_the_switch(self):
        self.assertAlmostEqual(1.5 * (1.2 - math.log(math.log(1.5))), h_tilde(1.5, 1.2))

    def test_c_exp_against_its_approximation(self):
        for x in np.linspace(5.0, 50.0, 10):
            value = c_exp(float(x))
            approximation = x + 4.0 * math.log(1.0 + x + math.sqrt(2.0 * x))
            self.assertGreaterEqual(value, x)
            self.assertLessEqual(abs(value - approximation) / value, 0.1)


class TestGlrt(FeedbackGraphBase):

    def test_two_vertex_example(self):
        self.assertAlmostEqual(25.0, glrt_from_counts([100, 100], [1.0, 0.0], GaussianFamily(1.0)))

    def test_tied_top_means(self):
        self.assertEqual(0.0, glrt_from_counts([10, 20, 5], [0.7, 0.7, 0.1], GaussianFamily(1.0)))

    def test_unobserved_vertex(self):
        self.assertEqual(0.0, glrt_from_counts([10, 0], [1.0, math.nan], GaussianFamily(1.0)))

    def test_bernoulli_estimates_on_the_boundary(self):
        statistic = glrt_from_counts([10, 10], [1.0, 0.0], BernoulliFamily())
        self.assertAlmostEqual(20.0 * math.log(2.0), statistic)

    def test_estimator_interface(self):
        est = SimpleNamespace(m_obs=np.array([100, 100]), mu_hat=np.array([1.0, 0.0]), family=GaussianFamily(1.0))
        self.assertAlmostEqual(25.0, glrt_statistic(est))

    def test_equals_scaled_inverse_time_of_the_estimates(self):
        rng = np.random.default_rng(2)
        for trial in range(10):
            instance = self.random_gaussian_instance(rng, int(rng.integers(3, 6)))
            env = Environment(instance, INFORMED, seed=trial)
            est = EstimatorState(instance.k, instance.family)
            while est.t < 300 or not est.fully_observed:
                update_estimates(est, env.step(int(rng.integers(instance.k))), INFORMED)
            estimated = Instance(est.g_hat, instance.family, est.mu_hat, require_unique_best=False)
            expected = est.t * inverse_time(estimated, est.n_pulls / est.t)
            statistic = glrt_statistic(est)
            self.assertAlmostEqual(expected, statistic, delta=1e-9 * max(1.0, statistic))

    def test_no_stop_before_every_vertex_is_observed(self):
        est = EstimatorState(2, GaussianFamily(1.0))
        est.t = 10
        est.m_obs[:] = [10, 0]
        est.reward_sums[:] = [10.0, 0.0]
        stop, statistic, _ = should_stop(est, StoppingConfig(PRACTICAL, 0.1))
        self.assertFalse(stop)
        self.assertEqual(0.0, statistic)
