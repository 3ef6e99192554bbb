import math
import unittest

import numpy as np

from fg_explore.algorithms import (ALGORITHM_IDS, EXPONENTIAL, Exp3G, EstimatorState, RunRecord, TrackAndStop,
                                   TrackingConfig, TrackingState, UcbFg, normalized_complexity, run_algorithm, run_exp3g,
                                   run_tas_fg, run_ucb_fg, select_vertex_dtracking, update_estimates)
from fg_explore.campaign import CSV_COLUMNS
from fg_explore.divergence import BernoulliFamily, GaussianFamily, Instance, bern_kl
from fg_explore.environment import ALGORITHM, INFORMED, UNINFORMED, Environment, Observation, RngStream
from fg_explore.errors import UnidentifiableError
from fg_explore.graphs import generate_graph
from fg_explore.solver import SolverConfig
from fg_explore.stopping import PRACTICAL, StoppingConfig
from tests.base import FeedbackGraphBase

QUICK_SOLVER = SolverConfig(max_iterations=2000, warm_iterations=20)


def observation(chosen, z, activated=None):
    return Observation(chosen=chosen, z=np.array(z, dtype=float), activated=activated)


class TestEstimates(unittest.TestCase):

    def test_edge_probability_is_a_count_ratio(self):
        est = EstimatorState(2, GaussianFamily(1.0))
        update_estimates(est, observation(0, [0.0, 0.4], frozenset({1})), INFORMED)
        for _ in range(3):
            update_estimates(est, observation(0, [0.0, 0.0], frozenset()), INFORMED)
        self.assertAlmostEqual(0.25, est.g_hat[0, 1])
        self.assertEqual(4, est.t)

    def test_unpulled_rows_are_optimistic(self):
        est = EstimatorState(3, GaussianFamily(1.0))
        np.testing.assert_array_equal(np.ones((3, 3)), est.g_hat)
        self.assertTrue(np.all(np.isnan(est.mu_hat)))
        self.assertEqual(0, est.a_hat)

    def test_uninformed_zero_is_not_an_observation(self):
        est = EstimatorState(2, GaussianFamily(1.0))
        update_estimates(est, observation(0, [0.0, 1.5]), UNINFORMED)
        np.testing.assert_array_equal([0, 1], est.m_obs)
        self.assertAlmostEqual(1.5, est.mu_hat[1])
        self.assertTrue(math.isnan(est.mu_hat[0]))

    def test_informed_zero_reward_is_an_observation(self):
        est = EstimatorState(2, GaussianFamily(1.0))
        update_estimates(est, observation(1, [0.0, 0.0], frozenset({0})), INFORMED)
        np.testing.assert_array_equal([1, 0], est.m_obs)
        np.testing.assert_array_equal([0.0, 0.0], est.reward_sums)

    def test_count_invariants(self):
        instance = Instance(generate_graph("ring", 5, {"p": 0.3}), GaussianFamily(1.0), np.linspace(0.0, 1.0, 5))
        for mode in (INFORMED, UNINFORMED):
            env = Environment(instance, mode, seed=1)
            est = EstimatorState(5, instance.family)
            for t in range(400):
                update_estimates(est, env.step(t % 5), mode)
            self.assertEqual(est.t, est.n_pulls.sum())
            np.testing.assert_array_equal(est.n_edge.sum(axis=0), est.m_obs)
            np.testing.assert_allclose([0.3, 0.7], [est.g_hat[0, 1], est.g_hat[0, 4]], atol=0.2)


class TestTracking(unittest.TestCase):

    def test_first_round_picks_the_first_vertex(self):
        est = EstimatorState(4, GaussianFamily(1.0))
        self.assertEqual(0, select_vertex_dtracking(est, TrackingState(4)))

    def test_symmetric_tie(self):
        est = EstimatorState(3, GaussianFamily(1.0))
        est.n_pulls[:] = 10
        est.t = 30
        trk = TrackingState(3)
        trk.fold(np.full(3, 1.0 / 3.0))
        self.assertEqual(0, select_vertex_dtracking(est, trk))

    def test_starved_vertex_is_pulled(self):
        est = EstimatorState(3, GaussianFamily(1.0))
        est.n_pulls[:] = [50, 48, 2]
        est.t = 100
        trk = TrackingState(3)
        trk.fold(np.array([0.5, 0.5, 0.0]))
        self.assertEqual(2, select_vertex_dtracking(est, trk))

    def track_fixed_allocation(self, omega, rounds, cfg=None):
        k = len(omega)
        est = EstimatorState(k, GaussianFamily(1.0))
        trk = TrackingState(k, cfg)
        for _ in range(rounds):
            trk.fold(omega)
            v = select_vertex_dtracking(est, trk)
            est.n_pulls[v] += 1
            est.t += 1
            self.assertGreaterEqual(est.n_pulls.min(), math.sqrt(est.t) - k / 2.0 - 1.0)
        return est

    def test_tracks_a_fixed_allocation(self):
        omega = np.array([0.5, 0.3, 0.1, 0.07, 0.03])
        est = self.track_fixed_allocation(omega, 10000)
        self.assertLessEqual(np.abs(est.n_pulls / est.t - omega).max(), 0.05)

    def test_exponential_smoothing_of_a_fixed_allocation(self):
        omega = np.array([0.6, 0.2, 0.2])
        est = self.track_fixed_allocation(omega, 5000, TrackingConfig(EXPONENTIAL, 0.9))
        self.assertLessEqual(np.abs(est.n_pulls / est.t - omega).max(), 0.05)

    def test_smoothing_weights_sum_to_one(self):
        trk = TrackingState(2, TrackingConfig(EXPONENTIAL, 0.5))
        trk.fold(np.array([1.0, 0.0]))
        trk.fold(np.array([0.0, 1.0]))
        np.testing.assert_allclose([1.0 / 3.0, 2.0 / 3.0], trk.average)
        average = TrackingState(2)
        self.assertIsNone(average.average)
        average.fold(np.array([1.0, 0.0]))
        average.fold(np.array([0.0, 1.0]))
        np.testing.assert_allclose([0.5, 0.5], average.average)

    def test_invalid_smoothing(self):
        with self.assertRaises(ValueError):
            TrackingConfig("median")
        with self.assertRaises(ValueError):
            TrackingConfig(EXPONENTIAL, 1.0)


class TestTrackingOnAFlatOptimum(FeedbackGraphBase):
    """Optimal allocations of the symmetric triple form the segment (x, 0, 1 - x)."""

    @staticmethod
    def distance_to_segment(w):
        x = min(max((w[0] - w[2] + 1.0) / 2.0, 0.0), 1.0)
        return float(np.abs(w - np.array([x, 0.0, 1.0 - x])).max())

    def test_pull_frequencies_approach_the_segment(self):
        instance = self.symmetric_triple_instance()
        for seed in (0, 1):
            env = Environment(instance, INFORMED, seed=seed)
            est = EstimatorState(3, instance.family)
            rule = TrackAndStop(3)
            for _ in range(10000):
                obs = env.step(rule.select(est))
                update_estimates(est, obs, INFORMED)
                rule.update(est, obs)
            self.assertLess(self.distance_to_segment(est.n_pulls / est.t), 0.05)


class TestExp3G(unittest.TestCase):

    def test_zero_observation_keeps_weights(self):
        rule = Exp3G(3, RngStream(0, purpose=ALGORITHM), in_neighbors=[frozenset({0, 1, 2})] * 3)
        est = EstimatorState(3, GaussianFamily(1.0))
        rule.select(est)
        before = rule.q.copy()
        rule.update(est, observation(0, [0.0, 0.0, 0.0]))
        np.testing.assert_array_equal(before, rule.q)

    def test_exploration_floor(self):
        rule = Exp3G(4, RngStream(1, purpose=ALGORITHM), in_neighbors=[frozenset({0, 1, 2, 3})] * 4)
        est = EstimatorState(4, GaussianFamily(1.0))
        for _ in range(50):
            v = rule.select(est)
            self.assertTrue(np.all(rule.p >= 0.3 / 4 - 1e-12))
            z = np.zeros(4)
            z[v] = 5.0
            rule.update(est, observation(v, z))
        self.assertGreater(rule.q.max(), 0.25)

    def test_importance_weight(self):
        rule = Exp3G(2, RngStream(2, purpose=ALGORITHM), in_neighbors=[frozenset({0}), frozenset({0, 1})])
        est = EstimatorState(2, GaussianFamily(1.0))
        rule.select(est)
        rule.update(est, observation(0, [0.0, 1.0]))
        self.assertAlmostEqual(0.3 * 1.0 / 1.0, rule.log_q[1])


class TestUcbFg(unittest.TestCase):

    def test_unvisited_vertices_first(self):
        est = EstimatorState(3, GaussianFamily(1.0))
        self.assertEqual(0, UcbFg(3, "E").select(est))
        est.n_pulls[:] = [1, 0, 1]
        self.assertEqual(1, UcbFg(3, "V").select(est))

    def test_unobserved_vertex_is_sought(self):
        est = EstimatorState(3, GaussianFamily(1.0))
        est.t = 5
        est.n_pulls[:] = [3, 1, 1]
        est.n_edge[:] = [[3, 0, 0], [0, 1, 0], [0, 1, 0]]
        est.m_obs[:] = [3, 2, 0]
        est.reward_sums[:] = [1.5, 1.0, 0.0]
        self.assertEqual(1, UcbFg(3, "E").select(est))

    def test_confidence_bounds_are_clamped(self):
        est = EstimatorState(2, GaussianFamily(1.0))
        est.t = 2
        est.n_pulls[:] = 1
        est.n_edge[:] = [[1, 1], [0, 1]]
        est.m_obs[:] = [1, 2]
        rule = UcbFg(2, "E")
        g_ucb = rule._g_ucb(est)
        self.assertTrue(np.all(g_ucb <= 1.0))
        self.assertGreater(g_ucb[1, 0], 0.0)

    def test_invalid_variant(self):
        with self.assertRaises(ValueError):
            UcbFg(3, "X")


class TestRunner(FeedbackGraphBase):

    def assert_stopping_contract(self, record):
        self.assertFalse(record.truncated)
        self.assertGreaterEqual(record.glrt_at_stop, record.threshold_at_stop)
        self.assertGreaterEqual(record.tau, record.first_valid_t)
        if record.tau > record.first_valid_t:
            self.assertLess(record.glrt_before_stop, record.threshold_before_stop)

    def test_every_algorithm_stops(self):
        instance = self.gaussian_instance("full_feedback", 3, [1.0, 0.2, 0.0])
        cfg = StoppingConfig(PRACTICAL, 0.1)
        for algorithm_id in ALGORITHM_IDS:
            record = run_algorithm(algorithm_id, instance, INFORMED, cfg, seed=3, solver_cfg=QUICK_SOLVER)
            self.assert_stopping_contract(record)
            self.assertEqual(algorithm_id, record.algorithm)
            self.assertAlmostEqual(record.tau / (record.t_star * bern_kl(0.1, 0.9)), record.normalized)

    def test_wrappers(self):
        instance = self.gaussian_instance("ring", 4, np.linspace(0.0, 1.0, 4))
        cfg = StoppingConfig(PRACTICAL, 0.1)
        options = {"solver_cfg": QUICK_SOLVER, "t_star": 10.0}
        self.assert_stopping_contract(run_tas_fg(instance, UNINFORMED, cfg, 1, "heuristic", **options))
        self.assert_stopping_contract(run_exp3g(instance, UNINFORMED, cfg, 1, **options))
        self.assert_stopping_contract(run_ucb_fg(instance, UNINFORMED, cfg, 1, "V", **options))
        with self.assertRaises(ValueError):
            run_tas_fg(instance, UNINFORMED, cfg, 1, "oracle", **options)

    def test_same_seed_same_record(self):
        instance = self.loopy_star_instance()
        cfg = StoppingConfig(PRACTICAL, 0.1)
        first = run_algorithm("exp3g", instance, INFORMED, cfg, seed=9, t_star=20.0)
        second = run_algorithm("exp3g", instance, INFORMED, cfg, seed=9, t_star=20.0)
        self.assertEqual(first, second)

    def test_truncation(self):
        instance = self.loopy_star_instance()
        record = run_algorithm("tas-fg-heur", instance, INFORMED, StoppingConfig(PRACTICAL, 0.1), seed=0,
                               iteration_cap=5, t_star=20.0)
        self.assertTrue(record.truncated)
        self.assertEqual(5, record.tau)

    def test_bernoulli_needs_informed_feedback(self):
        instance = Instance(generate_graph("full_feedback", 2), BernoulliFamily(), [0.7, 0.3])
        with self.assertRaises(UnidentifiableError):
            run_algorithm("tas-fg", instance, UNINFORMED, StoppingConfig(PRACTICAL, 0.1), seed=0)
        record = run_algorithm("tas-fg-heur", instance, INFORMED, StoppingConfig(PRACTICAL, 0.1), seed=0,
                               solver_cfg=QUICK_SOLVER)
        self.assert_stopping_contract(record)

    def test_unknown_algorithm(self):
        instance = self.gaussian_instance("bandit", 2, [1.0, 0.0])
        with self.assertRaises(ValueError):
            run_algorithm("thompson", instance, INFORMED, StoppingConfig(PRACTICAL, 0.1), seed=0, t_star=8.0)

    def test_record_row_matches_the_csv_header(self):
        record = RunRecord("tas-fg", 1, 0.1, 10, 0, True, 8.0, normalized_complexity(10, 8.0, 0.1), PRACTICAL)
        self.assertEqual(CSV_COLUMNS, list(record.to_row()))
        self.assertTrue(math.isnan(normalized_complexity(10, math.inf, 0.1)))
