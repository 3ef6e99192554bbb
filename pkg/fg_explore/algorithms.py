import math
from dataclasses import dataclass

import numpy as np
import singer

from fg_explore.divergence import bern_kl
from fg_explore.environment import ALGORITHM, INFORMED, Environment, RngStream, check_mode
from fg_explore.errors import UnidentifiableError
from fg_explore.solver import AllocationSolver, SolverConfig, solve_characteristic_time
from fg_explore.stopping import glrt_statistic, should_stop

LOGGER = singer.get_logger()

TAS_FG = "tas-fg"
TAS_FG_HEURISTIC = "tas-fg-heur"
EXP3G = "exp3g"
UCB_FG_E = "ucb-fg-e"
UCB_FG_V = "ucb-fg-v"

AVERAGE = "average"
EXPONENTIAL = "exponential"

DEFAULT_ITERATION_CAP = 10 ** 7
EXP3G_RATE = 0.3
# Exact re-solve every round up to this many vertices, every ceil(sqrt(t)) rounds above.
EVERY_ROUND_MAX_K = 6
GAP_FLOOR = 1e-12


class EstimatorState:
    """
    Counts gathered during one run: N_v pulls, N_{v,u} edge activations,
    M_u observations and the sums of the observed rewards.
    """

    def __init__(self, k, family):
        self.k = k
        self.family = family
        self.t = 0
        self.n_pulls = np.zeros(k, dtype=np.int64)
        self.n_edge = np.zeros((k, k), dtype=np.int64)
        self.m_obs = np.zeros(k, dtype=np.int64)
        self.reward_sums = np.zeros(k)

    @property
    def mu_hat(self):
        """Empirical means; NaN for vertices never observed."""
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(self.m_obs > 0, self.reward_sums / self.m_obs, np.nan)

    @property
    def g_hat(self):
        """N_{v,u} / N_v, with the optimistic value 1 for rows never pulled."""
        g_hat = np.ones((self.k, self.k))
        pulled = self.n_pulls > 0
        g_hat[pulled] = self.n_edge[pulled] / self.n_pulls[pulled, np.newaxis]
        return g_hat

    @property
    def fully_observed(self):
        return bool(np.all(self.m_obs > 0))

    @property
    def a_hat(self):
        mu_hat = self.mu_hat
        if np.all(np.isnan(mu_hat)):
            return 0
        return int(np.nanargmax(mu_hat))

    @property
    def gaps_hat(self):
        mu_hat = self.mu_hat
        best = int(np.argmax(mu_hat))
        gaps = mu_hat[best] - mu_hat
        gaps[best] = np.delete(gaps, best).min()
        return np.maximum(gaps, GAP_FLOOR)


def update_estimates(state, obs, mode):
    check_mode(mode)
    v = obs.chosen
    if mode == INFORMED:
        activated = np.array(sorted(obs.activated), dtype=int)
    else:
        # A continuous reward is exactly zero with probability zero.
        activated = np.flatnonzero(obs.z != 0.0)
    state.t += 1
    state.n_pulls[v] += 1
    if len(activated):
        state.n_edge[v, activated] += 1
        state.m_obs[activated] += 1
        state.reward_sums[activated] += obs.z[activated]
    return state


@dataclass(frozen=True)
class TrackingConfig:
    smoothing: str = AVERAGE
    rate: float = 0.99

    def __post_init__(self):
        if self.smoothing not in (AVERAGE, EXPONENTIAL):
            raise ValueError(f"Unknown smoothing kind: {self.smoothing}")
        if self.smoothing == EXPONENTIAL and not 0.0 < self.rate < 1.0:
            raise ValueError(f"Exponential smoothing rate must lie in (0, 1), got {self.rate}")


class TrackingState:
    """
    Running combination sum_n alpha_{t,n} omega(n) of the allocations folded
    so far: alpha = 1/t for the plain average, kappa_t rate^(t-n) with
    kappa_t = (1 - rate) / (1 - rate^t) for exponential smoothing.
    """

    def __init__(self, k, cfg=None):
        self.k = k
        self.cfg = cfg or TrackingConfig()
        self.omega_sum = np.zeros(k)
        self.folded = 0

    def fold(self, omega):
        if self.cfg.smoothing == EXPONENTIAL:
            self.omega_sum = self.cfg.rate * self.omega_sum + omega
        else:
            self.omega_sum = self.omega_sum + omega
        self.folded += 1

    @property
    def average(self):
        if self.folded == 0:
            return None
        if self.cfg.smoothing == EXPONENTIAL:
            rate = self.cfg.rate
            return self.omega_sum * (1.0 - rate) / (1.0 - rate ** self.folded)
        return self.omega_sum / self.folded


def select_vertex_dtracking(est, trk):
    """
    Averaged D-tracking: pull the least pulled vertex among those below
    sqrt(t) - K/2, else the vertex furthest behind its tracked share.
    """
    t = est.t
    counts = est.n_pulls
    starved = np.flatnonzero(counts < math.sqrt(t) - est.k / 2.0)
    if len(starved):
        return int(starved[np.argmin(counts[starved])])
    target = trk.average
    if target is None:
        return int(np.argmin(counts))
    return int(np.argmin(counts - t * target))


class SamplingRule:
    """Chooses the vertex of the next round from the current estimates."""

    name = None

    def select(self, est):
        raise NotImplementedError

    def update(self, est, obs):
        pass


class TrackAndStop(SamplingRule):

    def __init__(self, k, heuristic=False, solver_cfg=None, tracking_cfg=None):
        self.name = TAS_FG_HEURISTIC if heuristic else TAS_FG
        self.heuristic = heuristic
        self.solver = AllocationSolver(solver_cfg)
        self.tracking = TrackingState(k, tracking_cfg)
        self.omega = None
        self.last_solve = 0

    def _needs_solve(self, t):
        if self.omega is None or self.tracking.k <= EVERY_ROUND_MAX_K:
            return True
        return t - self.last_solve >= math.ceil(math.sqrt(t))

    def allocation(self, est):
        if self.heuristic:
            scores = est.g_hat @ (1.0 / est.gaps_hat ** 2)
            return scores / scores.sum()
        if self._needs_solve(est.t):
            self.omega = self.solver.track(est.g_hat, est.mu_hat, est.family)
            self.last_solve = est.t
        return self.omega

    def select(self, est):
        if not est.fully_observed:
            return int(np.argmin(est.n_pulls))
        self.tracking.fold(self.allocation(est))
        return select_vertex_dtracking(est, self.tracking)


class Exp3G(SamplingRule):
    """
    Exponential weights with uniform exploration, importance weighting each
    observed reward by the probability that the vertex was observed.
    """

    name = EXP3G

    def __init__(self, k, rng, in_neighbors=None, rate=EXP3G_RATE):
        self.k = k
        self.rng = rng
        self.rate = rate
        # None: use the support of the estimated graph.
        self.in_neighbors = in_neighbors
        self.log_q = np.zeros(k)
        self.p = np.full(k, 1.0 / k)

    @property
    def q(self):
        q = np.exp(self.log_q - self.log_q.max())
        return q / q.sum()

    def select(self, est):
        self.p = (1.0 - self.rate) * self.q + self.rate / self.k
        return self.rng.choice(self.k, self.p)

    def _observation_probabilities(self, est):
        if self.in_neighbors is not None:
            return np.array([self.p[list(self.in_neighbors[u])].sum() for u in range(self.k)])
        return (est.g_hat > 0.0).T.astype(float) @ self.p

    def update(self, est, obs):
        observed = np.flatnonzero(obs.z != 0.0)
        if not len(observed):
            return
        probabilities = self._observation_probabilities(est)
        observed = observed[probabilities[observed] > 0.0]
        self.log_q[observed] += self.rate * obs.z[observed] / probabilities[observed]


class UcbFg(SamplingRule):
    """
    Optimistic rule over upper confidence bounds on the means and on the
    edge probabilities. Variant E maximises the expected observed reward,
    variant V the chance of observing the optimistic best vertex.
    """

    def __init__(self, k, variant):
        if variant not in ("E", "V"):
            raise ValueError(f"Unknown UCB-FG variant: {variant}")
        self.k = k
        self.variant = variant
        self.name = UCB_FG_E if variant == "E" else UCB_FG_V

    def _g_ucb(self, est):
        bonus = np.sqrt(math.log(1.0 + est.t) / (2.0 * np.maximum(est.n_pulls, 1)))
        return np.minimum(est.g_hat + bonus[:, np.newaxis], 1.0)

    def select(self, est):
        unvisited = np.flatnonzero(est.n_pulls == 0)
        if len(unvisited):
            return int(unvisited[0])
        g_ucb = self._g_ucb(est)
        unobserved = np.flatnonzero(est.m_obs == 0)
        if len(unobserved):
            return int(np.argmax(g_ucb[:, unobserved[0]]))
        mu_ucb = est.mu_hat + np.sqrt(2.0 * math.log(1.0 + est.t) / est.m_obs)
        if self.variant == "E":
            return int(np.argmax(g_ucb @ mu_ucb))
        return int(np.argmax(g_ucb[:, int(np.argmax(mu_ucb))]))


@dataclass
class RunRecord:
    algorithm: str
    seed: int
    delta: float
    tau: int
    a_hat: int
    correct: bool
    t_star: float
    normalized: float
    threshold_kind: str
    truncated: bool = False
    first_valid_t: int = None
    glrt_at_stop: float = None
    threshold_at_stop: float = None
    glrt_before_stop: float = None
    threshold_before_stop: float = None

    def to_row(self):
        return {"seed": self.seed,
                "algorithm": self.algorithm,
                "delta": self.delta,
                "tau": self.tau,
                "correct": self.correct,
                "a_hat": self.a_hat,
                "t_star": self.t_star,
                "normalized": self.normalized,
                "threshold_kind": self.threshold_kind,
                "truncated": self.truncated}


def normalized_complexity(tau, t_star, delta):
    """tau / (T* kl(delta, 1 - delta))."""
    if not math.isfinite(t_star) or t_star <= 0.0:
        return math.nan
    return tau / (t_star * bern_kl(delta, 1.0 - delta))


def make_rule(algorithm_id, instance, mode, rng, solver_cfg=None, tracking_cfg=None):
    k = instance.k
    if algorithm_id == TAS_FG:
        return TrackAndStop(k, heuristic=False, solver_cfg=solver_cfg, tracking_cfg=tracking_cfg)
    if algorithm_id == TAS_FG_HEURISTIC:
        return TrackAndStop(k, heuristic=True, tracking_cfg=tracking_cfg)
    if algorithm_id == EXP3G:
        in_neighbors = [instance.graph.in_neighbors(u) for u in range(k)] if mode == INFORMED else None
        return Exp3G(k, rng, in_neighbors=in_neighbors)
    if algorithm_id == UCB_FG_E:
        return UcbFg(k, "E")
    if algorithm_id == UCB_FG_V:
        return UcbFg(k, "V")
    raise ValueError(f"Unknown algorithm: {algorithm_id}")


ALGORITHM_IDS = (TAS_FG, TAS_FG_HEURISTIC, EXP3G, UCB_FG_E, UCB_FG_V)


def run_algorithm(algorithm_id, instance, mode, cfg, seed, run_id=0,
                  iteration_cap=DEFAULT_ITERATION_CAP, t_star=None,
                  solver_cfg=None, tracking_cfg=None):
    """
    One fixed-confidence run: sample with the rule, update the estimates and
    stop at the first round where every vertex has been observed and the GLR
    statistic reaches the threshold.
    """
    check_mode(mode)
    if not instance.family.continuous and mode != INFORMED:
        raise UnidentifiableError("Bernoulli rewards need informed feedback to identify the best vertex")
    instance.require_observable()
    if algorithm_id not in ALGORITHM_IDS:
        raise ValueError(f"Unknown algorithm: {algorithm_id}")
    if t_star is None:
        t_star = solve_characteristic_time(instance, solver_cfg or SolverConfig(), informed=mode == INFORMED).t_star

    environment = Environment(instance, mode, seed, run_id)
    rule = make_rule(algorithm_id, instance, mode, RngStream(seed, run_id, ALGORITHM), solver_cfg, tracking_cfg)
    est = EstimatorState(instance.k, instance.family)
    first_valid_t = None
    previous = (None, None)

    for t in range(1, iteration_cap + 1):
        obs = environment.step(rule.select(est))
        update_estimates(est, obs, mode)
        rule.update(est, obs)
        if first_valid_t is None and est.fully_observed:
            first_valid_t = t
        stop, statistic, beta = should_stop(est, cfg)
        if stop:
            a_hat = est.a_hat
            return RunRecord(algorithm=algorithm_id,
                             seed=seed,
                             delta=cfg.delta,
                             tau=t,
                             a_hat=a_hat,
                             correct=a_hat == instance.best_vertex,
                             t_star=t_star,
                             normalized=normalized_complexity(t, t_star, cfg.delta),
                             threshold_kind=cfg.threshold_kind,
                             first_valid_t=first_valid_t,
                             glrt_at_stop=statistic,
                             threshold_at_stop=beta,
                             glrt_before_stop=previous[0],
                             threshold_before_stop=previous[1])
        previous = (statistic, beta)

    LOGGER.warning("Run of %s with seed %s hit the iteration cap of %s", algorithm_id, seed, iteration_cap)
    a_hat = est.a_hat
    return RunRecord(algorithm=algorithm_id,
                     seed=seed,
                     delta=cfg.delta,
                     tau=iteration_cap,
                     a_hat=a_hat,
                     correct=a_hat == instance.best_vertex,
                     t_star=t_star,
                     normalized=normalized_complexity(iteration_cap, t_star, cfg.delta),
                     threshold_kind=cfg.threshold_kind,
                     truncated=True,
                     first_valid_t=first_valid_t,
                     glrt_at_stop=glrt_statistic(est),
                     threshold_at_stop=previous[1])


def run_tas_fg(instance, mode, cfg, seed, allocation_source="exact", run_id=0, **options):
    if allocation_source not in ("exact", "heuristic"):
        raise ValueError(f"Unknown allocation source: {allocation_source}")
    algorithm_id = TAS_FG if allocation_source == "exact" else TAS_FG_HEURISTIC
    return run_algorithm(algorithm_id, instance, mode, cfg, seed, run_id, **options)


def run_exp3g(instance, mode, cfg, seed, run_id=0, **options):
    return run_algorithm(EXP3G, instance, mode, cfg, seed, run_id, **options)


def run_ucb_fg(instance, mode, cfg, seed, variant="E", run_id=0, **options):
    return run_algorithm(UCB_FG_E if variant == "E" else UCB_FG_V, instance, mode, cfg, seed, run_id, **options)
