import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np
import singer

from fg_explore.divergence import BernoulliFamily, GaussianFamily, Instance, bern_kl
from fg_explore.errors import UnidentifiableError
from fg_explore.graphs import classify_observability, generate_graph, graph_quantities

LOGGER = singer.get_logger()

ALLOCATION_TOLERANCE = 1e-9
# Warm-started mirror ascent keeps this much uniform mass so that no vertex
# is frozen at zero weight by the multiplicative update.
WARM_START_MIXING = 1e-3


@dataclass(frozen=True)
class SolverConfig:
    max_iterations: int = 50000
    restarts: int = 3
    step_scale: float = 1.0
    window: int = 1000
    convergence_tolerance: float = 1e-10
    warm_iterations: int = 200
    # Iteration index a warm re-solve starts from; sets its step size.
    warm_offset: int = 1000
    gap_warning: float = 1e-2


@dataclass
class SolverResult:
    t_star: float
    omega_star: np.ndarray
    per_alt_values: np.ndarray
    iterations: int
    gap_estimate: float
    best_vertex: int
    flat_pairs: list = field(default_factory=list)
    observation_norm: float = 0.0
    heuristic_distance: float = 0.0

    def to_dict(self):
        return {"t_star": self.t_star if math.isfinite(self.t_star) else None,
                "omega_star": self.omega_star.tolist(),
                "per_alt_values": self.per_alt_values.tolist(),
                "iterations": self.iterations,
                "gap_estimate": self.gap_estimate,
                "best_vertex": self.best_vertex,
                "flat_pairs": [list(pair) for pair in self.flat_pairs],
                "observation_norm": self.observation_norm,
                "heuristic_distance": self.heuristic_distance}


@dataclass(frozen=True)
class ConfusingModel:
    instance: Instance
    target: int
    divergence: float


def check_allocation(omega, k):
    omega = np.asarray(omega, dtype=float)
    if omega.shape != (k,):
        raise ValueError(f"Allocation must have {k} entries, got shape {omega.shape}")
    if np.any(omega < -ALLOCATION_TOLERANCE) or abs(omega.sum() - 1.0) > ALLOCATION_TOLERANCE:
        raise ValueError(f"Allocation must be a probability vector, got {omega.tolist()}")
    return np.clip(omega, 0.0, None)


def observation_rate(weights, omega):
    """m = G^T omega: the rate at which each vertex is observed."""
    return np.asarray(weights).T @ omega


class _Objective:
    """
    The information rate of an allocation, split per alternative u != a*:
    (m_u + m_a*) I_alpha(nu_a*, nu_u) with alpha = m_a* / (m_u + m_a*).

    Works on raw weights and means so the algorithms can evaluate estimated
    models that need not be observable or have a unique best vertex.
    """

    def __init__(self, weights, means, family):
        self.weights = np.asarray(weights, dtype=float)
        self.means = np.asarray(means, dtype=float)
        self.family = family
        self.k = self.means.shape[0]
        if self.k < 2:
            raise ValueError("The characteristic time needs at least two vertices")
        self.best = int(np.argmax(self.means))
        self.alternatives = np.array([u for u in range(self.k) if u != self.best])
        self._gaussian = isinstance(family, GaussianFamily)
        if self._gaussian:
            gaps = self.means[self.best] - self.means[self.alternatives]
            self._scale = gaps ** 2 / (2.0 * family.variance)

    def values(self, omega):
        m = self.weights.T @ omega
        m_best = m[self.best]
        m_alt = m[self.alternatives]
        total = m_best + m_alt
        if self._gaussian:
            with np.errstate(divide="ignore", invalid="ignore"):
                harmonic = np.where((m_alt > 0.0) & (m_best > 0.0), m_best * m_alt / total, 0.0)
            return harmonic * self._scale, m
        values = np.zeros(len(self.alternatives))
        mu_best = self.means[self.best]
        for i, u in enumerate(self.alternatives):
            if m_best > 0.0 and m_alt[i] > 0.0:
                values[i] = total[i] * self.family.gjs(mu_best, self.means[u], m_best / total[i])
        return values, m

    def supergradient(self, m, values):
        # The minimiser of m_a* KL(mu_a*, x) + m_u KL(mu_u, x) is the mixture
        # mean, so the partial derivatives are the two KLs evaluated there.
        u = int(self.alternatives[int(np.argmin(values))])
        m_best, m_u = m[self.best], m[u]
        total = m_best + m_u
        alpha = m_best / total if total > 0.0 else 0.5
        mu_best, mu_u = self.means[self.best], self.means[u]
        middle = self.family.mixture_mean(mu_best, mu_u, alpha)
        grad_m = np.zeros(self.k)
        grad_m[self.best] = self.family.kl(mu_best, middle)
        grad_m[u] = self.family.kl(mu_u, middle)
        return self.weights @ grad_m


def _mirror_ascent(objective, start, iterations, cfg, first_iteration=1):
    """
    Entropic mirror ascent on the simplex with step step_scale / sqrt(n),
    normalised by the sup-norm of the supergradient. Keeps the best iterate
    and also tries the average of the last window of iterates.

    Returns (omega, value, iterations run, relative spread of the last window).
    """
    omega = np.asarray(start, dtype=float)
    log_weights = np.log(omega)
    history = deque(maxlen=cfg.window)
    recent = deque(maxlen=cfg.window)
    best_value, best_omega = -np.inf, omega
    spread = np.inf
    run = 0
    for n in range(first_iteration, first_iteration + iterations):
        values, m = objective.values(omega)
        value = float(values.min())
        run += 1
        history.append(value)
        recent.append(omega)
        if value > best_value:
            best_value, best_omega = value, omega
        if run % cfg.window == 0:
            top = max(history)
            spread = (top - min(history)) / top if top > 0.0 else 0.0
            if spread < cfg.convergence_tolerance:
                break
        direction = objective.supergradient(m, values)
        scale = float(np.abs(direction).max())
        if scale <= 0.0:
            spread = 0.0
            break
        log_weights = log_weights + cfg.step_scale / (math.sqrt(n) * scale) * direction
        log_weights -= log_weights.max()
        omega = np.exp(log_weights)
        omega /= omega.sum()

    averaged = np.mean(recent, axis=0)
    averaged_value = float(objective.values(averaged)[0].min())
    if averaged_value > best_value:
        best_value, best_omega = averaged_value, averaged
    if not math.isfinite(spread):
        top = max(history)
        spread = (top - min(history)) / top if top > 0.0 else 0.0
    return best_omega, best_value, run, spread


def _heuristic_weights(weights, gaps):
    inverse_square = 1.0 / gaps ** 2
    scores = np.asarray(weights) @ inverse_square
    return scores / scores.sum()


def _positive(omega):
    k = omega.shape[0]
    return (1.0 - WARM_START_MIXING) * omega + WARM_START_MIXING / k


def _starting_points(objective, gaps):
    k = objective.k
    uniform = np.full(k, 1.0 / k)
    starts = [uniform]
    if np.all(gaps > 0.0):
        starts.append(_positive(_heuristic_weights(objective.weights, gaps)))
    best_mix = 0.5 * uniform
    best_mix[objective.best] += 0.5
    starts.append(best_mix)
    return starts


def _flat_pairs(objective, omega, value, tolerance):
    """Pairs (i, j) along which moving half of omega_i to j keeps the optimum."""
    pairs = []
    if value <= 0.0:
        return pairs
    for i in range(objective.k):
        if omega[i] <= 1e-6:
            continue
        for j in range(objective.k):
            if j == i:
                continue
            moved = omega.copy()
            shift = omega[i] / 2.0
            moved[i] -= shift
            moved[j] += shift
            if abs(float(objective.values(moved)[0].min()) - value) <= tolerance * value:
                pairs.append((i, j))
    return pairs


class AllocationSolver:
    """
    Solves sup over the simplex of the information rate. Holds the last
    allocation it produced so the algorithms can warm-start re-solves on
    updated estimates.
    """

    def __init__(self, cfg=None):
        self.cfg = cfg or SolverConfig()
        self.last_omega = None

    def solve(self, instance, informed=False):
        if not instance.family.continuous and not informed:
            raise UnidentifiableError("Bernoulli rewards without revealed activations have zero information rate")
        instance.require_observable()
        LOGGER.info("Solving characteristic time for %r", instance)
        objective = _Objective(instance.graph.weights, instance.means, instance.family)
        gaps = instance.gaps
        best = None
        total_iterations = 0
        for start in _starting_points(objective, gaps)[:max(self.cfg.restarts, 1)]:
            omega, value, run, spread = _mirror_ascent(objective, start, self.cfg.max_iterations, self.cfg)
            total_iterations += run
            if best is None or value > best[1]:
                best = (omega, value, spread)
        if np.all(gaps > 0.0):
            heuristic = _heuristic_weights(objective.weights, gaps)
            heuristic_value = float(objective.values(heuristic)[0].min())
            if heuristic_value > best[1]:
                best = (heuristic, heuristic_value, best[2])

        omega, value, spread = best
        values = objective.values(omega)[0]
        t_star = 1.0 / value if value > 0.0 else math.inf
        if spread > self.cfg.gap_warning:
            LOGGER.warning("Solver objective still oscillates by %.3g relative after %s iterations", spread, total_iterations)
        self.last_omega = omega
        result = SolverResult(t_star=t_star,
                              omega_star=omega,
                              per_alt_values=values,
                              iterations=total_iterations,
                              gap_estimate=float(spread),
                              best_vertex=objective.best,
                              flat_pairs=_flat_pairs(objective, omega, value, max(spread, 1e-9)),
                              observation_norm=float(np.linalg.norm(observation_rate(instance.graph.weights, omega))))
        if instance.min_gap > 0.0:
            result.heuristic_distance = float(np.abs(omega - heuristic_allocation(instance)).sum())
        return result

    def track(self, weights, means, family, warm_start=None, iterations=None):
        """
        Short re-solve on an estimated model, started from warm_start (or the
        last allocation this solver produced); returns omega.
        """
        objective = _Objective(weights, means, family)
        k = objective.k
        if warm_start is None:
            warm_start = self.last_omega
        start = np.full(k, 1.0 / k) if warm_start is None else _positive(np.asarray(warm_start, dtype=float))
        omega, _, _, _ = _mirror_ascent(objective, start,
                                        iterations or self.cfg.warm_iterations,
                                        self.cfg,
                                        first_iteration=self.cfg.warm_offset)
        self.last_omega = omega
        return omega


def per_alternative_values(instance, omega):
    instance.require_observable()
    omega = check_allocation(omega, instance.k)
    return _Objective(instance.graph.weights, instance.means, instance.family).values(omega)[0]


def inverse_time(instance, omega):
    """T(omega; nu)^-1, zero when a* or some alternative is never observed."""
    return float(per_alternative_values(instance, omega).min())


def characteristic_time(instance, omega):
    value = inverse_time(instance, omega)
    return 1.0 / value if value > 0.0 else math.inf


def solve_characteristic_time(instance, cfg=None, informed=False):
    return AllocationSolver(cfg).solve(instance, informed=informed)


def heuristic_allocation(instance):
    """omega_heur = G Delta^-2 / ||G Delta^-2||_1."""
    if instance.min_gap <= 0.0:
        raise ValueError("The heuristic allocation needs a positive minimum gap")
    return _heuristic_weights(instance.graph.weights, instance.gaps)


def sparse_allocation(instance, top_k=1):
    """
    Uniform allocation over the shortest prefix (of length >= top_k) of the
    vertices ranked by (G Delta^-2)_u that dominates every vertex. Returns None
    when no prefix dominates.
    """
    if top_k < 1:
        raise ValueError(f"top_k must be at least 1, got {top_k}")
    if instance.min_gap <= 0.0:
        raise ValueError("The sparse allocation needs a positive minimum gap")
    scores = instance.graph.weights @ (1.0 / instance.gaps ** 2)
    order = np.argsort(-scores, kind="stable")
    everyone = range(instance.k)
    for size in range(top_k, instance.k + 1):
        prefix = [int(v) for v in order[:size]]
        if instance.graph.dominates(prefix, everyone):
            omega = np.zeros(instance.k)
            omega[prefix] = 1.0 / size
            return omega
    return None


def _require_gaussian(instance):
    if not isinstance(instance.family, GaussianFamily):
        raise ValueError("Scaling bounds are stated for Gaussian rewards")


def scaling_bound(instance):
    """
    Graph-structural upper bound on T*(nu).

    With delta(G) + sigma(G) > 0 the bound uses, for each vertex u,
    G_bar_u = max(max over the weak dominating witness D of G[v, u],
                  min over self-loop vertices v with G[v, u] > 0 of G[v, u]).
    Without dominators or self-loops (the loopless clique) it uses the best
    pair of vertices to sample from.
    """
    _require_gaussian(instance)
    graph = instance.graph
    weights = graph.weights
    variance = instance.family.variance
    best = instance.best_vertex
    gaps = instance.gaps
    quantities = graph_quantities(graph)
    alpha, delta, sigma = quantities.alpha, quantities.delta, quantities.sigma

    if delta + sigma > 0:
        dominators = list(quantities.witness_dominating_set)
        loops = sorted(classify_observability(graph).self_loops)
        g_bar = np.zeros(instance.k)
        for u in range(instance.k):
            from_dominators = max((weights[v, u] for v in dominators), default=0.0)
            from_loops = min((weights[v, u] for v in loops if weights[v, u] > 0.0), default=0.0)
            g_bar[u] = max(from_dominators, from_loops)
        if np.any(g_bar <= 0.0):
            raise ValueError(f"G_bar vanishes on vertices {np.flatnonzero(g_bar <= 0.0).tolist()}: malformed instance")
        denominator = min(min(g_bar[u], g_bar[best]) * gaps[u] ** 2 for u in range(instance.k) if u != best)
        return 4.0 * (delta + sigma - sigma // (alpha + 1)) * variance / denominator

    g_pair = math.inf
    for v in range(instance.k):
        for w in range(instance.k):
            if v == w:
                continue
            pair_rate = weights[v, :] + weights[w, :]
            if pair_rate[best] <= 0.0:
                continue
            worst = 0.0
            for u in range(instance.k):
                if u == best:
                    continue
                term = math.inf if pair_rate[u] <= 0.0 else 1.0 / pair_rate[u] + 1.0 / pair_rate[best]
                worst = max(worst, term)
            g_pair = min(g_pair, worst)
    return 4.0 * g_pair * variance / instance.min_gap ** 2


def heuristic_bound(instance):
    """4 lambda^2 ||G Delta^-2||_1 / sigma_min(G)^2; infinite for singular G."""
    _require_gaussian(instance)
    singular_values = np.linalg.svd(instance.graph.weights, compute_uv=False)
    sigma_min = float(singular_values.min())
    if sigma_min <= 1e-12:
        return math.inf
    scores = instance.graph.weights @ (1.0 / instance.gaps ** 2)
    return 4.0 * instance.family.variance * float(np.abs(scores).sum()) / sigma_min ** 2


def bernoulli_confusion(instance, target, omega=None):
    """
    Confusing model for Bernoulli rewards when activations are hidden.

    Observation (v, u) is Bernoulli with parameter q = G[v, u] mu_u. Raising
    mu_target to mu_a* while scaling column `target` of G by mu_target / mu_a*
    leaves every q unchanged, so the weighted divergence between the two
    observation laws is zero although the best vertex differs.
    """
    if not isinstance(instance.family, BernoulliFamily):
        raise ValueError("bernoulli_confusion needs Bernoulli rewards")
    best = instance.best_vertex
    if target == best:
        raise ValueError(f"Target {target} is the best vertex")
    mu_best = instance.means[best]
    if mu_best <= 0.0:
        raise ValueError("The best mean must be positive")

    weights = np.array(instance.graph.weights)
    means = np.array(instance.means)
    confused_weights = weights.copy()
    confused_weights[:, target] = weights[:, target] * means[target] / mu_best
    confused_means = means.copy()
    confused_means[target] = mu_best
    confused = Instance(confused_weights, instance.family, confused_means, require_unique_best=False)

    if omega is None:
        omega = np.full(instance.k, 1.0 / instance.k)
    q = weights * means[np.newaxis, :]
    q_confused = confused_weights * confused_means[np.newaxis, :]
    divergence = 0.0
    for v in range(instance.k):
        for u in range(instance.k):
            if q[v, u] != q_confused[v, u]:
                divergence += omega[v] * bern_kl(q[v, u], q_confused[v, u])
    return ConfusingModel(instance=confused, target=target, divergence=divergence)


def characteristic_time_sweep(graph_family, k, params, sweep_key, values, reward_family, means, cfg=None):
    """
    T*, ||G^T omega*||_2 and ||omega* - omega_heur||_1 along one graph
    parameter, one row per value.
    """
    solver = AllocationSolver(cfg)
    rows = []
    for value in values:
        graph = generate_graph(graph_family, k, {**params, sweep_key: value})
        result = solver.solve(Instance(graph, reward_family, means), informed=True)
        rows.append({sweep_key: float(value),
                     "t_star": result.t_star,
                     "observation_norm": result.observation_norm,
                     "heuristic_distance": result.heuristic_distance,
                     "gap_estimate": result.gap_estimate})
    return rows
