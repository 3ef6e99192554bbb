import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.optimize import brentq
from scipy.special import zeta

THEORETICAL = "theoretical"
PRACTICAL = "practical"
THRESHOLD_KINDS = (THEORETICAL, PRACTICAL)

ZETA_2 = float(zeta(2.0))


@dataclass(frozen=True)
class StoppingConfig:
    threshold_kind: str = THEORETICAL
    delta: float = 0.1

    def __post_init__(self):
        if self.threshold_kind not in THRESHOLD_KINDS:
            raise ValueError(f"Unknown threshold kind: {self.threshold_kind}")
        if not 0.0 < self.delta < 1.0:
            raise ValueError(f"delta must lie in (0, 1), got {self.delta}")


def h(u):
    return u - math.log(u)


def h_inverse(x):
    """Inverse of h(u) = u - ln u on [1, inf), defined for x >= 1."""
    if x < 1.0:
        raise ValueError(f"h is at least 1 on [1, inf), got {x}")
    if x == 1.0:
        return 1.0
    # h(2x + 2) >= x for every x >= 1
    return brentq(lambda u: h(u) - x, 1.0, 2.0 * x + 2.0, xtol=1e-14, rtol=4 * np.finfo(float).eps)


def h_tilde(z, x):
    threshold = h(1.0 / math.log(z))
    if x >= threshold:
        u = h_inverse(x)
        return u * math.exp(1.0 / u)
    return z * (x - math.log(math.log(z)))


@lru_cache(maxsize=256)
def c_exp(x):
    """C_exp(x) = 2 h_tilde_{3/2}((h^-1(1 + x) + ln(2 zeta(2))) / 2)."""
    if x < 0.0:
        raise ValueError(f"C_exp is defined for x >= 0, got {x}")
    return 2.0 * h_tilde(1.5, (h_inverse(1.0 + x) + math.log(2.0 * ZETA_2)) / 2.0)


def threshold(cfg, t, k):
    """Stopping threshold beta(t, delta) for a K-vertex instance."""
    if t < 1:
        raise ValueError(f"The threshold is defined for t >= 1, got {t}")
    if cfg.threshold_kind == PRACTICAL:
        return math.log(1.0 / cfg.delta) + 3.0 * math.log(1.0 + 2.0 * math.log(t))
    if k < 2:
        raise ValueError(f"The theoretical threshold needs K >= 2, got {k}")
    return 2.0 * c_exp(math.log((k - 1) / cfg.delta) / 2.0) + 6.0 * math.log(1.0 + math.log(t))


def glrt_from_counts(m_obs, mu_hat, family):
    """
    Lambda = min over u != a_hat of
    M_a KL(mu_a, mu_{a,u}) + M_u KL(mu_u, mu_{a,u}),
    where mu_{a,u} is the observation-weighted mean of the two. Zero until
    every vertex has been observed.
    """
    m_obs = np.asarray(m_obs, dtype=float)
    if np.any(m_obs <= 0.0):
        return 0.0
    mu_hat = np.asarray(mu_hat, dtype=float)
    best = int(np.argmax(mu_hat))
    m_best, mu_best = m_obs[best], mu_hat[best]
    statistic = math.inf
    for u in range(len(mu_hat)):
        if u == best:
            continue
        pooled = (m_best * mu_best + m_obs[u] * mu_hat[u]) / (m_best + m_obs[u])
        value = m_best * family.kl(mu_best, pooled) + m_obs[u] * family.kl(mu_hat[u], pooled)
        statistic = min(statistic, value)
    return 0.0 if statistic == math.inf else statistic


def glrt_statistic(estimator):
    return glrt_from_counts(estimator.m_obs, estimator.mu_hat, estimator.family)


def should_stop(estimator, cfg):
    """(stop, Lambda(t), beta(t, delta)) at the estimator's current round."""
    statistic = glrt_statistic(estimator)
    beta = threshold(cfg, max(estimator.t, 1), estimator.k)
    return statistic >= beta and bool(np.all(estimator.m_obs > 0)), statistic, beta
