import math
from abc import ABC, abstractmethod

import numpy as np
from scipy.special import rel_entr

from fg_explore.errors import FamilyDomainError, NotObservableError
from fg_explore.graphs import FeedbackGraph

GAUSSIAN = "gaussian"
BERNOULLI = "bernoulli"


def bern_kl(x, y):
    """kl(x, y) = x ln(x/y) + (1-x) ln((1-x)/(1-y)) for x, y in (0, 1)."""
    if not (0.0 < x < 1.0 and 0.0 < y < 1.0):
        raise FamilyDomainError(f"Bernoulli kl needs arguments in (0, 1), got ({x}, {y})")
    return x * math.log(x / y) + (1.0 - x) * math.log((1.0 - x) / (1.0 - y))


class RewardFamily(ABC):
    """
    One-parameter exponential family, described by its means only. Every
    divergence the solver needs is closed form in the means, so a family only
    has to provide KL and the mean of a mixture.
    """

    name = None

    @abstractmethod
    def kl(self, mu1, mu2):
        """KL(P_mu1, P_mu2)."""

    @abstractmethod
    def check_mean(self, mu):
        pass

    @property
    def continuous(self):
        return True

    def mixture_mean(self, mu1, mu2, alpha):
        return alpha * mu1 + (1.0 - alpha) * mu2

    def gjs(self, mu1, mu2, alpha):
        """
        Generalised Jensen-Shannon divergence
        I_alpha = alpha KL(P, M) + (1 - alpha) KL(Q, M), with M the family
        member whose mean is the alpha-mixture of the two means.
        """
        if not 0.0 <= alpha <= 1.0:
            raise ValueError(f"gjs weight must lie in [0, 1], got {alpha}")
        if alpha in (0.0, 1.0):
            return 0.0
        middle = self.mixture_mean(mu1, mu2, alpha)
        return alpha * self.kl(mu1, middle) + (1.0 - alpha) * self.kl(mu2, middle)


class GaussianFamily(RewardFamily):

    name = GAUSSIAN

    def __init__(self, variance=1.0):
        if not variance > 0.0:
            raise ValueError(f"Gaussian variance must be positive, got {variance}")
        self.variance = float(variance)

    def check_mean(self, mu):
        if not math.isfinite(mu):
            raise FamilyDomainError(f"Gaussian mean must be finite, got {mu}")

    def kl(self, mu1, mu2):
        return (mu1 - mu2) ** 2 / (2.0 * self.variance)

    def gjs(self, mu1, mu2, alpha):
        if not 0.0 <= alpha <= 1.0:
            raise ValueError(f"gjs weight must lie in [0, 1], got {alpha}")
        return alpha * (1.0 - alpha) * (mu1 - mu2) ** 2 / (2.0 * self.variance)

    def __eq__(self, other):
        return isinstance(other, GaussianFamily) and self.variance == other.variance

    def __hash__(self):
        return hash((self.name, self.variance))

    def __repr__(self):
        return f"GaussianFamily(variance={self.variance})"


class BernoulliFamily(RewardFamily):

    name = BERNOULLI

    @property
    def continuous(self):
        return False

    def check_mean(self, mu):
        if not 0.0 < mu < 1.0:
            raise FamilyDomainError(f"Bernoulli mean must lie in (0, 1), got {mu}")

    def kl(self, mu1, mu2):
        # Estimated means may sit on 0 or 1; rel_entr handles 0 ln 0 = 0.
        if mu1 == mu2:
            return 0.0
        return float(rel_entr(mu1, mu2) + rel_entr(1.0 - mu1, 1.0 - mu2))

    def __eq__(self, other):
        return isinstance(other, BernoulliFamily)

    def __hash__(self):
        return hash(self.name)

    def __repr__(self):
        return "BernoulliFamily()"


def family_from_name(name, variance=1.0):
    if name == GAUSSIAN:
        return GaussianFamily(variance)
    if name == BERNOULLI:
        return BernoulliFamily()
    raise ValueError(f"Unknown reward family: {name}")


def kl(family, mu1, mu2):
    return family.kl(mu1, mu2)


def gjs(family, mu1, mu2, alpha):
    return family.gjs(mu1, mu2, alpha)


class Instance:
    """
    A feedback graph together with one reward distribution per vertex, given
    by its mean within a shared family.

    Experiment instances require a unique best vertex. Estimated instances
    built inside the algorithms do not, and break ties toward the smallest
    index.
    """

    def __init__(self, graph, family, means, require_unique_best=True):
        if not isinstance(graph, FeedbackGraph):
            graph = FeedbackGraph(graph)
        means = np.array(means, dtype=float)
        if means.shape != (graph.k,):
            raise ValueError(f"Expected {graph.k} means, got shape {means.shape}")
        for mu in means:
            family.check_mean(mu)
        if require_unique_best and np.count_nonzero(means == means.max()) > 1:
            raise ValueError("The best vertex must be unique")
        means.setflags(write=False)
        self.graph = graph
        self.family = family
        self.means = means

    @property
    def k(self):
        return self.graph.k

    @property
    def best_vertex(self):
        return int(np.argmax(self.means))

    @property
    def gaps(self):
        """Delta_u = mu_a* - mu_u, with Delta_a* set to Delta_min."""
        best = self.best_vertex
        gaps = self.means[best] - self.means
        if self.k > 1:
            gaps[best] = np.delete(gaps, best).min()
        return gaps

    @property
    def min_gap(self):
        return float(self.gaps[self.best_vertex])

    def require_observable(self):
        if not self.graph.is_observable:
            unobserved = [v for v in range(self.k) if not self.graph.in_neighbors(v)]
            raise NotObservableError(f"Vertices {unobserved} have no in-neighbours")

    def __repr__(self):
        return f"Instance(k={self.k}, family={self.family!r}, means={self.means.tolist()})"
