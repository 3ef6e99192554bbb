import math
from dataclasses import dataclass

import numpy as np

from fg_explore.divergence import BernoulliFamily, GaussianFamily

INFORMED = "informed"
UNINFORMED = "uninformed"
MODES = (INFORMED, UNINFORMED)

ACTIVATIONS = "activations"
REWARDS = "rewards"
ALGORITHM = "algorithm"
# SeedSequence spawn keys are integers; the codes must never be reordered.
PURPOSE_CODES = {ACTIVATIONS: 0, REWARDS: 1, ALGORITHM: 2}


@dataclass(frozen=True)
class Observation:
    chosen: int
    z: np.ndarray
    # Present in informed mode only.
    activated: frozenset = None


class RngStream:
    """
    Reproducible random stream keyed by (seed, run id, purpose).

    Backed by the counter-based Philox bit generator, so equal keys give the
    same draws on every platform, and streams with different purposes never
    share state.
    """

    def __init__(self, seed, run_id=0, purpose=ALGORITHM):
        if purpose not in PURPOSE_CODES:
            raise ValueError(f"Unknown stream purpose: {purpose}")
        if seed < 0 or run_id < 0:
            raise ValueError("Seed and run id must be non-negative")
        self.seed = int(seed)
        self.run_id = int(run_id)
        self.purpose = purpose
        sequence = np.random.SeedSequence(self.seed, spawn_key=(self.run_id, PURPOSE_CODES[purpose]))
        self.generator = np.random.Generator(np.random.Philox(sequence))

    def random(self, size=None):
        return self.generator.random(size)

    def normal(self, loc=0.0, scale=1.0, size=None):
        return self.generator.normal(loc, scale, size)

    def choice(self, k, p):
        return int(self.generator.choice(k, p=p))

    def __repr__(self):
        return f"RngStream(seed={self.seed}, run_id={self.run_id}, purpose={self.purpose!r})"


def check_mode(mode):
    if mode not in MODES:
        raise ValueError(f"Unknown feedback mode: {mode}")


def sample_rewards(instance, vertices, rng):
    """One reward draw for each vertex in `vertices`, in order."""
    means = instance.means[vertices]
    family = instance.family
    if isinstance(family, GaussianFamily):
        return rng.normal(means, math.sqrt(family.variance))
    if isinstance(family, BernoulliFamily):
        return (rng.random(len(vertices)) < means).astype(float)
    raise TypeError(f"No sampler for reward family {family!r}")


def _observe(instance, v, mode, activation_rng, reward_rng, reward_sampler):
    if not 0 <= v < instance.k:
        raise ValueError(f"Vertex {v} is not in 0..{instance.k - 1}")
    fired = activation_rng.random(instance.k) < instance.graph.weights[v]
    vertices = np.flatnonzero(fired)
    z = np.zeros(instance.k)
    if len(vertices):
        z[vertices] = reward_sampler(instance, vertices, reward_rng)
    activated = frozenset(int(u) for u in vertices) if mode == INFORMED else None
    return Observation(chosen=int(v), z=z, activated=activated)


def step(instance, v, mode, rng, reward_sampler=sample_rewards):
    """One round from a single stream: activations first, then lazy rewards."""
    check_mode(mode)
    return _observe(instance, v, mode, rng, rng, reward_sampler)


class Environment:
    """
    The environment of one run. Activations and rewards come from separate
    streams so that changing how many rewards are drawn never shifts which
    edges fire.
    """

    def __init__(self, instance, mode, seed, run_id=0, reward_sampler=sample_rewards):
        check_mode(mode)
        self.instance = instance
        self.mode = mode
        self.activation_rng = RngStream(seed, run_id, ACTIVATIONS)
        self.reward_rng = RngStream(seed, run_id, REWARDS)
        self.reward_sampler = reward_sampler
        self.rounds = 0

    def step(self, v):
        self.rounds += 1
        return _observe(self.instance, v, self.mode, self.activation_rng, self.reward_rng, self.reward_sampler)
