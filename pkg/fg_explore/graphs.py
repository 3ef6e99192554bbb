from dataclasses import dataclass
from itertools import combinations

import numpy as np

from fg_explore.errors import GraphSizeError, InfeasibleDominationError


MAX_EXACT_VERTICES = 24

STRONGLY_OBSERVABLE = "strongly-observable"
WEAKLY_OBSERVABLE = "weakly-observable"
NON_OBSERVABLE = "non-observable"


class FeedbackGraph:
    """
    Directed graph over vertices 0..k-1 where G[u, v] is the probability that
    edge (u, v) fires when u is selected, revealing a reward sample of v.

    The weight matrix is copied and frozen; the edge set is always derived
    from it.
    """

    def __init__(self, weights):
        weights = np.array(weights, dtype=float)
        if weights.ndim != 2 or weights.shape[0] != weights.shape[1] or weights.shape[0] < 1:
            raise ValueError(f"Feedback graph weights must be a non-empty square matrix, got shape {weights.shape}")
        if not np.all(np.isfinite(weights)) or np.any(weights < 0.0) or np.any(weights > 1.0):
            raise ValueError("Feedback graph weights must lie in [0, 1]")
        weights.setflags(write=False)
        self._weights = weights

    @property
    def weights(self):
        return self._weights

    @property
    def k(self):
        return self._weights.shape[0]

    @property
    def adjacency(self):
        return self._weights > 0.0

    @property
    def edges(self):
        return [(int(u), int(v)) for u, v in zip(*np.nonzero(self.adjacency))]

    @property
    def self_loops(self):
        return frozenset(int(v) for v in np.flatnonzero(np.diag(self.adjacency)))

    def in_neighbors(self, v):
        return frozenset(int(u) for u in np.flatnonzero(self.adjacency[:, v]))

    def out_neighbors(self, u):
        return frozenset(int(v) for v in np.flatnonzero(self.adjacency[u, :]))

    def dominates(self, dominators, targets):
        covered = set()
        for d in dominators:
            covered |= self.out_neighbors(d)
        return set(targets) <= covered

    @property
    def is_observable(self):
        return bool(np.all(self.adjacency.any(axis=0)))

    def __eq__(self, other):
        return isinstance(other, FeedbackGraph) and np.array_equal(self._weights, other._weights)

    def __hash__(self):
        return hash(self._weights.tobytes())

    def __repr__(self):
        return f"FeedbackGraph(k={self.k})"


@dataclass(frozen=True)
class ObservabilityReport:
    vertex_classes: tuple
    strongly_observable: frozenset
    weakly_observable: frozenset
    non_observable: frozenset
    self_loops: frozenset
    graph_class: str

    @property
    def is_observable(self):
        return not self.non_observable

    def to_dict(self):
        return {"vertex_classes": list(self.vertex_classes),
                "strongly_observable": sorted(self.strongly_observable),
                "weakly_observable": sorted(self.weakly_observable),
                "non_observable": sorted(self.non_observable),
                "self_loops": sorted(self.self_loops),
                "graph_class": self.graph_class}


@dataclass(frozen=True)
class GraphQuantities:
    alpha: int
    delta: int
    sigma: int
    witness_independent_set: tuple
    witness_dominating_set: tuple

    def to_dict(self):
        return {"alpha": self.alpha,
                "delta": self.delta,
                "sigma": self.sigma,
                "witness_independent_set": list(self.witness_independent_set),
                "witness_dominating_set": list(self.witness_dominating_set)}


def classify_observability(g):
    """
    A vertex is observable when it has an in-neighbour. An observable vertex
    is strongly observable when it has a self-loop or when every other vertex
    points at it, and weakly observable otherwise.
    """
    adjacency = g.adjacency
    classes = []
    for v in range(g.k):
        in_edges = adjacency[:, v]
        others = np.delete(in_edges, v)
        if not in_edges.any():
            classes.append(NON_OBSERVABLE)
        elif in_edges[v] or others.all():
            classes.append(STRONGLY_OBSERVABLE)
        else:
            classes.append(WEAKLY_OBSERVABLE)

    def members(kind):
        return frozenset(v for v, c in enumerate(classes) if c == kind)

    non_observable = members(NON_OBSERVABLE)
    weakly = members(WEAKLY_OBSERVABLE)
    if non_observable:
        graph_class = NON_OBSERVABLE
    elif weakly:
        graph_class = WEAKLY_OBSERVABLE
    else:
        graph_class = STRONGLY_OBSERVABLE
    return ObservabilityReport(vertex_classes=tuple(classes),
                               strongly_observable=members(STRONGLY_OBSERVABLE),
                               weakly_observable=weakly,
                               non_observable=non_observable,
                               self_loops=g.self_loops,
                               graph_class=graph_class)


def _check_exact_size(g):
    if g.k > MAX_EXACT_VERTICES:
        raise GraphSizeError(f"Exact graph quantities need K <= {MAX_EXACT_VERTICES}, got K={g.k}")


def _bit(v):
    return 1 << v


def _vertices_of(mask):
    return tuple(v for v in range(mask.bit_length()) if mask & _bit(v))


def max_independent_set(g):
    """
    Exact maximum independent set by branch and bound over vertex bitmasks.

    Two distinct vertices conflict when an edge joins them in either
    direction; self-loops do not matter. Vertices are branched on in index
    order, including before excluding, and only strictly larger sets replace
    the incumbent, so the lexicographically smallest maximum set is returned.
    """
    _check_exact_size(g)
    adjacency = g.adjacency
    conflicts = []
    for v in range(g.k):
        mask = 0
        for u in range(g.k):
            if u != v and (adjacency[u, v] or adjacency[v, u]):
                mask |= _bit(u)
        conflicts.append(mask)

    best = {"size": -1, "mask": 0}

    def search(chosen, candidates, size):
        if size + candidates.bit_count() <= best["size"]:
            return
        if not candidates:
            best["size"], best["mask"] = size, chosen
            return
        v = (candidates & -candidates).bit_length() - 1
        rest = candidates & ~_bit(v)
        search(chosen | _bit(v), rest & ~conflicts[v], size + 1)
        search(chosen, rest, size)

    search(0, (1 << g.k) - 1, 0)
    return _vertices_of(best["mask"])


def min_dominating_set_of(g, target):
    """
    Smallest D with target contained in the union of the out-neighbourhoods
    of D. Sizes are tried in increasing order and candidates in lexicographic
    order, so the lexicographically smallest minimum set is returned.
    """
    _check_exact_size(g)
    target = frozenset(target)
    if not target:
        return ()
    undominatable = sorted(v for v in target if not g.in_neighbors(v))
    if undominatable:
        raise InfeasibleDominationError(f"Vertices {undominatable} have no in-neighbours and cannot be dominated")

    target_mask = sum(_bit(v) for v in target)
    covers = {u: sum(_bit(v) for v in g.out_neighbors(u)) & target_mask for u in range(g.k)}
    # A minimum dominating set never holds a vertex that covers nothing.
    useful = [u for u in range(g.k) if covers[u]]
    for size in range(1, len(useful) + 1):
        for candidate in combinations(useful, size):
            covered = 0
            for u in candidate:
                covered |= covers[u]
            if covered == target_mask:
                return candidate
    raise InfeasibleDominationError("No dominating set found")


def graph_quantities(g):
    report = classify_observability(g)
    independent = max_independent_set(g)
    dominating = min_dominating_set_of(g, report.weakly_observable)
    return GraphQuantities(alpha=len(independent),
                           delta=len(dominating),
                           sigma=len(report.self_loops),
                           witness_independent_set=independent,
                           witness_dominating_set=dominating)


def so_domination_bound(g):
    """
    Upper bound on the number of vertices needed to dominate the strongly
    observable vertices SO(G).

    E(G) = SO(G) minus the self-loop vertices. When no strongly observable
    vertex has a self-loop, two vertices of E(G) suffice (one when |SO(G)| = 1).
    Otherwise sigma - floor(sigma / (alpha + 1)) self-loop vertices suffice.
    """
    report = classify_observability(g)
    strongly = report.strongly_observable
    if not strongly:
        raise ValueError("so_domination_bound needs at least one strongly observable vertex")
    loop_free = strongly - report.self_loops
    if not strongly - loop_free:
        return min(len(strongly), 2)
    sigma = len(report.self_loops)
    alpha = len(max_independent_set(g))
    return sigma - sigma // (alpha + 1)


def _check_probabilities(family, params):
    for name, value in params.items():
        if not 0.0 <= value <= 1.0:
            raise ValueError(f"Parameter {name}={value} of graph family {family} must lie in [0, 1]")


def _bandit(k, params):
    return np.eye(k)


def _full_feedback(k, params):
    return np.ones((k, k))


def _revealing_action(k, params):
    weights = np.zeros((k, k))
    weights[0, :] = 1.0
    return weights


def _apple_tasting(k, params):
    if k != 2:
        raise ValueError(f"apple_tasting is a two-vertex graph, got K={k}")
    return np.array([[1.0, 1.0], [0.0, 0.0]])


def _loopy_star(k, params):
    if k < 2:
        raise ValueError(f"loopy_star needs K >= 2, got K={k}")
    p, q, r = params["p"], params["q"], params["r"]
    weights = np.zeros((k, k))
    weights[0, 0] = q
    weights[0, 1:k - 1] = r
    weights[0, k - 1] = p
    for u in range(1, k - 1):
        weights[u, u] = max(1.0 - 2.0 * p, 0.0)
    weights[k - 1, k - 1] = 1.0 - p
    return weights


def _loopy_star_alt(k, params):
    q = params["q"]
    r = params["scale"] * (1.0 - 2.0 * q) / (4.0 * (k - 1))
    return _loopy_star(k, {"p": 0.0, "q": q, "r": r})


def _ring(k, params):
    if k < 3:
        raise ValueError(f"ring needs K >= 3, got K={k}")
    p = params["p"]
    weights = np.zeros((k, k))
    for u in range(k):
        weights[u, (u + 1) % k] = p
        weights[u, (u - 1) % k] = 1.0 - p
    return weights


def _loopless_clique(k, params):
    if k < 2:
        raise ValueError(f"loopless_clique needs K >= 2, got K={k}")
    p = params["p"]
    weights = np.zeros((k, k))
    # Edge probabilities are defined on 1-based vertex labels.
    for u in range(1, k + 1):
        for v in range(1, k + 1):
            if v != u:
                weights[u - 1, v - 1] = p / u if v % 2 == 1 else 1.0 - p / u
    return weights


def _symmetric_triple(k, params):
    if k != 3:
        raise ValueError(f"symmetric_triple is a three-vertex graph, got K={k}")
    p, p_prime, q = params["p"], params["p_prime"], params["q"]
    return np.array([[p, q, p_prime],
                     [0.0, 0.0, 0.0],
                     [p_prime, q, p]])


# family -> (builder, default parameters)
GRAPH_FAMILIES = {
    "bandit": (_bandit, {}),
    "apple_tasting": (_apple_tasting, {}),
    "revealing_action": (_revealing_action, {}),
    "full_feedback": (_full_feedback, {}),
    "loopy_star": (_loopy_star, {"p": 0.2, "q": 0.25, "r": 0.25}),
    "loopy_star_alt": (_loopy_star_alt, {"q": 0.25, "scale": 1.0}),
    "ring": (_ring, {"p": 0.3}),
    "loopless_clique": (_loopless_clique, {"p": 0.5}),
    "symmetric_triple": (_symmetric_triple, {"p": 0.5, "p_prime": 0.5, "q": 1.0}),
}


def generate_graph(family, k, params=None):
    if family not in GRAPH_FAMILIES:
        raise ValueError(f"Unknown graph family: {family}")
    if k < 1:
        raise ValueError(f"K must be at least 1, got {k}")
    builder, defaults = GRAPH_FAMILIES[family]
    unknown = set(params or {}) - set(defaults)
    if unknown:
        raise ValueError(f"Unknown parameters {sorted(unknown)} for graph family {family}")
    resolved = {**defaults, **(params or {})}
    resolved = {name: float(value) for name, value in resolved.items()}
    # `scale` multiplies a probability rather than being one
    _check_probabilities(family, {n: v for n, v in resolved.items() if n != "scale"})
    return FeedbackGraph(builder(k, resolved))


def graph_to_text(g):
    lines = [str(g.k)]
    lines.extend(" ".join(repr(float(x)) for x in row) for row in g.weights)
    return "\n".join(lines) + "\n"


def graph_from_text(text):
    lines = [line.split() for line in text.strip().splitlines() if line.strip()]
    if not lines or len(lines[0]) != 1:
        raise ValueError("Graph text must start with a line holding K")
    k = int(lines[0][0])
    rows = lines[1:]
    if len(rows) != k or any(len(row) != k for row in rows):
        raise ValueError(f"Graph text must hold {k} rows of {k} weights")
    return FeedbackGraph([[float(x) for x in row] for row in rows])
