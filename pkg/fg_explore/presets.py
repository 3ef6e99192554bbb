"""
Canonical instances, written as partial campaign configs. A config may name
one with "preset" and override any of its keys.
"""

GAUSSIAN_UNIT = {"family": "gaussian", "variance": 1.0}

PRESET_INSTANCES = [
    {
        "name": "loopy_star",
        "graph": {"family": "loopy_star", "k": 5, "params": {"p": 0.2, "q": 0.25, "r": 0.25}},
        "reward": GAUSSIAN_UNIT,
        "means": {"rule": "best_one_rest_half", "best_vertex": 4},
    },
    {
        "name": "loopy_star_alt",
        "graph": {"family": "loopy_star_alt", "k": 5, "params": {"q": 0.25, "scale": 1.0}},
        "reward": GAUSSIAN_UNIT,
        "means": {"rule": "best_one_rest_half", "best_vertex": 0},
    },
    {
        "name": "ring",
        "graph": {"family": "ring", "k": 5, "params": {"p": 0.3}},
        "reward": GAUSSIAN_UNIT,
        "means": {"rule": "linear"},
    },
    {
        "name": "loopless_clique",
        "graph": {"family": "loopless_clique", "k": 5, "params": {"p": 0.5}},
        "reward": GAUSSIAN_UNIT,
        "means": {"rule": "linear"},
    },
    {
        # Optimal allocations form the segment (x, 0, 1 - x); T* = 6.
        "name": "symmetric_triple",
        "graph": {"family": "symmetric_triple", "k": 3, "params": {"p": 0.5, "p_prime": 0.5, "q": 1.0}},
        "reward": GAUSSIAN_UNIT,
        "means": {"rule": "explicit", "values": [0.0, 1.0, 0.0]},
    },
    {
        "name": "bandit_pair",
        "graph": {"family": "bandit", "k": 2, "params": {}},
        "reward": GAUSSIAN_UNIT,
        "means": {"rule": "explicit", "values": [1.0, 0.0]},
    },
]

PRESETS = {preset["name"]: preset for preset in PRESET_INSTANCES}
