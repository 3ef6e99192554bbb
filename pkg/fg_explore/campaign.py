import copy
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np
import pandas as pd
import singer
from singer import utils

from fg_explore.algorithms import ALGORITHM_IDS, DEFAULT_ITERATION_CAP, TrackingConfig, run_algorithm
from fg_explore.divergence import Instance, family_from_name
from fg_explore.environment import INFORMED, MODES
from fg_explore.errors import ConfigError, FeedbackGraphError
from fg_explore.graphs import FeedbackGraph, generate_graph, graph_from_text
from fg_explore.presets import PRESETS
from fg_explore.solver import SolverConfig, solve_characteristic_time
from fg_explore.stopping import THEORETICAL, StoppingConfig

LOGGER = singer.get_logger()

REQUIRED_CONFIG_KEYS = ["graph", "reward", "means"]
GRAPH_CONFIG_KEYS = ["graph"]

CSV_COLUMNS = ["seed", "algorithm", "delta", "tau", "correct", "a_hat",
               "t_star", "normalized", "threshold_kind", "truncated"]
SORT_COLUMNS = ["algorithm", "delta", "seed"]
WORKERS_ENV = "FG_EXPLORE_WORKERS"

DEFAULT_DELTAS = [0.1]
DEFAULT_SEEDS = {"start": 0, "count": 10}
SOLVER_KEYS = ("max_iterations", "restarts", "step_scale", "warm_iterations")


def _merge(base, override):
    merged = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _merge(merged[key], value)
        else:
            merged[key] = copy.deepcopy(value)
    return merged


def apply_preset(config):
    name = config.get("preset")
    if name is None:
        return config
    if name not in PRESETS:
        raise ConfigError(f"Unknown preset: {name}. Known presets: {sorted(PRESETS)}")
    preset = {key: value for key, value in PRESETS[name].items() if key != "name"}
    overrides = {key: value for key, value in config.items() if key != "preset"}
    return _merge(preset, overrides)


def load_config(path, required_keys=REQUIRED_CONFIG_KEYS):
    if not os.path.exists(path):
        raise ConfigError(f"Config file not found: {path}")
    try:
        config = utils.load_json(path)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: line {e.lineno}, column {e.colno}: {e.msg}") from e
    if not isinstance(config, dict):
        raise ConfigError(f"{path}: the top level must be a JSON object")
    config = apply_preset(config)
    try:
        utils.check_config(config, required_keys)
    except Exception as e:
        raise ConfigError(f"{path}: {e}") from e
    config.setdefault("base_dir", os.path.dirname(os.path.abspath(path)))
    return config


def expand_cells(config):
    """(name, config) for every campaign cell; a config without cells is one cell."""
    cells = config.get("cells")
    if not cells:
        return [(config.get("name", "campaign"), config)]
    base = {key: value for key, value in config.items() if key != "cells"}
    expanded = []
    for index, override in enumerate(cells):
        if not isinstance(override, dict):
            raise ConfigError(f"cells[{index}]: each cell must be a JSON object")
        if "preset" in override:
            # the cell's preset replaces the instance keys of the base config
            base_with_preset = {**base, **apply_preset({"preset": override["preset"]})}
            cell = _merge(base_with_preset, {key: value for key, value in override.items() if key != "preset"})
        else:
            cell = _merge(base, override)
        expanded.append((str(override.get("name", f"cell-{index}")), cell))
    return expanded


def _field(section, key, name):
    if key not in section:
        raise ConfigError(f"{name}: missing field '{key}'")
    return section[key]


def resolve_graph(graph_cfg, base_dir="."):
    try:
        if "matrix" in graph_cfg:
            return FeedbackGraph(graph_cfg["matrix"])
        if "matrix_file" in graph_cfg:
            path = os.path.join(base_dir, graph_cfg["matrix_file"])
            with open(path) as f:
                return graph_from_text(f.read())
        return generate_graph(_field(graph_cfg, "family", "graph"),
                              int(_field(graph_cfg, "k", "graph")),
                              graph_cfg.get("params", {}))
    except (ValueError, TypeError, OSError) as e:
        raise ConfigError(f"graph: {e}") from e


def resolve_means(means_cfg, k):
    rule = _field(means_cfg, "rule", "means")
    if rule == "explicit":
        values = _field(means_cfg, "values", "means")
        if len(values) != k:
            raise ConfigError(f"means.values: expected {k} values, got {len(values)}")
        return np.array(values, dtype=float)
    if rule == "linear":
        return np.linspace(0.0, 1.0, k)
    if rule == "best_one_rest_half":
        best = int(means_cfg.get("best_vertex", k - 1))
        if not 0 <= best < k:
            raise ConfigError(f"means.best_vertex: {best} is not in 0..{k - 1}")
        means = np.full(k, 0.5)
        means[best] = 1.0
        return means
    raise ConfigError(f"means.rule: unknown rule '{rule}'")


def build_instance(config):
    graph = resolve_graph(config["graph"], config.get("base_dir", "."))
    reward_cfg = config["reward"]
    try:
        family = family_from_name(_field(reward_cfg, "family", "reward"), reward_cfg.get("variance", 1.0))
        instance = Instance(graph, family, resolve_means(config["means"], graph.k))
        instance.require_observable()
    except (ValueError, FeedbackGraphError) as e:
        if isinstance(e, ConfigError):
            raise
        raise ConfigError(f"instance: {e}") from e
    return instance


@dataclass(frozen=True)
class CampaignSettings:
    instance: Instance
    mode: str
    algorithms: tuple
    deltas: tuple
    seeds: tuple
    threshold_kind: str
    iteration_cap: int
    solver_cfg: SolverConfig
    tracking_cfg: TrackingConfig
    run_id: int = 0

    @classmethod
    def from_config(cls, config):
        instance = build_instance(config)
        mode = config.get("mode", INFORMED)
        if mode not in MODES:
            raise ConfigError(f"mode: expected one of {list(MODES)}, got '{mode}'")
        if not instance.family.continuous and mode != INFORMED:
            raise ConfigError("mode: Bernoulli rewards are only identifiable with informed feedback")
        algorithms = tuple(config.get("algorithms", []))
        unknown = [a for a in algorithms if a not in ALGORITHM_IDS]
        if unknown:
            raise ConfigError(f"algorithms: unknown ids {unknown}; known ids are {list(ALGORITHM_IDS)}")
        seeds_cfg = {**DEFAULT_SEEDS, **config.get("seeds", {})}
        solver_cfg = config.get("solver", {})
        smoothing = config.get("smoothing", {})
        try:
            deltas = tuple(float(d) for d in config.get("deltas", DEFAULT_DELTAS))
            threshold_kind = config.get("threshold", THEORETICAL)
            for delta in deltas:
                StoppingConfig(threshold_kind, delta)
            settings = cls(instance=instance,
                           mode=mode,
                           algorithms=algorithms,
                           deltas=deltas,
                           seeds=tuple(range(int(seeds_cfg["start"]), int(seeds_cfg["start"]) + int(seeds_cfg["count"]))),
                           threshold_kind=threshold_kind,
                           iteration_cap=int(config.get("iteration_cap", DEFAULT_ITERATION_CAP)),
                           solver_cfg=SolverConfig(**{k: solver_cfg[k] for k in SOLVER_KEYS if k in solver_cfg}),
                           tracking_cfg=TrackingConfig(smoothing.get("kind", "average"), float(smoothing.get("rate", 0.99))),
                           run_id=int(config.get("run_id", 0)))
        except (ValueError, TypeError) as e:
            raise ConfigError(f"campaign: {e}") from e
        if settings.iteration_cap < 1:
            raise ConfigError("iteration_cap: must be at least 1")
        return settings


def characteristic_time_of(settings):
    with singer.metrics.job_timer("characteristic_time"):
        return solve_characteristic_time(settings.instance, settings.solver_cfg, informed=settings.mode == INFORMED)


def _run_task(task):
    algorithm, delta, seed, settings, t_star = task
    return run_algorithm(algorithm,
                         settings.instance,
                         settings.mode,
                         StoppingConfig(settings.threshold_kind, delta),
                         seed,
                         run_id=settings.run_id,
                         iteration_cap=settings.iteration_cap,
                         t_star=t_star,
                         solver_cfg=settings.solver_cfg,
                         tracking_cfg=settings.tracking_cfg)


def resolve_workers(workers=None):
    if workers is None:
        workers = os.environ.get(WORKERS_ENV, 1)
    try:
        workers = int(workers)
    except ValueError as e:
        raise ConfigError(f"workers: expected an integer, got '{workers}'") from e
    if workers < 1:
        raise ConfigError(f"workers: must be at least 1, got {workers}")
    return workers


def run_campaign(settings, workers=1):
    """
    Every (algorithm, delta, seed) run of one campaign cell. Returns the
    records in (algorithm, delta, seed) order and the instance's T*.
    """
    t_star = characteristic_time_of(settings).t_star if settings.algorithms else math.nan
    tasks = [(algorithm, delta, seed, settings, t_star)
             for algorithm in settings.algorithms
             for delta in settings.deltas
             for seed in settings.seeds]
    LOGGER.info("Running campaign cell with %s runs on %s workers", len(tasks), workers)
    with singer.metrics.job_timer("campaign"):
        if workers > 1 and len(tasks) > 1:
            with ProcessPoolExecutor(max_workers=workers) as executor:
                records = list(executor.map(_run_task, tasks))
        else:
            records = [_run_task(task) for task in tasks]

    for algorithm in settings.algorithms:
        with singer.metrics.record_counter(algorithm) as counter:
            for record in records:
                if record.algorithm == algorithm:
                    counter.increment()
    truncated = sum(record.truncated for record in records)
    if truncated:
        LOGGER.warning("%s of %s runs were truncated at the iteration cap", truncated, len(records))
    LOGGER.info("Campaign complete")
    return sorted(records, key=lambda r: (r.algorithm, r.delta, r.seed)), t_star


def records_to_frame(records):
    frame = pd.DataFrame([record.to_row() for record in records], columns=CSV_COLUMNS)
    return frame.sort_values(SORT_COLUMNS, kind="stable").reset_index(drop=True)


def write_runs(frame, path):
    frame.to_csv(path, index=False, columns=CSV_COLUMNS)


def read_runs(path):
    if not os.path.exists(path):
        raise ConfigError(f"Runs file not found: {path}")
    frame = pd.read_csv(path, float_precision="round_trip")
    missing = [column for column in CSV_COLUMNS if column not in frame.columns]
    if missing:
        raise ConfigError(f"{path}: missing columns {missing}")
    for column in ("correct", "truncated"):
        frame[column] = frame[column].astype(str).str.lower() == "true"
    return frame[CSV_COLUMNS]


def _statistics(values, prefix):
    values = values.dropna().to_numpy(dtype=float)
    if not len(values):
        return {f"{prefix}_{name}": None for name in ("mean", "median", "q25", "q75", "iqr")}
    q25, median, q75 = np.percentile(values, [25, 50, 75])
    return {f"{prefix}_mean": float(values.mean()),
            f"{prefix}_median": float(median),
            f"{prefix}_q25": float(q25),
            f"{prefix}_q75": float(q75),
            f"{prefix}_iqr": float(q75 - q25)}


def _finite_or_none(value):
    value = float(value)
    return value if math.isfinite(value) else None


def summarize(frame):
    """One summary row per (algorithm, delta), in that order."""
    rows = []
    for (algorithm, delta), group in frame.groupby(["algorithm", "delta"], sort=True):
        errors = int((~group["correct"].astype(bool)).sum())
        row = {"algorithm": algorithm,
               "delta": float(delta),
               "count": int(len(group)),
               "errors": errors,
               "error_rate": errors / len(group),
               "truncated": int(group["truncated"].astype(bool).sum()),
               "t_star": _finite_or_none(group["t_star"].iloc[0])}
        row.update(_statistics(group["tau"], "tau"))
        row.update(_statistics(group["normalized"], "normalized"))
        rows.append(row)
    return rows


def write_summary(rows, out_dir, fmt="json"):
    if fmt == "csv":
        path = os.path.join(out_dir, "summary.csv")
        pd.DataFrame(rows).to_csv(path, index=False)
    elif fmt == "json":
        path = os.path.join(out_dir, "summary.json")
        with open(path, "w") as f:
            json.dump(rows, f, sort_keys=True, indent=2)
            f.write("\n")
    else:
        raise ConfigError(f"format: expected csv or json, got '{fmt}'")
    return path


def run_and_write(config, out_dir, workers=1, fmt="json"):
    """Runs every cell of a campaign config and writes runs and summary per cell."""
    cells = expand_cells(config)
    written = []
    for name, cell in cells:
        cell_dir = out_dir if len(cells) == 1 else os.path.join(out_dir, name)
        os.makedirs(cell_dir, exist_ok=True)
        LOGGER.info("Running campaign cell %s", name)
        records, _ = run_campaign(CampaignSettings.from_config(cell), workers)
        frame = records_to_frame(records)
        write_runs(frame, os.path.join(cell_dir, "runs.csv"))
        written.append(write_summary(summarize(frame), cell_dir, fmt))
    return written
