import argparse
import json
import os
import sys

import pandas as pd
import singer

from fg_explore.campaign import (GRAPH_CONFIG_KEYS, REQUIRED_CONFIG_KEYS, CampaignSettings, build_instance,
                                 characteristic_time_of, load_config, read_runs, resolve_graph, resolve_workers,
                                 run_and_write, summarize, write_summary)
from fg_explore.errors import ConfigError
from fg_explore.graphs import classify_observability, graph_quantities
from fg_explore.solver import characteristic_time_sweep

LOGGER = singer.get_logger()

CONFIG_ERROR_EXIT = 2


def _parser():
    parser = argparse.ArgumentParser(prog="fg-explore",
                                     description="Best-vertex identification with feedback graphs")
    subparsers = parser.add_subparsers(dest="command", required=True)

    def add(name, help_text, needs_config=True):
        sub = subparsers.add_parser(name, help=help_text)
        sub.add_argument("--config", required=needs_config, help="Campaign config (JSON)")
        sub.add_argument("--out", default=".", help="Output directory")
        sub.add_argument("--workers", type=int, default=None,
                         help="Worker processes (default: $FG_EXPLORE_WORKERS or 1)")
        sub.add_argument("--format", choices=["csv", "json"], default="json", help="Summary format")
        return sub

    add("charac-time", "Solve the characteristic time of the config's instance")
    add("graph-info", "Print observability and graph quantities")
    add("run", "Run a campaign and write runs and summary")
    summarize_parser = add("summarize", "Re-aggregate an existing runs CSV", needs_config=False)
    summarize_parser.add_argument("--runs", default=None, help="Runs CSV (default: <out>/runs.csv)")
    sweep_parser = add("sweep", "Characteristic time along one graph parameter")
    sweep_parser.add_argument("--key", default=None, help="Graph parameter to sweep (default: config sweep.key)")
    sweep_parser.add_argument("--values", type=float, nargs="+", default=None,
                              help="Parameter values (default: config sweep.values)")
    return parser


def _print_json(payload):
    print(json.dumps(payload, indent=2, sort_keys=True))


def charac_time(args):
    config = load_config(args.config)
    settings = CampaignSettings.from_config(config)
    result = characteristic_time_of(settings)
    LOGGER.info("Characteristic time %s after %s iterations", result.t_star, result.iterations)
    _print_json(result.to_dict())


def graph_info(args):
    config = load_config(args.config, GRAPH_CONFIG_KEYS)
    graph = resolve_graph(config["graph"], config.get("base_dir", "."))
    report = classify_observability(graph)
    info = {"k": graph.k, "observability": report.to_dict()}
    if report.is_observable:
        info.update(graph_quantities(graph).to_dict())
    _print_json(info)


def run(args):
    config = load_config(args.config)
    os.makedirs(args.out, exist_ok=True)
    written = run_and_write(config, args.out, resolve_workers(args.workers), args.format)
    for path in written:
        LOGGER.info("Wrote %s", path)


def summarize_runs(args):
    runs = args.runs or os.path.join(args.out, "runs.csv")
    os.makedirs(args.out, exist_ok=True)
    path = write_summary(summarize(read_runs(runs)), args.out, args.format)
    LOGGER.info("Wrote %s", path)


def sweep(args):
    config = load_config(args.config)
    sweep_cfg = config.get("sweep", {})
    key = args.key or sweep_cfg.get("key")
    values = args.values or sweep_cfg.get("values")
    if not key or not values:
        raise ConfigError("sweep: a parameter key and a list of values are required")
    graph_cfg = config["graph"]
    if "family" not in graph_cfg:
        raise ConfigError("sweep: the graph must be given by family")
    instance = build_instance(config)
    try:
        rows = characteristic_time_sweep(graph_cfg["family"], int(graph_cfg["k"]), graph_cfg.get("params", {}),
                                         key, values, instance.family, instance.means,
                                         CampaignSettings.from_config(config).solver_cfg)
    except ValueError as e:
        raise ConfigError(f"sweep: {e}") from e
    pd.DataFrame(rows).to_csv(sys.stdout, index=False)


COMMANDS = {
    "charac-time": charac_time,
    "graph-info": graph_info,
    "run": run,
    "summarize": summarize_runs,
    "sweep": sweep,
}


def main_impl(argv=None):
    args = _parser().parse_args(argv)
    COMMANDS[args.command](args)


def main(argv=None):
    try:
        main_impl(argv)
    except ConfigError as e:
        for line in str(e).splitlines():
            LOGGER.critical(line)
        sys.exit(CONFIG_ERROR_EXIT)
    except Exception as e:
        for line in str(e).splitlines():
            LOGGER.critical(line)
        raise e


if __name__ == "__main__":
    main()
