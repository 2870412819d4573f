"""Command-line entry point: ``immersionlab [run] <experiment> [options]``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
import traceback
from pathlib import Path

import yaml

from .errors import ConfigError, ImmersionLabError
from .experiments import EXPERIMENTS, ExperimentConfig, default_output_root, run
from .io import SCHEMA_VERSION, json_text, write_atomic

# flag dest -> config params key
PARAM_FLAGS = {
    "xi": "xi", "horizon": "horizon", "dt": "dt", "direction": "direction", "resolution": "resolution",
    "box": "box", "settle": "settle", "observe": "observe", "n_xi": "n_xi", "n_t": "n_t", "t_max": "t_max",
    "method": "method", "tau": "tau", "N": "N", "degree": "degree", "m": "m", "tau_list": "tau_list",
    "N_list": "N_list", "seeds": "seeds", "workers": "workers", "map": "map",
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="immersionlab",
        description="Limit sets, exact linear immersions and learned embeddings of nonlinear flows.",
        epilog="Subcommands: " + ", ".join(EXPERIMENTS) + ". A leading 'run' is accepted and ignored.")
    p.add_argument("experiment", nargs="?", help="experiment to run")
    p.add_argument("--system", help="catalog system (or exact-immersion name for verify-immersion)")
    p.add_argument("--config", type=Path, help="YAML config file; flags override its values")
    p.add_argument("--seed", type=int, help="base RNG seed (default 0)")
    p.add_argument("--quick", action="store_true", default=None, help="shrink grids and sample counts 10x")
    p.add_argument("--output", help="run directory (default: $IMMERSIONLAB_OUTPUT or ./runs, plus a run name)")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    g = p.add_argument_group("experiment parameters (comma-separated lists; boxes as 'lo,hi;lo,hi')")
    g.add_argument("--xi", help="initial state, e.g. 0.1,0")
    g.add_argument("--horizon", help="integration horizon")
    g.add_argument("--dt", help="maximum RK4 step")
    g.add_argument("--direction", help="forward or backward")
    g.add_argument("--resolution", help="grid nodes per axis")
    g.add_argument("--box", help="region, e.g. --box=-2,2;-2,2")
    g.add_argument("--settle", help="transient time discarded before classification")
    g.add_argument("--observe", help="tail window length")
    g.add_argument("--n-xi", dest="n_xi", help="initial states in the residual grid")
    g.add_argument("--n-t", dest="n_t", help="times in the residual grid")
    g.add_argument("--t-max", dest="t_max", help="largest time in the residual grid")
    g.add_argument("--method", help="closed_form or rk4")
    g.add_argument("--tau", help="sampling time")
    g.add_argument("--N", dest="N", help="number of sample pairs")
    g.add_argument("--degree", help="monomial dictionary degree")
    g.add_argument("--m", dest="m", help="embedding dimension")
    g.add_argument("--tau-list", dest="tau_list", help="sampling times for a sweep")
    g.add_argument("--N-list", dest="N_list", help="sample counts for a sweep or exclusion test")
    g.add_argument("--seeds", help="number of seeds, starting at --seed")
    g.add_argument("--workers", help="parallel sweep cells")
    g.add_argument("--map", help="exclusion map: x1 or exact")
    return p


def _load_config_file(path: Path) -> dict:
    try:
        raw = yaml.safe_load(path.read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"invalid YAML in {path}: {exc}") from None
    if raw is None:
        return {}
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return raw


def merge_config(args: argparse.Namespace) -> ExperimentConfig:
    raw = _load_config_file(args.config) if args.config else {}
    raw = dict(raw)
    params = dict(raw.get("params") or {})
    if args.experiment:
        raw["experiment"] = args.experiment
    if args.system:
        raw["system"] = args.system
    if args.seed is not None:
        raw["seed"] = args.seed
    if args.quick:
        raw["quick"] = True
    for dest, key in PARAM_FLAGS.items():
        value = getattr(args, dest)
        if value is not None:
            params[key] = value
    if params:
        raw["params"] = params
    if args.output:
        raw["output_dir"] = args.output
    elif not raw.get("output_dir") and raw.get("experiment"):
        name = raw["experiment"] + (f"_{raw['system']}" if raw.get("system") else "")
        raw["output_dir"] = str(default_output_root() / name)
    return ExperimentConfig.from_mapping(raw)


def _error_doc(exc: BaseException) -> dict:
    return {"schema_version": SCHEMA_VERSION, "error": type(exc).__name__, "message": str(exc)}


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    if argv and argv[0] == "run":
        argv = argv[1:]
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        cfg = merge_config(args)
    except ConfigError as exc:
        print(json.dumps(_error_doc(exc)), file=sys.stderr)
        return 2
    try:
        manifest = run(cfg)
    except (ImmersionLabError, ValueError, ArithmeticError) as exc:
        doc = _error_doc(exc)
        doc["traceback"] = traceback.format_exc()
        write_atomic(Path(cfg.output_dir) / "error.json", json_text(doc))
        print(json.dumps(_error_doc(exc)), file=sys.stderr)
        return 1
    print(f"{manifest.status}: {len(manifest.outputs)} files in {cfg.output_dir}")
    if cfg.experiment == "reproduce-paper":
        for key, status in manifest.cells.items():
            print(f"{key}: {status}")
    return 0 if manifest.status == "ok" else 1


if __name__ == "__main__":
    sys.exit(main())
