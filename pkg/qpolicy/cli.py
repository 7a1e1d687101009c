#!/usr/bin/env python
# coding: utf8
#
# Copyright (C) 2026 CNES.
#
# This file is part of qpolicy
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#     http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.
#
"""
Console script for qpolicy.
"""

# Standard imports
import argparse
import logging
import os
import sys
import traceback
from typing import List, Optional

# qpolicy imports
from qpolicy import (
    __version__,
    deploy_pipeline,
    noise_pipeline,
    param,
    select_pipeline,
    setup_logging,
    sweep_pipeline,
    train_pipeline,
)
from qpolicy.config import (
    check_bits,
    check_general_items,
    check_quant_config,
    check_train_config,
    read_config,
)

_COMMON = {"seed": 0, "out_dir": "qpolicy_out", "workers": 1}

_TRAINING = {
    "env": "pendulum",
    "algo": "sac",
    "preset": "desk",
    "train_overrides": {},
}

# Defaults of every command, overridden by the config file then the flags
DEFAULTS = {
    "train": {
        **_COMMON,
        **_TRAINING,
        "width": 256,
        "seeds": 1,
        "bits_in": None,
        "bits_core": None,
        "bits_out": None,
        "quant_overrides": {},
        "no_input_norm": False,
    },
    "sweep": {
        **_COMMON,
        **_TRAINING,
        "width": 256,
        "seeds": param.DEFAULT_SEEDS,
        "bits": list(param.CORE_BITS),
        "scopes": list(param.SCOPES),
    },
    "select": {
        **_COMMON,
        **_TRAINING,
        "seeds": param.DEFAULT_SEEDS,
        "early_stop": False,
    },
    "noise": {
        **_COMMON,
        **_TRAINING,
        "seeds": param.DEFAULT_SEEDS,
        "width": 64,
        "bits_core": 3,
        "bits_in": param.FIXED_BITS,
        "sigmas": list(param.NOISE_SIGMAS),
        "episodes": None,
        "selection": None,
        "models": None,
    },
    "lower": {**_COMMON, "model": None, "out": None, "verify_samples": 256},
    "run": {
        **_COMMON,
        "graph": None,
        "obs": None,
        "out": None,
        "trace": None,
        "checksum": None,
    },
    "cost": {
        **_COMMON,
        "graph": None,
        "mujoco": None,
        "target": None,
        "budget": None,
        "clock_hz": param.CLOCK_HZ,
    },
    "fold": {
        **_COMMON,
        "graph": None,
        "mujoco": None,
        "budget": None,
        "clock_hz": param.CLOCK_HZ,
        "targets": list(param.THROUGHPUT_TARGETS),
    },
}

COMMANDS = {
    "train": train_pipeline.main,
    "sweep": sweep_pipeline.main,
    "select": select_pipeline.main,
    "noise": noise_pipeline.main,
    "lower": deploy_pipeline.lower_main,
    "run": deploy_pipeline.run_main,
    "cost": deploy_pipeline.cost_main,
    "fold": deploy_pipeline.fold_main,
}

# Keys that cannot come from the config file
_CLI_ONLY = ("command", "config", "loglevel", "total_steps")


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument(
        "--config", help="JSON file holding any of the command options"
    )
    parser.add_argument("--seed", type=int, help="Base random seed")
    parser.add_argument("--out-dir", dest="out_dir", help="Run directory")
    parser.add_argument(
        "--workers", type=int, help="Parallel training processes"
    )
    parser.add_argument(
        "--loglevel",
        default="INFO",
        choices=("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"),
        help="Logger level (default: INFO. Should be one of "
        "(DEBUG, INFO, WARNING, ERROR, CRITICAL)",
    )


def _add_training(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--env", choices=list(param.ENVIRONMENTS.keys()))
    parser.add_argument("--algo", choices=param.ALGORITHMS)
    parser.add_argument("--preset", choices=list(param.TRAIN_PRESETS.keys()))
    parser.add_argument("--seeds", type=int, help="Number of seeds")
    parser.add_argument(
        "--total-steps",
        dest="total_steps",
        type=int,
        help="Environment steps of every training (overrides the preset)",
    )


def _add_graph_source(parser: argparse.ArgumentParser) -> None:
    source = parser.add_mutually_exclusive_group()
    source.add_argument("--graph", help="Integer graph JSON file")
    source.add_argument(
        "--mujoco",
        choices=list(param.MUJOCO_DIMS.keys()),
        help="Selected configuration of a MuJoCo task, without a graph",
    )
    parser.add_argument(
        "--budget",
        help=f"Resource budget: JSON file or one of "
        f"{list(param.RESOURCE_BUDGETS.keys())}",
    )
    parser.add_argument(
        "--clock-hz", dest="clock_hz", type=float, help="Clock frequency"
    )


def get_parser() -> argparse.ArgumentParser:
    """
    ArgumentParser for qpolicy

    Returns
    parser
    """
    parser = argparse.ArgumentParser(
        description="Quantized policies: training, selection, integer "
        "deployment and hardware cost"
    )
    parser.add_argument(
        "--version",
        "-v",
        action="version",
        version=f"%(prog)s {__version__}",
    )
    subparsers = parser.add_subparsers(dest="command", required=True)

    train = subparsers.add_parser("train", help="Train policies")
    _add_common(train)
    _add_training(train)
    train.add_argument("--width", type=int, help="Hidden width")
    train.add_argument("--bits-in", dest="bits_in", type=int)
    train.add_argument("--bits-core", dest="bits_core", type=int)
    train.add_argument("--bits-out", dest="bits_out", type=int)
    train.add_argument(
        "--no-input-norm",
        dest="no_input_norm",
        action="store_true",
        default=None,
        help="Identity input normalizer",
    )

    sweep = subparsers.add_parser("sweep", help="Bitwidth sweep of the scopes")
    _add_common(sweep)
    _add_training(sweep)
    sweep.add_argument("--width", type=int, help="Hidden width")
    sweep.add_argument("--bits", type=int, nargs="+", help="Swept bitwidths")
    sweep.add_argument("--scopes", nargs="+", choices=param.SCOPES)

    select = subparsers.add_parser("select", help="Staged model selection")
    _add_common(select)
    _add_training(select)
    select.add_argument(
        "--early-stop",
        dest="early_stop",
        action="store_true",
        default=None,
        help="Stop each stage at the first candidate without parity",
    )

    noise = subparsers.add_parser("noise", help="Observation noise robustness")
    _add_common(noise)
    _add_training(noise)
    noise.add_argument("--width", type=int, help="Width of the QAT policy")
    noise.add_argument("--bits-core", dest="bits_core", type=int)
    noise.add_argument("--bits-in", dest="bits_in", type=int)
    noise.add_argument("--sigmas", type=float, nargs="+")
    noise.add_argument("--episodes", type=int, help="Episodes per model")
    noise.add_argument(
        "--selection",
        help="selection.json of a select run: its policies are evaluated "
        "instead of training new ones",
    )
    noise.add_argument(
        "--models", nargs="+", help="Evaluated models (fp32, qat, integer)"
    )

    lower = subparsers.add_parser("lower", help="Lower a policy to integers")
    _add_common(lower)
    lower.add_argument("--model", help="Trained policy JSON file")
    lower.add_argument("--out", help="Integer graph JSON file")
    lower.add_argument(
        "--verify-samples",
        dest="verify_samples",
        type=int,
        help="Random inputs of the bit-exactness check (0 skips it)",
    )

    run = subparsers.add_parser("run", help="Run an integer graph")
    _add_common(run)
    run.add_argument("--graph", help="Integer graph JSON file")
    run.add_argument("--obs", help="CSV file with obs_0..obs_{d-1} columns")
    run.add_argument("--out", help="Action CSV file (default: stdout)")
    run.add_argument("--trace", help="CSV file of the per-layer codes")
    run.add_argument(
        "--checksum", help="Expected graph checksum (16 hex digits)"
    )

    cost = subparsers.add_parser("cost", help="Hardware cost estimate")
    _add_common(cost)
    _add_graph_source(cost)
    cost.add_argument(
        "--target",
        type=float,
        help="Throughput target in actions/s (default: full parallelism, "
        "checked against the budget)",
    )

    fold = subparsers.add_parser("fold", help="Throughput-driven folding")
    _add_common(fold)
    _add_graph_source(fold)
    fold.add_argument("--targets", type=float, nargs="+")

    return parser


def make_config(args: argparse.Namespace) -> dict:
    """
    Effective configuration: command defaults, then config file, then
    explicit flags

    Parameters
    ----------
    args: argparse.Namespace
        Parsed arguments

    Returns
    -------
    cfg: dict
    """
    cfg = {
        key: (dict(value) if isinstance(value, dict) else value)
        for key, value in DEFAULTS[args.command].items()
    }
    if args.config is not None:
        from_file = read_config(args.config)
        unknown = sorted(set(from_file) - set(cfg))
        if unknown:
            raise ValueError(
                f"Unknown keys {unknown} for command '{args.command}'. "
                f"They should be in {sorted(cfg)}."
            )
        cfg.update(from_file)
    for key, value in vars(args).items():
        if key not in _CLI_ONLY and value is not None:
            cfg[key] = value
    if getattr(args, "total_steps", None) is not None:
        cfg["train_overrides"] = {
            **cfg["train_overrides"],
            "total_steps": args.total_steps,
        }
    return check_config(args.command, cfg)


def check_config(command: str, cfg: dict) -> dict:
    """
    Check the effective configuration of a command

    Parameters
    ----------
    command: str
        Command name
    cfg: dict
        Configuration dictionary

    Returns
    -------
    cfg: dict
        Configuration dictionary updated
    """
    check_general_items(cfg)
    check_train_config(cfg.get("train_overrides", {}))
    check_quant_config(cfg.get("quant_overrides", {}))
    if cfg.get("workers", 1) < 1:
        raise ValueError(f"'workers' should be >= 1. Found {cfg['workers']}.")
    if command == "sweep":
        check_bits(cfg["bits"])
    for key in ("bits_in", "bits_core"):
        if cfg.get(key) is not None:
            check_bits([cfg[key]], name=key)
    if cfg.get("bits_out") is not None:
        check_bits([cfg["bits_out"]], range(2, 33), "bits_out")

    required = {"lower": ["model"], "run": ["graph", "obs"]}
    for key in required.get(command, []):
        if not cfg.get(key):
            raise ValueError(f"Command '{command}' needs '{key}'.")
    if command in ("cost", "fold"):
        if bool(cfg.get("graph")) == bool(cfg.get("mujoco")):
            raise ValueError(
                f"Command '{command}' needs exactly one of 'graph' and "
                f"'mujoco'."
            )
    if isinstance(cfg.get("checksum"), str):
        cfg["checksum"] = int(cfg["checksum"], 16)
    for key in (
        "out_dir",
        "model",
        "graph",
        "obs",
        "out",
        "trace",
        "selection",
    ):
        if cfg.get(key):
            cfg[key] = os.path.abspath(cfg[key])
    return cfg


def main(argv: Optional[List[str]] = None) -> int:
    """Console script for qpolicy."""

    # get parser
    parser = get_parser()
    argv = sys.argv[1:] if argv is None else argv
    args = parser.parse_args(args=argv if argv else ["--help"])

    # set logging
    setup_logging.setup_logging(default_level=args.loglevel)
    logging.debug("Show argparse arguments: %s", args)

    try:
        cfg = make_config(args)
    except (ValueError, TypeError) as error:
        parser.error(str(error))

    os.makedirs(cfg["out_dir"], exist_ok=True)
    with setup_logging.run_log_file(cfg["out_dir"], args.command):
        try:
            # use a global try/except to catch
            # any error of the command pipeline
            COMMANDS[args.command](cfg)
        except Exception:  # pylint: disable=broad-except
            logging.error(
                " qpolicy %s %s", args.command, traceback.format_exc()
            )
            return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
