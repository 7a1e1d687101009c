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
Main configuration module of qpolicy tool.
"""

# Standard imports
import json
import os
from dataclasses import fields
from typing import Optional

# qpolicy imports
from . import param
from .core.agents import TrainConfig
from .core.network import QuantConfig

# Configuration keys holding file paths
PATH_KEYS = [
    "model",
    "graph",
    "obs",
    "budget",
    "baseline",
    "selection",
    "out_dir",
]


def make_relative_path_absolute(path, directory):
    """
    If path is a valid relative path with respect to directory,
    returns it as an absolute path

    :param path: The relative path
    :type path: string
    :param directory: The directory path should be relative to
    :type directory: string
    :returns: os.path.join(directory,path)
        if path is a valid relative path form directory, else path
    :rtype: string
    """
    out = path
    if not os.path.isabs(path):
        abspath = os.path.join(directory, path)
        if os.path.exists(abspath):
            out = abspath
    return out


def read_config(cfg_path: str) -> dict:
    """
    Read a JSON configuration file, making its relative paths absolute

    Parameters
    ----------
    cfg_path: str
        Path to the JSON configuration file

    Return
    ------
    cfg: dict
        Configuration dictionary
    """
    if not isinstance(cfg_path, str):
        raise TypeError(
            f"Configuration path is invalid. It should be a string but got "
            f"'{type(cfg_path)}'."
        )

    if os.path.basename(cfg_path).split(".")[-1] != "json":
        raise ValueError(
            f"Configuration path should be a JSON file with extension '.json'."
            f" Found '{os.path.basename(cfg_path).split('.')[-1]}'."
        )

    with open(cfg_path, "r", encoding="utf-8") as fstream:
        config = json.load(fstream)

    if not isinstance(config, dict):
        raise TypeError(
            f"Configuration file should hold a JSON object. "
            f"Found '{type(config)}'."
        )

    config_dir = os.path.abspath(os.path.dirname(cfg_path))
    for key in PATH_KEYS:
        if isinstance(config.get(key), str):
            config[key] = make_relative_path_absolute(config[key], config_dir)

    return config


def check_general_items(cfg: dict) -> dict:
    """
    Check the items shared by every command

    Parameters
    ----------
    cfg: dict
        Configuration dictionary

    Returns
    -------
    cfg: dict
        Configuration dictionary updated
    """
    if "env" in cfg and cfg["env"] not in param.ENVIRONMENTS:
        raise ValueError(
            f"Environment '{cfg['env']}' unknown. It should be in "
            f"{list(param.ENVIRONMENTS.keys())}."
        )

    if "algo" in cfg and cfg["algo"] not in param.ALGORITHMS:
        raise ValueError(
            f"Algorithm '{cfg['algo']}' unknown. It should be in "
            f"{param.ALGORITHMS}."
        )

    if "preset" in cfg and cfg["preset"] not in param.TRAIN_PRESETS:
        raise ValueError(
            f"Preset '{cfg['preset']}' unknown. It should be in "
            f"{list(param.TRAIN_PRESETS.keys())}."
        )

    for key in ("seed", "seeds", "episodes", "width"):
        if key in cfg and cfg[key] is not None:
            if isinstance(cfg[key], bool) or not isinstance(cfg[key], int):
                raise TypeError(
                    f"'{key}' should be an integer. Found '{type(cfg[key])}'."
                )
            if key != "seed" and cfg[key] < 1:
                raise ValueError(f"'{key}' should be >= 1. Found {cfg[key]}.")

    return cfg


def check_bits(bits_list, allowed=range(2, 9), name="bits") -> list:
    """Check a list of bitwidths"""
    if not isinstance(bits_list, (list, tuple)) or not bits_list:
        raise TypeError(f"'{name}' should be a non-empty list of integers.")
    for bits in bits_list:
        if isinstance(bits, bool) or not isinstance(bits, int):
            raise TypeError(
                f"'{name}' should hold integers. Found '{type(bits)}'."
            )
        if bits not in allowed:
            raise ValueError(
                f"'{name}' values should be in "
                f"[{min(allowed)}, {max(allowed)}]. Found {bits}."
            )
    return list(bits_list)


def check_train_config(cfg: dict) -> dict:
    """
    Check TrainConfig overrides

    Parameters
    ----------
    cfg: dict
        Field values

    Returns
    -------
    cfg: dict
        Unchanged dictionary
    """
    names = [f.name for f in fields(TrainConfig)]
    unknown = sorted(set(cfg) - set(names))
    if unknown:
        raise ValueError(
            f"Unknown training parameters {unknown}. They should be in "
            f"{names}."
        )
    return cfg


def check_quant_config(cfg: dict) -> dict:
    """
    Check QuantConfig overrides

    Parameters
    ----------
    cfg: dict
        Field values

    Returns
    -------
    cfg: dict
        Unchanged dictionary
    """
    names = [f.name for f in fields(QuantConfig)]
    unknown = sorted(set(cfg) - set(names))
    if unknown:
        raise ValueError(
            f"Unknown quantization parameters {unknown}. They should be in "
            f"{names}."
        )
    return cfg


def make_train_config(
    algorithm: str, preset: str = "desk", **overrides
) -> TrainConfig:
    """
    TrainConfig of a preset with optional overrides

    Parameters
    ----------
    algorithm: str
        'sac' or 'ddpg'
    preset: str (default='desk')
        Name in param.TRAIN_PRESETS
    overrides:
        Field values replacing the preset ones

    Returns
    -------
    config: TrainConfig
    """
    check_general_items({"algo": algorithm, "preset": preset})
    values = dict(param.TRAIN_PRESETS[preset][algorithm])
    values.update(check_train_config(overrides))
    return TrainConfig(**values)


def make_quant_config(
    scope: Optional[str] = None,
    bits: Optional[int] = None,
    **overrides,
) -> Optional[QuantConfig]:
    """
    QuantConfig of a quantization scope

    Parameters
    ----------
    scope: str (default=None)
        One of param.SCOPES, or None/'fp32' for an unquantized policy
    bits: int (default=None)
        Bitwidth of the swept quantizers (others at param.FIXED_BITS)
    overrides:
        Other QuantConfig fields (bits_* fields included)

    Returns
    -------
    config: QuantConfig or None
    """
    if scope in (None, "fp32"):
        if overrides:
            return QuantConfig(**check_quant_config(overrides))
        return None
    if scope not in param.SCOPES:
        raise ValueError(
            f"Scope '{scope}' unknown. It should be in {param.SCOPES}."
        )
    if bits is None:
        raise ValueError(f"Scope '{scope}' needs a bitwidth.")
    values = {
        "bits_in": param.FIXED_BITS,
        "bits_core": param.FIXED_BITS,
        "bits_out": param.FIXED_BITS,
    }
    if scope in ("all", "input"):
        values["bits_in"] = bits
    if scope in ("all", "output"):
        values["bits_out"] = bits
    if scope in ("all", "core"):
        values["bits_core"] = bits
    values.update(check_quant_config(overrides))
    return QuantConfig(**values)


def save_config_file(config_file: str, config: dict):
    """
    Save a json configuration file

    :param config_file: path to a json file
    :type config_file: string
    :param config: configuration json dictionary
    :type config: Dict[str, Any]
    """
    with open(config_file, "w", encoding="utf-8") as file_:
        json.dump(config, file_, indent=2, sort_keys=True)
        file_.write("\n")
