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
Robustness of trained policies to Gaussian noise on normalized observations
"""

# Standard imports
import logging
import os
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

# Third party imports
from tqdm import tqdm

# qpolicy imports
from . import param
from .config import make_quant_config, make_train_config, save_config_file
from .core.agents import evaluate
from .core.integer_runtime import IntegerPolicy
from .core.lowering import lower
from .tools.handlers import SweepReport
from .tools.metrics import aggregate_frame
from .tools.model_io import read_json, read_policy
from .tools.run_dir import RunDirectory
from .train_pipeline import RunSpec, make_env, run_many, scale_header

NOISE_COLUMNS = ["model", "sigma", "seed", "mean_return", "std_return"]

# Offset between the evaluation seed and the noise seed of a model
NOISE_SEED_OFFSET = 7919


@dataclass(frozen=True)
class NoiseConfig:
    """Noise levels and evaluation scale"""

    sigmas: List[float] = field(
        default_factory=lambda: list(param.NOISE_SIGMAS)
    )
    episodes_per_model: int = 10
    models: List[str] = field(default_factory=lambda: ["fp32", "qat"])

    def __post_init__(self):
        if not self.sigmas:
            raise ValueError("NoiseConfig needs at least one sigma.")
        for sigma in self.sigmas:
            if sigma < 0:
                raise ValueError(
                    f"Noise sigmas should be nonnegative. Found {sigma}."
                )
        if self.episodes_per_model < 1:
            raise ValueError(
                f"'episodes_per_model' should be >= 1. "
                f"Found {self.episodes_per_model}."
            )


def noise_eval(
    models: Dict[str, Sequence],
    env,
    noise_config: NoiseConfig,
    seeds: Sequence[int],
) -> SweepReport:
    """
    Evaluate policies under observation noise at every sigma

    Parameters
    ----------
    models: dict
        Model name -> one policy per seed (PolicyNet or IntegerPolicy).
        A single policy is evaluated on every seed.
    env: Environment
        Environment
    noise_config: NoiseConfig
        Noise levels and episodes per evaluation
    seeds: list of int
        Evaluation seeds; episode resets are shared by every model and sigma

    Returns
    -------
    report: SweepReport
        One row per (model, sigma, seed)
    """
    seeds = list(seeds)
    report = SweepReport(
        "noise",
        NOISE_COLUMNS,
        header={
            "episodes_per_model": noise_config.episodes_per_model,
            "seeds": len(seeds),
        },
    )
    for name, policies in models.items():
        if not isinstance(policies, (list, tuple)):
            policies = [policies] * len(seeds)
        if len(policies) != len(seeds):
            raise ValueError(
                f"Model '{name}' has {len(policies)} policies for "
                f"{len(seeds)} seeds."
            )
        grid = [
            (sigma, pair)
            for sigma in noise_config.sigmas
            for pair in zip(seeds, policies)
        ]
        for sigma, (seed, policy) in tqdm(
            grid, leave=False, desc=f"Noise {name}"
        ):
            result = evaluate(
                policy,
                env,
                noise_config.episodes_per_model,
                seed,
                noise_sigma=sigma,
                noise_seed=seed + NOISE_SEED_OFFSET,
            )
            report.add(
                model=name,
                sigma=sigma,
                seed=seed,
                mean_return=result.mean,
                std_return=result.std,
            )
    return report


def train_models(
    env: str,
    algo: str,
    seeds: Sequence[int],
    width: int,
    bits_core: int,
    bits_in: int,
    preset: str = "desk",
    train_overrides: Optional[dict] = None,
    workers: int = 1,
) -> Dict[str, list]:
    """
    Train the FP32 baseline and the quantized policy on every seed

    Returns
    -------
    models: dict
        'fp32' (width 256) and 'qat' (selected width and bitwidths) policies
    """
    train_overrides = dict(train_overrides or {})
    quant_config = make_quant_config(
        None, bits_in=bits_in, bits_core=bits_core, bits_out=param.OUTPUT_BITS
    )
    specs = [
        RunSpec(env, algo, seed, 256, None, preset, train_overrides)
        for seed in seeds
    ] + [
        RunSpec(env, algo, seed, width, quant_config, preset, train_overrides)
        for seed in seeds
    ]
    results = run_many(specs, workers, desc="Noise models")
    failed = [r for r in results if not r.ok]
    if failed:
        raise RuntimeError(
            f"{len(failed)} training run(s) failed: {failed[0].error}"
        )
    nets = [r.net for r in results]
    return {"fp32": nets[: len(seeds)], "qat": nets[len(seeds) :]}


def load_selection(filepath: str) -> tuple:
    """
    Policies of a select run: its FP32 baselines, its selected QAT
    policies and their lowered integer graphs

    Parameters
    ----------
    filepath: str
        selection.json of a select run directory

    Returns
    -------
    doc: dict
        Selection document
    seeds: list of int
        Seeds with both a baseline and a selected policy
    models: dict
        'fp32', 'qat' and 'integer' policies, one per seed
    """
    doc = read_json(filepath)
    directory = os.path.dirname(os.path.abspath(filepath))
    missing = [key for key in ("models", "baselines") if key not in doc]
    if missing:
        raise ValueError(
            f"Selection file {filepath} has no {missing}. Rerun the select "
            f"command."
        )
    seeds = sorted(
        int(seed) for seed in set(doc["models"]) & set(doc["baselines"])
    )
    if not seeds:
        raise ValueError(f"Selection file {filepath} holds no policy.")

    def load(key: str) -> list:
        return [
            read_policy(os.path.join(directory, doc[key][str(seed)]))
            for seed in seeds
        ]

    qat = load("models")
    models = {
        "fp32": load("baselines"),
        "qat": qat,
        "integer": [
            IntegerPolicy(lower(net, seed=seed))
            for net, seed in zip(qat, seeds)
        ],
    }
    logging.info(
        f"Loaded the selection of {filepath}: width {doc['width']}, core "
        f"{doc['bits_core']} bits, input {doc['bits_in']} bits, "
        f"{len(seeds)} seed(s)"
    )
    return doc, seeds, models


def main(cfg: dict) -> RunDirectory:
    """
    Run the noise command

    Parameters
    ----------
    cfg: dict
        Effective configuration of the noise command
    """
    run = RunDirectory(cfg["out_dir"], "noise", cfg)
    save_config_file(run.path("config.json"), cfg)

    if cfg.get("selection"):
        doc, seeds, models = load_selection(cfg["selection"])
        for key in ("env", "algo", "preset", "train_overrides"):
            cfg[key] = doc.get(key, cfg[key])
    else:
        seeds = [cfg["seed"] + k for k in range(cfg["seeds"])]
        models = train_models(
            cfg["env"],
            cfg["algo"],
            seeds,
            cfg["width"],
            cfg.get("bits_core") or 3,
            cfg.get("bits_in") or param.FIXED_BITS,
            cfg["preset"],
            cfg.get("train_overrides", {}),
            cfg.get("workers", 1),
        )
    train_overrides = cfg.get("train_overrides", {})

    episodes = cfg.get("episodes")
    if episodes is None:
        episodes = make_train_config(
            cfg["algo"], cfg["preset"], **train_overrides
        ).eval_episodes
    noise_config = NoiseConfig(
        sigmas=list(cfg.get("sigmas", param.NOISE_SIGMAS)),
        episodes_per_model=episodes,
        models=list(cfg.get("models") or models),
    )
    unknown = [name for name in noise_config.models if name not in models]
    if unknown:
        raise ValueError(
            f"Unknown models {unknown}. They should be in {list(models)}."
        )

    report = noise_eval(
        {name: models[name] for name in noise_config.models},
        make_env(cfg["env"]),
        noise_config,
        seeds,
    )
    spec = RunSpec(
        cfg["env"],
        cfg["algo"],
        seeds[0],
        preset=cfg["preset"],
        train_overrides=train_overrides,
    )
    report.header.update(scale_header(spec, len(seeds)))
    report.header["episodes_per_model"] = noise_config.episodes_per_model
    report.to_csv(run.path("noise.csv"))
    run.add("noise.csv")

    summary = aggregate_frame(report.df, ["model", "sigma"])
    for row in summary.itertuples():
        logging.info(
            f"{row.model:>7} sigma={row.sigma:.1f}: "
            f"{row.mean_return:.2f} +/- {row.std_return:.2f}"
        )
    run.close()
    return run
