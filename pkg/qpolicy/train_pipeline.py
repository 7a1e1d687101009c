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
Training pipeline: one (configuration, seed) run and the train command.
"""

# Standard imports
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

# Third party imports
import numpy as np
import pandas as pd
from tqdm import tqdm

# qpolicy imports
from . import param
from .config import make_train_config, save_config_file
from .core.agents import CURVE_COLUMNS, evaluate, train
from .core.network import PolicyNet, QuantConfig
from .tools.handlers import EvalReport, write_csv
from .tools.run_dir import RunDirectory


@dataclass(frozen=True)
class RunSpec:
    """Everything that determines one training run"""

    env: str
    algo: str
    seed: int
    width: int = 256
    quant_config: Optional[QuantConfig] = None
    preset: str = "desk"
    train_overrides: dict = field(default_factory=dict)
    normalize_input: bool = True
    label: str = ""

    def describe(self) -> str:
        """Short human-readable description"""
        if self.quant_config is None:
            quant = "fp32"
        else:
            quant = (
                f"in{self.quant_config.bits_in}-"
                f"core{self.quant_config.bits_core}-"
                f"out{self.quant_config.bits_out}"
            )
        return f"{self.algo}/{self.env} h={self.width} {quant} seed={self.seed}"


@dataclass
class TrainResult:
    """Outcome of one training run"""

    spec: RunSpec
    net: Optional[PolicyNet]
    curve: Optional[pd.DataFrame]
    report: Optional[EvalReport]
    error: Optional[str] = None

    @property
    def ok(self) -> bool:
        """Whether the run completed"""
        return self.error is None


def make_env(name: str):
    """Environment of the registry"""
    if name not in param.ENVIRONMENTS:
        raise ValueError(
            f"Environment '{name}' unknown. It should be in "
            f"{list(param.ENVIRONMENTS.keys())}."
        )
    return param.ENVIRONMENTS[name]()


def make_policy(spec: RunSpec, env) -> PolicyNet:
    """Untrained policy of a run"""
    return PolicyNet(
        env.state_dim,
        env.action_dim,
        width=spec.width,
        quant_config=spec.quant_config,
        sigma_branch=spec.algo == "sac",
        normalize_input=spec.normalize_input,
        seed=spec.seed,
    )


def run_training(spec: RunSpec) -> TrainResult:
    """
    Train and evaluate one policy

    Parameters
    ----------
    spec: RunSpec
        Run description

    Returns
    -------
    result: TrainResult
    """
    env = make_env(spec.env)
    config = make_train_config(
        spec.algo, spec.preset, seed=spec.seed, **spec.train_overrides
    )
    net, curve = train(config, make_policy(spec, env), env)
    report = evaluate(net, env, config.eval_episodes, spec.seed)
    logging.info(
        f"{spec.describe()}: return {report.mean:.2f} +/- {report.std:.2f}"
    )
    return TrainResult(spec=spec, net=net, curve=curve, report=report)


def safe_run_training(spec: RunSpec) -> TrainResult:
    """run_training recording failures instead of raising"""
    try:
        return run_training(spec)
    except Exception as error:  # pylint: disable=broad-except
        logging.warning(f"{spec.describe()} failed: {error}")
        return TrainResult(
            spec=spec, net=None, curve=None, report=None, error=str(error)
        )


def run_many(
    specs: Sequence[RunSpec], workers: int = 1, desc: str = "Runs"
) -> List[TrainResult]:
    """
    Run independent trainings, in parallel processes when workers > 1.
    Results keep the order of specs.
    """
    specs = list(specs)
    if workers > 1 and len(specs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as executor:
            return list(
                tqdm(
                    executor.map(safe_run_training, specs),
                    total=len(specs),
                    leave=False,
                    desc=desc,
                )
            )
    return [
        safe_run_training(spec) for spec in tqdm(specs, leave=False, desc=desc)
    ]


def curves_frame(results: Sequence[TrainResult]) -> pd.DataFrame:
    """Concatenated learning curves of successful runs"""
    frames = [r.curve for r in results if r.ok and not r.curve.empty]
    if not frames:
        return pd.DataFrame(columns=CURVE_COLUMNS)
    return pd.concat(frames).reset_index(drop=True)


def scale_header(spec: RunSpec, seeds: int) -> dict:
    """Evaluation scale declared in CSV headers"""
    config = make_train_config(spec.algo, spec.preset, **spec.train_overrides)
    return {
        "env": spec.env,
        "algo": spec.algo,
        "preset": spec.preset,
        "total_steps": config.total_steps,
        "episodes_per_model": config.eval_episodes,
        "seeds": seeds,
    }


def quant_config_from_cfg(cfg: dict) -> Optional[QuantConfig]:
    """QuantConfig of the train command configuration (None for FP32)"""
    bits = [cfg.get(key) for key in ("bits_in", "bits_core", "bits_out")]
    if all(b is None for b in bits) and not cfg.get("quant_overrides"):
        return None
    values = {
        key: cfg[key]
        for key in ("bits_in", "bits_core", "bits_out")
        if cfg.get(key) is not None
    }
    values.update(cfg.get("quant_overrides", {}))
    return QuantConfig(**values)


def main(cfg: dict) -> RunDirectory:
    """
    Train one policy per seed and write model, learning curve and
    evaluation

    Parameters
    ----------
    cfg: dict
        Effective configuration of the train command
    """
    run = RunDirectory(cfg["out_dir"], "train", cfg)
    save_config_file(run.path("config.json"), cfg)
    seeds = [cfg["seed"] + k for k in range(cfg["seeds"])]
    specs = [
        RunSpec(
            env=cfg["env"],
            algo=cfg["algo"],
            seed=seed,
            width=cfg["width"],
            quant_config=quant_config_from_cfg(cfg),
            preset=cfg["preset"],
            train_overrides=cfg.get("train_overrides", {}),
            normalize_input=not cfg.get("no_input_norm", False),
        )
        for seed in seeds
    ]
    results = run_many(specs, cfg.get("workers", 1), desc="Train")
    failed = [r for r in results if not r.ok]
    if failed:
        raise RuntimeError(
            f"{len(failed)} training run(s) failed: {failed[0].error}"
        )

    for result in results:
        filename = f"model_{result.spec.seed}.json"
        if len(results) == 1:
            filename = "model.json"
        result.net.serialize(run.path(filename))
        run.add(filename)

    header = scale_header(specs[0], len(seeds))
    write_csv(run.path("curve.csv"), curves_frame(results), "curve", header)
    run.add("curve.csv")

    evaluation = pd.DataFrame(
        [[r.spec.seed, r.report.mean, r.report.std] for r in results],
        columns=["seed", "mean_return", "std_return"],
    )
    write_csv(run.path("evaluation.csv"), evaluation, "evaluation", header)
    run.add("evaluation.csv")
    logging.info(
        f"Mean return over {len(seeds)} seed(s): "
        f"{float(np.mean(evaluation['mean_return'])):.2f}"
    )
    run.close()
    return run
