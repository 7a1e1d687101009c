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
Model-selection pipeline: staged search of the smallest quantized policy
matching the FP32 baseline, then integer deployment check.
"""

# Standard imports
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

# Third party imports
import numpy as np
from tqdm import tqdm

# qpolicy imports
from . import param
from .config import make_quant_config, make_train_config, save_config_file
from .core.agents import evaluate
from .core.integer_runtime import IntegerPolicy
from .core.lowering import lower
from .selection_machine import Candidate, SelectionMachine
from .tools.handlers import EvalReport, SweepReport, write_csv
from .tools.metrics import aggregate
from .tools.model_io import write_json
from .tools.run_dir import RunDirectory
from .train_pipeline import (
    RunSpec,
    TrainResult,
    curves_frame,
    make_env,
    run_many,
    scale_header,
)

# FP32 candidate trained first by the selection machine
BASELINE: Candidate = (param.WIDTHS[0], None, param.INPUT_BITS[0])

SELECTION_COLUMNS = [
    "stage",
    "width",
    "bits_core",
    "bits_in",
    "seed",
    "mean_return",
    "std_return",
    "status",
]


@dataclass
class SelectionResult:
    """Outcome of the staged selection"""

    width: int
    b_core: int
    b_in: int
    b_out: int = param.OUTPUT_BITS
    no_reduction: Dict[str, bool] = field(default_factory=dict)
    baseline: Optional[EvalReport] = None
    selected: Optional[EvalReport] = None
    deployed: Optional[EvalReport] = None
    deployment_parity: Optional[bool] = None

    def to_dict(self) -> dict:
        """Plain dictionary (JSON compatible)"""

        def report(value):
            return None if value is None else value.to_dict()

        return {
            "width": self.width,
            "bits_core": self.b_core,
            "bits_in": self.b_in,
            "bits_out": self.b_out,
            "no_reduction": dict(sorted(self.no_reduction.items())),
            "baseline": report(self.baseline),
            "selected": report(self.selected),
            "deployed": report(self.deployed),
            "deployment_parity": self.deployment_parity,
        }


class CandidateRunner:
    """
    Trains candidates on every seed, once. Results are cached by
    (width, core bits, input bits).
    """

    def __init__(
        self,
        env: str,
        algo: str,
        seeds: Sequence[int],
        preset: str = "desk",
        train_overrides: Optional[dict] = None,
        workers: int = 1,
    ) -> None:
        self.env = env
        self.algo = algo
        self.seeds = list(seeds)
        self.preset = preset
        self.train_overrides = dict(train_overrides or {})
        self.workers = workers
        self.results: Dict[Candidate, List[TrainResult]] = {}
        self.report = SweepReport("selection", SELECTION_COLUMNS)

    def spec(self, candidate: Candidate, seed: int) -> RunSpec:
        """RunSpec of a candidate on one seed"""
        width, b_core, b_in = candidate
        quant_config = None
        if b_core is not None:
            quant_config = make_quant_config(
                None,
                bits_in=b_in,
                bits_core=b_core,
                bits_out=param.OUTPUT_BITS,
            )
        return RunSpec(
            env=self.env,
            algo=self.algo,
            seed=seed,
            width=width,
            quant_config=quant_config,
            preset=self.preset,
            train_overrides=self.train_overrides,
            label="fp32" if b_core is None else "qat",
        )

    def train(self, stage: str, candidates: List[Candidate]) -> None:
        """Train the candidates not trained yet"""
        missing = []
        for candidate in candidates:
            if candidate not in self.results and candidate not in missing:
                missing.append(candidate)
        if not missing:
            return
        specs = [self.spec(c, seed) for c in missing for seed in self.seeds]
        results = run_many(specs, self.workers, desc=f"Selection {stage}")
        for index, candidate in enumerate(missing):
            chunk = results[
                index * len(self.seeds) : (index + 1) * len(self.seeds)
            ]
            self.results[candidate] = chunk
            width, b_core, b_in = candidate
            for result in chunk:
                self.report.add(
                    stage=stage,
                    width=width,
                    bits_core=32 if b_core is None else b_core,
                    bits_in=32 if b_core is None else b_in,
                    seed=result.spec.seed,
                    mean_return=result.report.mean if result.ok else np.nan,
                    std_return=result.report.std if result.ok else np.nan,
                    status="ok" if result.ok else "failed",
                )

    def __call__(
        self, stage: str, candidates: List[Candidate]
    ) -> List[Optional[EvalReport]]:
        """Seed-aggregated report of every candidate"""
        self.train(stage, candidates)
        reports = []
        for candidate in candidates:
            ok = [r.report for r in self.results[candidate] if r.ok]
            reports.append(aggregate(ok) if ok else None)
        return reports

    def deploy(self, candidate: Candidate) -> EvalReport:
        """
        Lower every trained policy of a candidate and evaluate the integer
        graphs with the training evaluation protocol
        """
        env = make_env(self.env)
        episodes = make_train_config(
            self.algo, self.preset, **self.train_overrides
        ).eval_episodes
        reports = []
        for result in tqdm(
            self.results[candidate], leave=False, desc="Deployment"
        ):
            if not result.ok:
                continue
            graph = lower(result.net, seed=result.spec.seed)
            reports.append(
                evaluate(IntegerPolicy(graph), env, episodes, result.spec.seed)
            )
        if not reports:
            raise RuntimeError(f"No trained policy to deploy for {candidate}.")
        return aggregate(reports)


def select_model(
    env: str,
    algo: str,
    seeds: Sequence[int],
    preset: str = "desk",
    train_overrides: Optional[dict] = None,
    workers: int = 1,
    early_stop: bool = False,
    runner: Optional[CandidateRunner] = None,
) -> SelectionResult:
    """
    Three-stage selection: smallest core bitwidth, smallest hidden width,
    smallest input bitwidth, each keeping parity with the FP32 baseline

    Parameters
    ----------
    env: str
        Environment name
    algo: str
        'sac' or 'ddpg'
    seeds: list of int
        Training seeds of every candidate
    preset: str (default='desk')
        Training preset
    train_overrides: dict (default=None)
        TrainConfig values replacing the preset ones
    workers: int (default=1)
        Parallel training processes
    early_stop: bool (default=False)
        Stop each stage at the first candidate without parity
    runner: CandidateRunner (default=None)
        Runner to use (keeps the trained candidates for the caller)

    Returns
    -------
    result: SelectionResult
    """
    if runner is None:
        runner = CandidateRunner(
            env, algo, seeds, preset, train_overrides, workers
        )

    # To avoid having a logger INFO for each state machine step
    logging.getLogger("transitions").setLevel(logging.WARNING)

    machine = SelectionMachine(runner, runner.deploy, early_stop=early_stop)
    machine.run_all()

    selected = runner("input", [(machine.width, machine.b_core, machine.b_in)])
    return SelectionResult(
        width=machine.width,
        b_core=machine.b_core,
        b_in=machine.b_in,
        no_reduction=dict(machine.no_reduction),
        baseline=machine.baseline,
        selected=selected[0],
        deployed=machine.deployed,
        deployment_parity=machine.deployment_parity,
    )


def main(cfg: dict) -> RunDirectory:
    """
    Run the select command

    Parameters
    ----------
    cfg: dict
        Effective configuration of the select command
    """
    run = RunDirectory(cfg["out_dir"], "select", cfg)
    save_config_file(run.path("config.json"), cfg)
    seeds = [cfg["seed"] + k for k in range(cfg["seeds"])]

    runner = CandidateRunner(
        cfg["env"],
        cfg["algo"],
        seeds,
        cfg["preset"],
        cfg.get("train_overrides", {}),
        cfg.get("workers", 1),
    )
    result = select_model(
        cfg["env"],
        cfg["algo"],
        seeds,
        early_stop=cfg.get("early_stop", False),
        runner=runner,
    )

    header = scale_header(runner.spec(BASELINE, seeds[0]), len(seeds))
    runner.report.header = header
    runner.report.to_csv(run.path("selection.csv"))
    run.add("selection.csv")

    chosen = runner.results[(result.width, result.b_core, result.b_in)]
    write_csv(run.path("curve.csv"), curves_frame(chosen), "curve", header)
    run.add("curve.csv")

    doc = result.to_dict()
    doc["env"] = cfg["env"]
    doc["algo"] = cfg["algo"]
    doc["preset"] = cfg["preset"]
    doc["train_overrides"] = dict(cfg.get("train_overrides", {}))
    doc["seeds"] = seeds
    for key, prefix, results in (
        ("models", "model", chosen),
        ("baselines", "baseline", runner.results[BASELINE]),
    ):
        doc[key] = {}
        for train_result in results:
            if train_result.ok:
                filename = f"{prefix}_{train_result.spec.seed}.json"
                train_result.net.serialize(run.path(filename))
                run.add(filename)
                doc[key][str(train_result.spec.seed)] = filename
    write_json(run.path("selection.json"), doc)
    run.add("selection.json")

    logging.info(
        f"Selected configuration: width {result.width}, core "
        f"{result.b_core} bits, input {result.b_in} bits"
    )
    run.close()
    return run
