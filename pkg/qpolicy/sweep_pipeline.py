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
Bitwidth-sensitivity sweep over the quantization scopes.
"""

# Standard imports
import logging
from dataclasses import dataclass
from typing import Optional, Sequence

# Third party imports
import numpy as np

# qpolicy imports
from . import param
from .config import check_bits, make_quant_config, save_config_file
from .tools.handlers import SweepReport
from .tools.metrics import aggregate_frame
from .tools.run_dir import RunDirectory
from .train_pipeline import RunSpec, run_many, scale_header

SWEEP_COLUMNS = ["scope", "bits", "seed", "mean_return", "std_return", "status"]

# bits column value of the unquantized baseline rows
FP32_BITS = 32


@dataclass(frozen=True)
class ScopeConfig:
    """One cell of the sweep: a scope swept at some bitwidth"""

    scope: str
    swept_bits: int
    fixed_bits: int = param.FIXED_BITS

    def __post_init__(self):
        if self.scope not in param.SCOPES:
            raise ValueError(
                f"Scope '{self.scope}' unknown. It should be in "
                f"{param.SCOPES}."
            )

    def quant_config(self):
        """QuantConfig of the cell"""
        return make_quant_config(self.scope, self.swept_bits)


def sweep_scopes(
    env: str,
    algo: str,
    bits_list: Sequence[int],
    seeds: Sequence[int],
    preset: str = "desk",
    width: int = 256,
    train_overrides: Optional[dict] = None,
    workers: int = 1,
    scopes: Sequence[str] = tuple(param.SCOPES),
) -> SweepReport:
    """
    Train and evaluate the FP32 baseline and every (scope, bits) cell for
    every seed

    Parameters
    ----------
    env: str
        Environment name
    algo: str
        'sac' or 'ddpg'
    bits_list: list of int
        Swept bitwidths, in [2, 8]
    seeds: list of int
        Training seeds
    preset: str (default='desk')
        Training preset
    width: int (default=256)
        Hidden width
    train_overrides: dict (default=None)
        TrainConfig values replacing the preset ones
    workers: int (default=1)
        Parallel training processes
    scopes: list of str (default=all scopes)
        Swept scopes

    Returns
    -------
    report: SweepReport
        One row per (scope, bits, seed), baseline rows with scope 'fp32'.
        Failed runs have status 'failed' and NaN returns.
    """
    bits_list = check_bits(list(bits_list))
    seeds = list(seeds)
    train_overrides = dict(train_overrides or {})

    cells = [(None, FP32_BITS)] + [
        (ScopeConfig(scope, bits), bits)
        for scope in scopes
        for bits in bits_list
    ]
    specs = []
    for cell, _ in cells:
        for seed in seeds:
            specs.append(
                RunSpec(
                    env=env,
                    algo=algo,
                    seed=seed,
                    width=width,
                    quant_config=None if cell is None else cell.quant_config(),
                    preset=preset,
                    train_overrides=train_overrides,
                    label="fp32" if cell is None else cell.scope,
                )
            )
    logging.info(
        f"Sweep of {len(cells)} configurations x {len(seeds)} seeds "
        f"({len(specs)} trainings)"
    )

    results = run_many(specs, workers, desc="Sweep")

    report = SweepReport(
        "sweep", SWEEP_COLUMNS, header=scale_header(specs[0], len(seeds))
    )
    for index, result in enumerate(results):
        bits = cells[index // len(seeds)][1]
        report.add(
            scope=result.spec.label,
            bits=bits,
            seed=result.spec.seed,
            mean_return=result.report.mean if result.ok else np.nan,
            std_return=result.report.std if result.ok else np.nan,
            status="ok" if result.ok else "failed",
        )
    failed = sum(not r.ok for r in results)
    if failed:
        logging.warning(f"{failed} sweep run(s) failed")
    return report


def main(cfg: dict) -> RunDirectory:
    """
    Run the sweep command

    Parameters
    ----------
    cfg: dict
        Effective configuration of the sweep command
    """
    run = RunDirectory(cfg["out_dir"], "sweep", cfg)
    save_config_file(run.path("config.json"), cfg)

    report = sweep_scopes(
        cfg["env"],
        cfg["algo"],
        cfg["bits"],
        [cfg["seed"] + k for k in range(cfg["seeds"])],
        preset=cfg["preset"],
        width=cfg["width"],
        train_overrides=cfg.get("train_overrides", {}),
        workers=cfg.get("workers", 1),
        scopes=cfg.get("scopes", param.SCOPES),
    )
    report.to_csv(run.path("sweep.csv"))
    run.add("sweep.csv")

    summary = aggregate_frame(report.df, ["scope", "bits"])
    for row in summary.itertuples():
        logging.info(
            f"{row.scope:>6} {row.bits:>2} bits: "
            f"{row.mean_return:.2f} +/- {row.std_return:.2f}"
        )
    run.close()
    return run
