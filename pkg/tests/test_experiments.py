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
Desk-scale experiments on the pendulum: SAC 'desk' preset, 5 seeds.
Each test trains for tens of minutes, run them with -m desk_scale.
"""

# Standard imports
import os

# Third party imports
import pytest

# qpolicy imports
from qpolicy import param
from qpolicy.config import make_quant_config
from qpolicy.select_pipeline import select_model
from qpolicy.sweep_pipeline import sweep_scopes
from qpolicy.tools.handlers import EvalReport
from qpolicy.tools.metrics import aggregate, aggregate_frame, parity
from qpolicy.train_pipeline import RunSpec, run_many

SEEDS = list(range(param.DEFAULT_SEEDS))

WORKERS = max(1, min(os.cpu_count() or 1, 2 * len(SEEDS)))


def summary_report(row) -> EvalReport:
    """Seed-aggregated report of an aggregate_frame row"""
    return EvalReport(
        mean=row.mean_return, std=row.std_return, episodes=int(row.seeds)
    )


@pytest.mark.functional_tests
@pytest.mark.slow
@pytest.mark.desk_scale
@pytest.mark.filterwarnings("ignore::DeprecationWarning")
def test_qat_core3_parity():
    """3-bit core, 64 neurons: FP32 parity"""
    quant_config = make_quant_config(None, bits_in=8, bits_core=3, bits_out=8)
    specs = [RunSpec("pendulum", "sac", seed) for seed in SEEDS] + [
        RunSpec("pendulum", "sac", seed, 64, quant_config) for seed in SEEDS
    ]
    results = run_many(specs, WORKERS)
    assert all(result.ok for result in results)
    fp32 = aggregate([r.report for r in results[: len(SEEDS)]])
    qat = aggregate([r.report for r in results[len(SEEDS) :]])
    assert parity(qat, fp32), (qat, fp32)


@pytest.mark.functional_tests
@pytest.mark.slow
@pytest.mark.desk_scale
@pytest.mark.filterwarnings("ignore::DeprecationWarning")
def test_output_scope_parity():
    """Quantizing only the output at 3 bits keeps FP32 parity"""
    report = sweep_scopes(
        "pendulum", "sac", [3], SEEDS, workers=WORKERS, scopes=["output"]
    )
    assert set(report.df["status"]) == {"ok"}
    summary = aggregate_frame(report.df, ["scope", "bits"])
    rows = {row.scope: summary_report(row) for row in summary.itertuples()}
    assert parity(rows["output"], rows["fp32"]), rows


@pytest.mark.functional_tests
@pytest.mark.slow
@pytest.mark.desk_scale
@pytest.mark.filterwarnings("ignore::DeprecationWarning")
def test_selection_deploys_small_core():
    """Selection ends at 4 core bits or fewer and its integer graphs keep
    FP32 parity"""
    result = select_model("pendulum", "sac", SEEDS, workers=WORKERS)
    assert result.b_core <= 4
    assert result.deployment_parity is True
    assert parity(result.deployed, result.baseline)
