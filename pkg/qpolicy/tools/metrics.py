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
Aggregation of evaluation reports and the FP32 parity criterion
"""

# Standard imports
from typing import List, Sequence

# Third party imports
import numpy as np
import pandas as pd

# qpolicy imports
from .handlers import EvalReport


def aggregate(reports: Sequence[EvalReport]) -> EvalReport:
    """
    Summary over seeds: mean and (population) standard deviation of the
    per-seed mean returns

    Parameters
    ----------
    reports: list of EvalReport
        One report per seed

    Returns
    -------
    report: EvalReport
        episodes is the total number of episodes, seed is None
    """
    reports = list(reports)
    if not reports:
        raise ValueError("Cannot aggregate an empty list of reports.")
    means = np.array([report.mean for report in reports], dtype=np.float64)
    return EvalReport(
        mean=float(np.mean(means)),
        std=float(np.std(means)),
        episodes=sum(report.episodes for report in reports),
        seed=None,
        returns=means,
    )


def aggregate_frame(df: pd.DataFrame, by: List[str]) -> pd.DataFrame:
    """
    Per-configuration summary of a result table holding one row per
    (configuration, seed)

    Returns
    -------
    summary: pd.DataFrame
        Columns by + ['mean_return', 'std_return', 'seeds']
    """
    valid = df[np.isfinite(df["mean_return"])]
    grouped = valid.groupby(by, sort=True)["mean_return"]
    summary = grouped.agg(
        mean_return="mean",
        std_return=lambda values: float(np.std(values.to_numpy())),
        seeds="count",
    )
    return summary.reset_index()


def parity_band(candidate: EvalReport, baseline: EvalReport) -> str:
    """
    Position of the candidate mean relative to the baseline band
    [mean - std, mean + std]

    Returns
    -------
    band: str
        'below', 'match' or 'above'
    """
    low = baseline.mean - baseline.std
    high = baseline.mean + baseline.std
    if candidate.mean < low:
        return "below"
    if candidate.mean > high:
        return "above"
    return "match"


def parity(candidate: EvalReport, baseline: EvalReport) -> bool:
    """
    Whether a candidate matches the baseline: its mean lies within one
    baseline standard deviation of the baseline mean, or above

    Parameters
    ----------
    candidate: EvalReport
    baseline: EvalReport

    Returns
    -------
    match: bool
    """
    return parity_band(candidate, baseline) != "below"
