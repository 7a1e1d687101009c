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
Define classes for handling common result objects
"""

# Standard imports
import os
from dataclasses import dataclass, field
from typing import List, Optional, TextIO, Union

# Third party imports
import numpy as np
import pandas as pd

# Schema names and versions of every CSV written by qpolicy
CSV_SCHEMAS = {
    "curve": ("qpolicy.curve", 1),
    "evaluation": ("qpolicy.evaluation", 1),
    "sweep": ("qpolicy.sweep", 1),
    "noise": ("qpolicy.noise", 1),
    "selection": ("qpolicy.selection", 1),
    "cost": ("qpolicy.cost", 1),
    "actions": ("qpolicy.actions", 1),
    "trace": ("qpolicy.trace", 1),
    "fold": ("qpolicy.fold", 1),
}


@dataclass
class EvalReport:
    """Undiscounted returns of deterministic rollouts"""

    mean: float
    std: float
    episodes: int
    seed: Optional[int] = None
    returns: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        if self.episodes < 1:
            raise ValueError(
                f"An evaluation report needs at least one episode. "
                f"Found {self.episodes}."
            )

    @classmethod
    def from_returns(
        cls, returns: np.ndarray, seed: Optional[int] = None
    ) -> "EvalReport":
        """Report of a set of episode returns"""
        returns = np.asarray(returns, dtype=np.float64)
        return cls(
            mean=float(np.mean(returns)),
            std=float(np.std(returns)),
            episodes=int(returns.size),
            seed=seed,
            returns=returns,
        )

    def to_dict(self) -> dict:
        """Plain dictionary (JSON compatible)"""
        return {
            "mean": self.mean,
            "std": self.std,
            "episodes": self.episodes,
            "seed": self.seed,
        }


class SweepReport:
    """
    Tabular results of an experiment, one row per (configuration, seed).

    Rows hold at least 'seed', 'mean_return' and 'std_return'; the other
    columns describe the configuration (scope and bits, sigma, ...).
    """

    def __init__(
        self,
        kind: str,
        columns: List[str],
        header: Optional[dict] = None,
    ) -> None:
        if kind not in CSV_SCHEMAS:
            raise ValueError(
                f"Unknown report kind '{kind}'. It should be in "
                f"{list(CSV_SCHEMAS.keys())}."
            )
        self.kind = kind
        self.columns = list(columns)
        self.header = dict(header or {})
        self.rows: List[dict] = []

    def add(self, **row) -> None:
        """Append one row"""
        missing = [c for c in self.columns if c not in row]
        if missing:
            raise ValueError(f"Report row is missing columns {missing}.")
        self.rows.append({c: row[c] for c in self.columns})

    def __len__(self) -> int:
        return len(self.rows)

    @property
    def df(self) -> pd.DataFrame:
        """Rows as a pandas DataFrame"""
        return pd.DataFrame.from_records(self.rows, columns=self.columns)

    def select(self, **conditions) -> pd.DataFrame:
        """Rows matching every column == value condition"""
        df = self.df
        mask = np.ones(len(df), dtype=bool)
        for column, value in conditions.items():
            mask &= (df[column] == value).to_numpy()
        return df[mask]

    def to_csv(self, filepath: str) -> None:
        """Write the report with its schema header"""
        write_csv(filepath, self.df, self.kind, self.header)


def write_csv(
    filepath: Union[str, os.PathLike, TextIO],
    df: pd.DataFrame,
    kind: str,
    header: Optional[dict] = None,
) -> None:
    """
    Write a DataFrame as CSV preceded by '#' header lines declaring the
    schema and the evaluation scale. Output is byte-stable for identical
    inputs. filepath may also be an open text stream.
    """
    schema, version = CSV_SCHEMAS[kind]
    lines = [f"# schema={schema} version={version}"]
    for key in sorted(header or {}):
        lines.append(f"# {key}={header[key]}")

    def dump(stream):
        stream.write("\n".join(lines) + "\n")
        df.to_csv(
            stream, index=False, float_format="%.17g", lineterminator="\n"
        )

    if hasattr(filepath, "write"):
        dump(filepath)
        return
    with open(filepath, "w", encoding="utf-8", newline="") as file_:
        dump(file_)


def read_csv(filepath: Union[str, os.PathLike]) -> pd.DataFrame:
    """Read a CSV written by write_csv"""
    return pd.read_csv(filepath, comment="#")
