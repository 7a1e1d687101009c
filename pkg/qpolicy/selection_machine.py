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
Class associated to the qpolicy model-selection state machine
"""

# Standard imports
import logging
from typing import Callable, List, Optional, Sequence, Tuple

# Third party imports
from transitions import Machine, MachineError

# qpolicy imports
from . import param
from .tools.handlers import EvalReport
from .tools.metrics import parity, parity_band

# Steps of a complete selection, in order
SELECTION_STEPS = [
    "train_baseline",
    "select_core",
    "select_width",
    "select_input",
    "check_deployment",
]

# (width, core bits, input bits); core bits None is the FP32 baseline
Candidate = Tuple[int, Optional[int], int]


class SelectionMachine(Machine):
    """
    Staged model selection: smallest core bitwidth, then smallest hidden
    width, then smallest input bitwidth keeping parity with the FP32
    baseline, then a parity re-check of the lowered integer policies.
    """

    def __init__(
        self,
        evaluator: Callable[[str, List[Candidate]], List[Optional[EvalReport]]],
        deployer: Callable[[Candidate], EvalReport],
        widths: Sequence[int] = tuple(param.WIDTHS),
        core_bits: Sequence[int] = tuple(param.CORE_BITS),
        input_bits: Sequence[int] = tuple(param.INPUT_BITS),
        early_stop: bool = False,
    ) -> None:
        """
        Init a state machine for model selection

        Parameters
        ----------
        evaluator: callable
            evaluator(stage, candidates) returns the seed-aggregated report
            of every candidate (None when all its runs failed)
        deployer: callable
            deployer(candidate) returns the seed-aggregated report of the
            lowered integer policies of a candidate
        widths, core_bits, input_bits: list of int
            Candidate values, from the largest to the smallest
        early_stop: bool (default=False)
            Stop a stage at the first candidate without parity instead of
            evaluating all of them
        """
        self.evaluator = evaluator
        self.deployer = deployer
        self.widths = sorted(widths, reverse=True)
        self.core_bits = sorted(core_bits, reverse=True)
        self.input_bits = sorted(input_bits, reverse=True)
        self.early_stop = early_stop

        self.baseline: Optional[EvalReport] = None
        self.width = self.widths[0]
        self.b_core = self.core_bits[0]
        self.b_in = self.input_bits[0]
        self.no_reduction = {"core": False, "width": False, "input": False}
        self.deployed: Optional[EvalReport] = None
        self.deployment_parity: Optional[bool] = None

        # Available states
        self.states_ = [
            "initial",
            "baselined",
            "core_selected",
            "width_selected",
            "input_selected",
            "deployed",
        ]

        # Available transitions
        self.transitions_ = [
            {
                "trigger": "train_baseline",
                "source": "initial",
                "dest": "baselined",
                "after": "train_baseline_run",
            },
            {
                "trigger": "select_core",
                "source": "baselined",
                "dest": "core_selected",
                "after": "select_core_run",
            },
            {
                "trigger": "select_width",
                "source": "core_selected",
                "dest": "width_selected",
                "after": "select_width_run",
            },
            {
                "trigger": "select_input",
                "source": "width_selected",
                "dest": "input_selected",
                "after": "select_input_run",
            },
            {
                "trigger": "check_deployment",
                "source": "input_selected",
                "dest": "deployed",
                "after": "check_deployment_run",
            },
        ]

        # Initialize a machine model
        Machine.__init__(
            self,
            states=self.states_,
            initial="initial",
            transitions=self.transitions_,
            auto_transitions=False,
        )

    def run(self, step: str) -> None:
        """
        Run a selection step by triggering the corresponding transition

        Parameters
        ----------
        step: str
            Name of the step to trigger
        """
        try:
            self.trigger(step)

        except (MachineError, AttributeError):
            logging.error(
                f"A problem occurs during model selection running '{step}' "
                f"step from state '{self.state}'. Be sure of your sequencing."
            )
            raise

    def run_all(self) -> None:
        """Run every selection step"""
        for step in SELECTION_STEPS:
            logging.info(f"Selection step: {step}")
            self.run(step)

    def _smallest_with_parity(
        self, stage: str, values: List[int], make: Callable[[int], Candidate]
    ) -> int:
        """
        Smallest value whose candidate keeps parity with the baseline.
        Falls back to the largest value with the no-reduction flag.
        """
        if self.early_stop:
            reports = []
            for value in values:
                report = self.evaluator(stage, [make(value)])[0]
                reports.append(report)
                if report is None or not parity(report, self.baseline):
                    break
        else:
            reports = self.evaluator(stage, [make(value) for value in values])

        chosen = None
        for value, report in zip(values, reports):
            if report is None:
                logging.info(f"{stage} {value}: no successful run")
                continue
            band = parity_band(report, self.baseline)
            logging.info(
                f"{stage} {value}: {report.mean:.2f} +/- {report.std:.2f} "
                f"({band})"
            )
            if band != "below":
                chosen = value if chosen is None else min(chosen, value)

        if chosen is None or chosen == values[0]:
            if chosen is None:
                logging.warning(
                    f"No {stage} candidate reaches parity. Keeping "
                    f"{values[0]}."
                )
            self.no_reduction[stage] = True
            return values[0]
        return chosen

    def train_baseline_run(self) -> None:
        """Train and evaluate the FP32 baseline at the largest width"""
        baseline = (self.widths[0], None, self.input_bits[0])
        self.baseline = self.evaluator("baseline", [baseline])[0]
        if self.baseline is None:
            raise RuntimeError("Every FP32 baseline run failed.")
        logging.info(
            f"FP32 baseline: {self.baseline.mean:.2f} +/- "
            f"{self.baseline.std:.2f}"
        )

    def select_core_run(self) -> None:
        """Smallest core bitwidth with input and output at 8 bits"""
        self.b_core = self._smallest_with_parity(
            "core",
            self.core_bits,
            lambda bits: (self.widths[0], bits, self.input_bits[0]),
        )
        logging.info(f"Selected core bitwidth: {self.b_core}")

    def select_width_run(self) -> None:
        """Smallest hidden width at the selected core bitwidth"""
        self.width = self._smallest_with_parity(
            "width",
            self.widths,
            lambda width: (width, self.b_core, self.input_bits[0]),
        )
        logging.info(f"Selected hidden width: {self.width}")

    def select_input_run(self) -> None:
        """Smallest input bitwidth at the selected core bitwidth and width"""
        self.b_in = self._smallest_with_parity(
            "input",
            self.input_bits,
            lambda bits: (self.width, self.b_core, bits),
        )
        logging.info(f"Selected input bitwidth: {self.b_in}")

    def check_deployment_run(self) -> None:
        """Parity of the lowered integer policies of the selection"""
        self.deployed = self.deployer((self.width, self.b_core, self.b_in))
        self.deployment_parity = parity(self.deployed, self.baseline)
        log = logging.info if self.deployment_parity else logging.warning
        log(
            f"Integer deployment: {self.deployed.mean:.2f} +/- "
            f"{self.deployed.std:.2f}, parity {self.deployment_parity}"
        )
