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
Dataflow cost model of an integer policy.

Each layer is a matrix-vector unit folded by PE (rows processed in
parallel) and SIMD (columns consumed per cycle). Dimensions are padded to
multiples of 32. A layer needs (padded_out / pe) * (padded_in / simd)
cycles per inference; layers run as a pipeline whose initiation interval
is the slowest layer.
"""
# pylint: disable=too-many-arguments,too-many-locals

# Standard imports
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple, Union

# Third party imports
import numpy as np
import pandas as pd

# qpolicy imports
from .lowering import IntegerGraph

PAD_MULTIPLE = 32
DEFAULT_CLOCK_HZ = 1e8

# Stream handoff cycles per layer added to the latency
PIPELINE_KAPPA = 2

BUDGET_KEYS = ["mac_units", "threshold_words", "weight_bits", "threshold_bits"]


class InfeasibleFoldingError(ValueError):
    """No folding reaches the target throughput within the budget"""

    def __init__(self, message: str, target: float, best_throughput: float):
        super().__init__(message)
        self.target = target
        self.best_throughput = best_throughput


def pad_dim(dim: int, multiple: int = PAD_MULTIPLE) -> int:
    """Round a dimension up to the next multiple (at least one multiple)"""
    if dim < 1:
        raise ValueError(f"Dimensions should be >= 1. Found {dim}.")
    return int(math.ceil(dim / multiple) * multiple)


@dataclass(frozen=True)
class LayerShape:
    """What the cost model needs to know about one layer"""

    in_dim: int
    out_dim: int
    in_bits: int
    weight_bits: int
    out_bits: int
    acc_bits: Optional[int] = None

    @property
    def padded_in(self) -> int:
        """Input width padded to a multiple of 32"""
        return pad_dim(self.in_dim)

    @property
    def padded_out(self) -> int:
        """Output width padded to a multiple of 32"""
        return pad_dim(self.out_dim)

    @property
    def accumulator_bits(self) -> int:
        """Declared accumulator width, or the worst case of the shape"""
        if self.acc_bits is not None:
            return self.acc_bits
        return self.in_bits + self.weight_bits + math.ceil(
            math.log2(self.in_dim)
        )


def policy_shapes(
    obs_dim: int,
    action_dim: int,
    width: int,
    b_in: int,
    b_core: int,
    b_out: int = 8,
) -> List[LayerShape]:
    """Shapes of a two-hidden-layer policy (weights at b_core bits)"""
    return [
        LayerShape(obs_dim, width, b_in, b_core, b_core),
        LayerShape(width, width, b_core, b_core, b_core),
        LayerShape(width, action_dim, b_core, b_core, b_out),
    ]


def graph_shapes(graph: IntegerGraph) -> List[LayerShape]:
    """Shapes of a lowered graph"""
    return [
        LayerShape(
            in_dim=layer.in_dim,
            out_dim=layer.out_dim,
            in_bits=layer.in_spec.bits,
            weight_bits=layer.weight_spec.bits,
            out_bits=layer.out_spec.bits,
            acc_bits=layer.acc_bits,
        )
        for layer in graph.layers
    ]


ShapesLike = Union[IntegerGraph, Sequence[LayerShape]]


def _as_shapes(graph: ShapesLike) -> List[LayerShape]:
    if isinstance(graph, IntegerGraph):
        return graph_shapes(graph)
    shapes = list(graph)
    if not shapes:
        raise ValueError("The cost model needs at least one layer.")
    return shapes


def pad_dims(graph: ShapesLike) -> List[int]:
    """Padded [input, hidden..., output] feature dimensions"""
    shapes = _as_shapes(graph)
    return [shapes[0].padded_in] + [shape.padded_out for shape in shapes]


def divisors(value: int) -> List[int]:
    """Ascending divisors of a positive integer"""
    return [d for d in range(1, value + 1) if value % d == 0]


@dataclass(frozen=True)
class FoldingConfig:
    """Per-layer PE / SIMD parallelism and the clock"""

    pe: Tuple[int, ...]
    simd: Tuple[int, ...]
    clock_hz: float = DEFAULT_CLOCK_HZ

    def __post_init__(self):
        object.__setattr__(self, "pe", tuple(int(p) for p in self.pe))
        object.__setattr__(self, "simd", tuple(int(s) for s in self.simd))
        if len(self.pe) != len(self.simd):
            raise ValueError("pe and simd should have one entry per layer.")
        if not self.clock_hz > 0:
            raise ValueError(
                f"Clock frequency should be positive. Found {self.clock_hz}."
            )

    def check(self, shapes: Sequence[LayerShape]) -> None:
        """Raise ValueError unless the folding suits the shapes"""
        if len(self.pe) != len(shapes):
            raise ValueError(
                f"Folding has {len(self.pe)} layers, the graph {len(shapes)}."
            )
        for index, (shape, pe, simd) in enumerate(
            zip(shapes, self.pe, self.simd)
        ):
            if pe < 1 or shape.padded_out % pe:
                raise ValueError(
                    f"Layer {index}: pe={pe} should divide the padded "
                    f"output width {shape.padded_out}."
                )
            if simd < 1 or shape.padded_in % simd:
                raise ValueError(
                    f"Layer {index}: simd={simd} should divide the padded "
                    f"input width {shape.padded_in}."
                )

    def to_dict(self) -> dict:
        """Plain dictionary (JSON compatible)"""
        return {
            "pe": list(self.pe),
            "simd": list(self.simd),
            "clock_hz": self.clock_hz,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "FoldingConfig":
        """Inverse of to_dict"""
        return cls(
            pe=data["pe"],
            simd=data["simd"],
            clock_hz=float(data.get("clock_hz", DEFAULT_CLOCK_HZ)),
        )


def full_parallelism(
    graph: ShapesLike, clock_hz: float = DEFAULT_CLOCK_HZ
) -> FoldingConfig:
    """pe = padded_out and simd = padded_in for every layer"""
    shapes = _as_shapes(graph)
    return FoldingConfig(
        pe=[s.padded_out for s in shapes],
        simd=[s.padded_in for s in shapes],
        clock_hz=clock_hz,
    )


@dataclass
class CostReport:
    """Cycle estimates and abstract resource proxies"""

    layer_cycles: List[int]
    latency_cycles: int
    latency_seconds: float
    initiation_interval_cycles: int
    throughput_actions_per_s: float
    mac_units: int
    threshold_words: int
    weight_bits: int
    threshold_bits: int
    folding: Optional[FoldingConfig] = field(default=None, repr=False)

    def resources(self) -> Dict[str, int]:
        """Resource proxies keyed like a budget"""
        return {key: getattr(self, key) for key in BUDGET_KEYS}

    def to_dict(self) -> dict:
        """Plain dictionary (JSON compatible)"""
        data = asdict(self)
        if self.folding is not None:
            data["folding"] = self.folding.to_dict()
        return data


def layer_cycles(shape: LayerShape, pe: int, simd: int) -> int:
    """Cycles of one folded matrix-vector unit"""
    return (shape.padded_out // pe) * (shape.padded_in // simd)


def estimate(
    graph: ShapesLike, folding: FoldingConfig, kappa: int = PIPELINE_KAPPA
) -> CostReport:
    """
    Cost of a folded graph

    Parameters
    ----------
    graph: IntegerGraph or list of LayerShape
        Lowered policy or its shapes
    folding: FoldingConfig
        Per-layer parallelism
    kappa: int (default=2)
        Pipeline cycles per layer added to the latency

    Returns
    -------
    report: CostReport
    """
    shapes = _as_shapes(graph)
    folding.check(shapes)

    cycles = [
        layer_cycles(shape, pe, simd)
        for shape, pe, simd in zip(shapes, folding.pe, folding.simd)
    ]
    interval = max(cycles)
    latency = sum(cycles) + kappa * len(shapes)
    words = [s.padded_out * (2**s.out_bits - 1) for s in shapes]

    return CostReport(
        layer_cycles=cycles,
        latency_cycles=latency,
        latency_seconds=latency / folding.clock_hz,
        initiation_interval_cycles=interval,
        throughput_actions_per_s=folding.clock_hz / interval,
        mac_units=sum(p * s for p, s in zip(folding.pe, folding.simd)),
        threshold_words=sum(words),
        weight_bits=sum(
            s.padded_out * s.padded_in * s.weight_bits for s in shapes
        ),
        threshold_bits=sum(
            w * s.accumulator_bits for w, s in zip(words, shapes)
        ),
        folding=folding,
    )


def _cheapest_layer_folding(shape: LayerShape, max_cycles: int) -> tuple:
    """(pe, simd) of minimal pe * simd within max_cycles, smaller pe first"""
    best = None
    for pe in divisors(shape.padded_out):
        for simd in divisors(shape.padded_in):
            if layer_cycles(shape, pe, simd) > max_cycles:
                continue
            key = (pe * simd, pe)
            if best is None or key < best[0]:
                best = (key, pe, simd)
    return best[1], best[2]


def _over_budget(report: CostReport, budget: Optional[dict]) -> dict:
    if not budget:
        return {}
    unknown = set(budget) - set(BUDGET_KEYS)
    if unknown:
        raise ValueError(
            f"Unknown budget keys {sorted(unknown)}. Use {BUDGET_KEYS}."
        )
    resources = report.resources()
    return {
        key: (resources[key], limit)
        for key, limit in budget.items()
        if resources[key] > limit
    }


def folding_search(
    graph: ShapesLike,
    target_throughput: float,
    resource_budget: Optional[dict] = None,
    clock_hz: float = DEFAULT_CLOCK_HZ,
    kappa: int = PIPELINE_KAPPA,
) -> FoldingConfig:
    """
    Cheapest folding (fewest mac_units) reaching a target throughput

    The throughput constraint bounds every layer's cycles by
    floor(clock / target) independently, so the optimum is found layer by
    layer over the divisor lattices.

    Parameters
    ----------
    graph: IntegerGraph or list of LayerShape
        Lowered policy or its shapes
    target_throughput: float
        Required actions per second
    resource_budget: dict (default=None)
        Upper bounds on the resource proxies, None for unlimited
    clock_hz: float (default=1e8)
        Clock frequency

    Returns
    -------
    folding: FoldingConfig

    Raises
    ------
    InfeasibleFoldingError
        When the target exceeds the clock or the budget is exceeded
    """
    if not target_throughput > 0:
        raise ValueError(
            f"Target throughput should be positive. Found {target_throughput}."
        )
    shapes = _as_shapes(graph)
    max_cycles = math.floor(clock_hz / target_throughput)
    if max_cycles < 1:
        raise InfeasibleFoldingError(
            f"Target {target_throughput:g} actions/s needs an initiation "
            f"interval below one cycle at {clock_hz:g} Hz.",
            target=target_throughput,
            best_throughput=clock_hz,
        )

    pairs = [_cheapest_layer_folding(shape, max_cycles) for shape in shapes]
    folding = FoldingConfig(
        pe=[p for p, _ in pairs], simd=[s for _, s in pairs], clock_hz=clock_hz
    )
    report = estimate(shapes, folding, kappa)
    exceeded = _over_budget(report, resource_budget)
    if exceeded:
        raise InfeasibleFoldingError(
            f"Target {target_throughput:g} actions/s exceeds the resource "
            f"budget: {exceeded}.",
            target=target_throughput,
            best_throughput=_best_throughput(shapes, resource_budget, clock_hz),
        )
    return folding


def _best_throughput(
    shapes: List[LayerShape], budget: Optional[dict], clock_hz: float
) -> float:
    """Highest throughput reachable within a budget (0 if none)"""

    def fits(max_cycles: int) -> bool:
        pairs = [_cheapest_layer_folding(s, max_cycles) for s in shapes]
        folding = FoldingConfig(
            pe=[p for p, _ in pairs],
            simd=[s for _, s in pairs],
            clock_hz=clock_hz,
        )
        return not _over_budget(estimate(shapes, folding), budget)

    # mac_units of the cheapest folding only decrease with max_cycles
    low, high = 1, max(layer_cycles(s, 1, 1) for s in shapes)
    if not fits(high):
        return 0.0
    while low < high:
        middle = (low + high) // 2
        if fits(middle):
            high = middle
        else:
            low = middle + 1
    return clock_hz / low


def fit_folding(
    graph: ShapesLike,
    target_throughput: Optional[float] = None,
    resource_budget: Optional[dict] = None,
    clock_hz: float = DEFAULT_CLOCK_HZ,
) -> FoldingConfig:
    """
    Folding of a cost estimate: the cheapest one reaching the target, or
    full parallelism without target

    Raises
    ------
    InfeasibleFoldingError
        When the target is out of reach, or when full parallelism exceeds
        the budget
    """
    if target_throughput is not None:
        return folding_search(
            graph, target_throughput, resource_budget, clock_hz
        )
    shapes = _as_shapes(graph)
    folding = full_parallelism(shapes, clock_hz)
    exceeded = _over_budget(estimate(shapes, folding), resource_budget)
    if exceeded:
        raise InfeasibleFoldingError(
            f"Full parallelism exceeds the resource budget: {exceeded}. "
            f"Give a throughput target to fold the layers.",
            target=clock_hz,
            best_throughput=_best_throughput(shapes, resource_budget, clock_hz),
        )
    return folding


THROUGHPUT_SWEEP_COLUMNS = [
    "target",
    "feasible",
    "mac_units",
    "initiation_interval_cycles",
    "latency_cycles",
    "throughput_actions_per_s",
]


def throughput_sweep(
    graph: ShapesLike,
    resource_budget: Optional[dict] = None,
    targets: Sequence[float] = (1e3, 1e4, 1e5, 1e6, 1e7),
    clock_hz: float = DEFAULT_CLOCK_HZ,
) -> tuple:
    """
    Fold the graph for increasing throughput targets and keep the highest
    feasible one

    Returns
    -------
    best: tuple or None
        (target, FoldingConfig, CostReport) of the highest feasible target
    table: pd.DataFrame
        One row per target
    """
    rows = []
    best = None
    for target in sorted(targets):
        try:
            folding = folding_search(graph, target, resource_budget, clock_hz)
        except InfeasibleFoldingError as error:
            logging.info(f"Target {target:g} actions/s infeasible: {error}")
            rows.append([target, False, np.nan, np.nan, np.nan, np.nan])
            continue
        report = estimate(graph, folding)
        best = (target, folding, report)
        rows.append(
            [
                target,
                True,
                report.mac_units,
                report.initiation_interval_cycles,
                report.latency_cycles,
                report.throughput_actions_per_s,
            ]
        )
    if best is None:
        logging.warning("No throughput target is feasible within the budget")
    else:
        logging.info(f"Highest feasible target: {best[0]:g} actions/s")
    return best, pd.DataFrame(rows, columns=THROUGHPUT_SWEEP_COLUMNS)


def reference_cost(
    env_dims: Tuple[int, int],
    width: int = 256,
    b_core: int = 4,
    b_io: int = 8,
    folding: Optional[FoldingConfig] = None,
    clock_hz: float = DEFAULT_CLOCK_HZ,
    target_throughput: Optional[float] = None,
    resource_budget: Optional[dict] = None,
) -> CostReport:
    """
    Cost of the reference policy keeping the original width with 8-bit
    input/output and b_core-bit core

    Parameters
    ----------
    env_dims: tuple
        (obs_dim, action_dim)
    folding: FoldingConfig (default=None)
        Given folding, else the one of fit_folding
    target_throughput: float (default=None)
        Required actions per second when the folding is searched
    resource_budget: dict (default=None)
        Upper bounds on the resource proxies of the searched folding
    """
    obs_dim, action_dim = env_dims
    shapes = policy_shapes(obs_dim, action_dim, width, b_io, b_core, b_io)
    if folding is None:
        folding = fit_folding(
            shapes, target_throughput, resource_budget, clock_hz
        )
    return estimate(shapes, folding)
