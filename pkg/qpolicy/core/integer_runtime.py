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
Integer-only interpreter of an IntegerGraph.

The only real-valued steps are at the boundary: normalization and
quantization of the observation on entry, the tanh table on exit.
"""

# Standard imports
from dataclasses import dataclass
from typing import List, Optional

# Third party imports
import numpy as np

# qpolicy imports
from . import quant
from .lowering import IntegerGraph
from .quant import QuantSpec


class AccumulatorOverflowError(OverflowError):
    """An accumulator left the range of its declared width"""


class ActivationRangeError(ValueError):
    """An integer activation left the range of its spec"""


@dataclass(frozen=True)
class IntActivation:
    """Integer codes at one layer boundary"""

    codes: np.ndarray
    spec: QuantSpec

    def __post_init__(self):
        codes = np.asarray(self.codes)
        if not np.issubdtype(codes.dtype, np.integer):
            raise TypeError(
                f"Integer activations should hold integers. "
                f"Found '{codes.dtype}'."
            )
        if codes.size and (
            codes.min() < self.spec.q_min or codes.max() > self.spec.q_max
        ):
            raise ActivationRangeError(
                f"Activation codes [{codes.min()}, {codes.max()}] outside "
                f"[{self.spec.q_min}, {self.spec.q_max}]."
            )


def _check_accumulator(acc: np.ndarray, acc_bits: int, layer: int) -> None:
    low = -(2 ** (acc_bits - 1))
    high = 2 ** (acc_bits - 1) - 1
    if acc.size and (acc.min() < low or acc.max() > high):
        raise AccumulatorOverflowError(
            f"Layer {layer}: accumulator range [{acc.min()}, {acc.max()}] "
            f"does not fit {acc_bits} bits."
        )


def quantize_observation(
    graph: IntegerGraph,
    obs: np.ndarray,
    obs_noise: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Input codes of raw observations (the floating-point boundary)"""
    obs = np.atleast_2d(np.asarray(obs, dtype=np.float64))
    if obs.shape[-1] != graph.obs_dim:
        raise ValueError(
            f"Observation dimension {obs.shape[-1]} does not match the "
            f"graph input dimension {graph.obs_dim}."
        )
    features = graph.normalizer.normalize(obs)
    if obs_noise is not None:
        features = features + obs_noise
    features = np.clip(features, -graph.obs_clip, graph.obs_clip)
    return quant.quantize_int(features, graph.input_spec)


def run_codes(graph: IntegerGraph, codes: np.ndarray) -> List[IntActivation]:
    """
    Integer layers only: from input codes to output codes

    Returns
    -------
    trace: list of IntActivation
        Input codes followed by the codes of every layer
    """
    trace = [IntActivation(np.asarray(codes, dtype=np.int64), graph.input_spec)]
    for index, layer in enumerate(graph.layers):
        acc = layer.accumulate(trace[-1].codes)
        _check_accumulator(acc + layer.bias_int, layer.acc_bits, index)
        trace.append(IntActivation(layer.requantize(acc), layer.out_spec))
    return trace


def run_integer(
    graph: IntegerGraph,
    obs: np.ndarray,
    obs_noise: Optional[np.ndarray] = None,
) -> tuple:
    """
    Run the integer policy

    Parameters
    ----------
    graph: IntegerGraph
        Lowered policy
    obs: np.ndarray
        Raw observations (obs_dim,) or (N, obs_dim)
    obs_noise: np.ndarray (default=None)
        Perturbation added to the normalized observations

    Returns
    -------
    action: np.ndarray
        (N, action_dim) tanh table outputs
    trace: list of IntActivation
        Integer codes at every layer boundary
    """
    trace = run_codes(graph, quantize_observation(graph, obs, obs_noise))
    out = trace[-1]
    action = graph.tanh_lut[out.codes - out.spec.q_min]
    return action, trace


def count_macs(graph: IntegerGraph) -> int:
    """Multiply-accumulates per inference"""
    return sum(layer.out_dim * layer.in_dim for layer in graph.layers)


def checksum(graph: IntegerGraph) -> int:
    """64-bit digest of the canonical graph document"""
    # pylint: disable=import-outside-toplevel
    from ..tools.model_io import graph_checksum

    return graph_checksum(graph)


class IntegerPolicy:
    """Evaluation adapter: act() of an IntegerGraph"""

    def __init__(self, graph: IntegerGraph) -> None:
        self.graph = graph

    @property
    def obs_dim(self) -> int:
        """Observation dimension"""
        return self.graph.obs_dim

    @property
    def action_dim(self) -> int:
        """Action dimension"""
        return self.graph.action_dim

    def act(
        self, obs: np.ndarray, obs_noise: Optional[np.ndarray] = None
    ) -> np.ndarray:
        """Deployed action of the integer graph"""
        return run_integer(self.graph, obs, obs_noise)[0]
