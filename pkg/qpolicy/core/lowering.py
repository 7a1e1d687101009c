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
Compilation of a frozen fake-quantized policy into an integer-only graph.

Every layer becomes an integer matrix and a table of per-neuron
thresholds: the output code of neuron i is

    q_min_out + #{k : acc_i >= T_ik}

where acc_i is the integer dot product. The bias is folded into the
thresholds and the ReLU of hidden layers is absorbed by the lower clip of
their unsigned output spec.
"""
# pylint: disable=too-many-arguments,too-many-locals

# Standard imports
import logging
from dataclasses import dataclass, field
from typing import Optional, Tuple

# Third party imports
import numpy as np

# qpolicy imports
from . import quant
from .network import NUM_LAYERS, Normalizer, PolicyNet
from .quant import QuantSpec

# Tables up to this size are counted by linear scan
LINEAR_SCAN_MAX = 8

MAX_CORRECTION_STEPS = 64


class LoweringError(ValueError):
    """Raised when a policy cannot be lowered exactly"""


def _readonly(array: np.ndarray, dtype) -> np.ndarray:
    array = np.array(array, dtype=dtype)
    array.setflags(write=False)
    return array


@dataclass(frozen=True)
class IntLayer:
    """One integer matrix-vector layer with threshold requantization"""

    int_weights: np.ndarray
    bias_int: np.ndarray
    thresholds: np.ndarray
    acc_bits: int
    in_spec: QuantSpec
    out_spec: QuantSpec
    weight_spec: QuantSpec
    acc_step: float

    def __post_init__(self):
        object.__setattr__(
            self, "int_weights", _readonly(self.int_weights, np.int64)
        )
        object.__setattr__(self, "bias_int", _readonly(self.bias_int, np.int64))
        object.__setattr__(
            self, "thresholds", _readonly(self.thresholds, np.int64)
        )
        object.__setattr__(self, "acc_bits", int(self.acc_bits))
        out_dim = self.int_weights.shape[0]
        if self.bias_int.shape != (out_dim,):
            raise ValueError(
                f"Bias shape {self.bias_int.shape} does not match "
                f"{out_dim} output neurons."
            )
        expected = (out_dim, self.out_spec.num_levels - 1)
        if self.thresholds.shape != expected:
            raise ValueError(
                f"Threshold table shape {self.thresholds.shape} should be "
                f"{expected}."
            )
        if np.any(np.diff(self.thresholds, axis=1) < 0):
            raise ValueError("Threshold rows should be non-decreasing.")
        if np.any(np.abs(self.int_weights) > self.weight_spec.q_s):
            raise ValueError("Integer weights exceed the weight code range.")
        if self.acc_bits < 2:
            raise ValueError(f"acc_bits should be >= 2. Found {self.acc_bits}.")

    @property
    def in_dim(self) -> int:
        """Input width"""
        return self.int_weights.shape[1]

    @property
    def out_dim(self) -> int:
        """Output width"""
        return self.int_weights.shape[0]

    def accumulate(self, codes: np.ndarray) -> np.ndarray:
        """Exact int64 dot products of a batch of input codes (N, in)"""
        return np.asarray(codes, dtype=np.int64) @ self.int_weights.T

    def requantize(self, acc: np.ndarray) -> np.ndarray:
        """Output codes of a batch of accumulators (N, out)"""
        return self.out_spec.q_min + count_thresholds(self.thresholds, acc)


@dataclass(frozen=True)
class IntegerGraph:
    """Integer-only policy: input quantization, integer layers, tanh table"""

    input_spec: QuantSpec
    normalizer: Normalizer
    obs_clip: float
    layers: Tuple[IntLayer, ...]
    tanh_lut: np.ndarray = field(repr=False)

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        object.__setattr__(
            self, "tanh_lut", _readonly(self.tanh_lut, np.float64)
        )
        if not self.layers:
            raise ValueError("An integer graph needs at least one layer.")
        if self.tanh_lut.size != self.output_spec.num_levels:
            raise ValueError(
                f"tanh table should have {self.output_spec.num_levels} "
                f"entries. Found {self.tanh_lut.size}."
            )
        for previous, layer in zip(self.layers[:-1], self.layers[1:]):
            if previous.out_dim != layer.in_dim:
                raise ValueError(
                    f"Layer widths do not chain: {previous.out_dim} -> "
                    f"{layer.in_dim}."
                )

    @property
    def obs_dim(self) -> int:
        """Observation dimension"""
        return self.layers[0].in_dim

    @property
    def action_dim(self) -> int:
        """Action dimension"""
        return self.layers[-1].out_dim

    @property
    def output_spec(self) -> QuantSpec:
        """Spec of the codes indexing the tanh table"""
        return self.layers[-1].out_spec

    def dims(self) -> list:
        """[obs_dim, hidden widths..., action_dim]"""
        return [self.obs_dim] + [layer.out_dim for layer in self.layers]


def count_thresholds(thresholds: np.ndarray, acc: np.ndarray) -> np.ndarray:
    """
    Number of thresholds of each neuron reached by its accumulator

    Parameters
    ----------
    thresholds: np.ndarray
        (out, K) non-decreasing rows
    acc: np.ndarray
        (N, out) accumulators

    Returns
    -------
    counts: np.ndarray
        (N, out) int64 counts in [0, K]
    """
    acc = np.atleast_2d(np.asarray(acc, dtype=np.int64))
    if thresholds.shape[1] <= LINEAR_SCAN_MAX:
        return np.sum(acc[:, :, None] >= thresholds[None, :, :], axis=2)
    counts = np.empty(acc.shape, dtype=np.int64)
    for neuron in range(thresholds.shape[0]):
        counts[:, neuron] = np.searchsorted(
            thresholds[neuron], acc[:, neuron], side="right"
        )
    return counts


def requantize_reference(
    acc: np.ndarray,
    bias_int: np.ndarray,
    out_spec: QuantSpec,
    multiplier: float,
    acc_step: Optional[float] = None,
) -> np.ndarray:
    """
    Direct requantization of accumulators, the oracle of the threshold
    tables.

    With acc_step, the codes are computed with the same floating-point
    expression as the fake-quantized forward pass,
    quantize_int((acc + bias) * acc_step). Otherwise
    clip(round_half_even((acc + bias) * multiplier), q_min, q_max).
    """
    total = np.asarray(acc, dtype=np.float64) + np.asarray(
        bias_int, dtype=np.float64
    )
    if acc_step is not None:
        return quant.quantize_int(total * acc_step, out_spec)
    return np.clip(
        np.rint(total * multiplier), out_spec.q_min, out_spec.q_max
    ).astype(np.int64)


def _threshold_table(
    multiplier: float,
    bias_int: np.ndarray,
    out_spec: QuantSpec,
    acc_step: Optional[float],
) -> np.ndarray:
    """(out, num_levels - 1) thresholds for a vector of biases"""
    if not np.isfinite(multiplier) or multiplier <= 0:
        raise LoweringError(
            f"Requantization multiplier should be positive and finite. "
            f"Found {multiplier}."
        )
    bias_int = np.asarray(bias_int, dtype=np.int64).reshape(-1, 1)
    levels = out_spec.q_min + np.arange(1, out_spec.num_levels, dtype=np.int64)
    levels = np.broadcast_to(levels, (bias_int.shape[0], levels.size))

    guess = np.ceil((levels - 0.5) / multiplier).astype(np.int64) - bias_int

    def reaches(acc):
        bias = np.broadcast_to(bias_int, acc.shape)
        codes = requantize_reference(acc, bias, out_spec, multiplier, acc_step)
        return codes >= levels

    corrections = 0
    for _ in range(MAX_CORRECTION_STEPS):
        too_high = reaches(guess - 1)
        if not too_high.any():
            break
        guess = guess - too_high
        corrections += int(too_high.sum())
    else:
        raise LoweringError("Threshold search did not converge.")
    for _ in range(MAX_CORRECTION_STEPS):
        too_low = ~reaches(guess)
        if not too_low.any():
            break
        guess = guess + too_low
        corrections += int(too_low.sum())
    else:
        raise LoweringError("Threshold search did not converge.")

    if corrections:
        logging.debug(f"{corrections} analytic thresholds corrected by scan")
    return guess


def compute_thresholds(
    multiplier: float,
    bias_int: int,
    out_spec: QuantSpec,
    acc_step: Optional[float] = None,
) -> np.ndarray:
    """
    Thresholds of one neuron: T_k is the smallest accumulator a whose
    requantized code reaches q_min + k, for k = 1 .. num_levels - 1.

    The analytic value ceil((level - 0.5) / M) - bias is corrected by a
    local scan against requantize_reference.

    Parameters
    ----------
    multiplier: float
        Requantization multiplier M > 0
    bias_int: int
        Integer bias at accumulator scale
    out_spec: QuantSpec
        Output quantizer
    acc_step: float (default=None)
        Real value of one accumulator step. When given, the scan oracle is
        the fake-quantized float expression.

    Returns
    -------
    thresholds: np.ndarray
        Non-decreasing int64 vector of num_levels - 1 entries
    """
    return _threshold_table(
        multiplier, np.array([bias_int]), out_spec, acc_step
    )[0]


def accumulator_range(
    int_weights: np.ndarray, in_spec: QuantSpec
) -> Tuple[np.ndarray, np.ndarray]:
    """Per-neuron reachable [min, max] of the dot product (bias excluded)"""
    int_weights = np.asarray(int_weights, dtype=np.int64)
    low = int_weights * in_spec.q_min
    high = int_weights * in_spec.q_max
    return (
        np.minimum(low, high).sum(axis=1),
        np.maximum(low, high).sum(axis=1),
    )


def accumulator_bits(
    int_weights: np.ndarray,
    in_spec: QuantSpec,
    bias_int: Optional[np.ndarray] = None,
) -> int:
    """
    Minimal two's-complement width holding every dot product plus bias

    Parameters
    ----------
    int_weights: np.ndarray
        (out, in) integer weights
    in_spec: QuantSpec
        Spec of the input codes
    bias_int: np.ndarray (default=None)
        Integer biases at accumulator scale

    Returns
    -------
    bits: int
        Width, never less than 2
    """
    int_weights = np.atleast_2d(np.asarray(int_weights, dtype=np.int64))
    x_max = max(abs(in_spec.q_min), abs(in_spec.q_max))
    bounds = np.abs(int_weights).sum(axis=1) * x_max
    if bias_int is not None:
        bounds = bounds + np.abs(np.asarray(bias_int, dtype=np.int64))
    bound = int(bounds.max()) if bounds.size else 0
    return max(bound.bit_length() + 1, 2)


def build_tanh_lut(out_spec: QuantSpec) -> np.ndarray:
    """
    tanh of every signed output code, indexed by code - q_min

    Parameters
    ----------
    out_spec: QuantSpec
        Signed output spec

    Returns
    -------
    lut: np.ndarray
        2 ** bits increasing entries in (-1, 1)
    """
    if not out_spec.signed:
        raise ValueError("The tanh table needs a signed output spec.")
    codes = np.arange(out_spec.q_min, out_spec.q_max + 1, dtype=np.int64)
    return np.tanh(quant.dequantize(codes, out_spec))


def _check_frozen(net: PolicyNet) -> None:
    if not net.quantized:
        raise LoweringError("Only quantized policies can be lowered.")
    if not net.normalizer.frozen:
        raise LoweringError("The policy normalizer should be frozen.")
    if any(
        state.in_warmup or state.learnable
        for state in net.scale_states.values()
    ):
        raise LoweringError("The policy scales should be fixed (call freeze).")


def lower_layer(net: PolicyNet, layer: int) -> IntLayer:
    """Integer form of one layer of a frozen policy"""
    in_spec = net.layer_in_spec(layer)
    out_spec = net.layer_out_spec(layer)
    w_spec = net.weight_spec(layer)
    b_spec = net.bias_spec(layer, in_spec)
    int_weights = quant.quantize_int(net.params[f"w{layer}"], w_spec)
    bias_int = quant.quantize_int(net.params[f"b{layer}"], b_spec)

    acc_step = in_spec.step * w_spec.step
    multiplier = acc_step * out_spec.q_s / out_spec.scale
    thresholds = _threshold_table(multiplier, bias_int, out_spec, acc_step)

    acc_min, acc_max = accumulator_range(int_weights, in_spec)
    thresholds = np.clip(thresholds, acc_min[:, None], acc_max[:, None] + 1)

    return IntLayer(
        int_weights=int_weights,
        bias_int=bias_int,
        thresholds=thresholds,
        acc_bits=accumulator_bits(int_weights, in_spec, bias_int),
        in_spec=in_spec,
        out_spec=out_spec,
        weight_spec=w_spec,
        acc_step=acc_step,
    )


def verification_inputs(
    net: PolicyNet, samples: int, seed: int = 0
) -> np.ndarray:
    """
    Raw observations whose normalized values sweep the input quantizer
    range, slightly beyond the clip on both sides
    """
    rng = np.random.default_rng(seed)
    bound = 1.25 * net.activation_spec("input").scale
    features = rng.uniform(-bound, bound, size=(samples, net.obs_dim))
    norm = net.normalizer
    if not norm.enabled:
        return features
    return norm.mean + features * np.sqrt(norm.var + norm.epsilon)


def verify_lowering(
    graph: IntegerGraph, net: PolicyNet, obs: np.ndarray
) -> None:
    """
    Compare the integer codes of every layer with the fake-quantized
    forward pass

    Raises
    ------
    LoweringError
        On the first mismatching code
    """
    _, tape = net.forward(obs)
    codes = quant.quantize_int(net.features(obs), graph.input_spec)
    if not np.array_equal(codes, tape.codes["input"]):
        raise LoweringError("Input codes differ from the fake-quant path.")
    for k, layer in enumerate(graph.layers):
        codes = layer.requantize(layer.accumulate(codes))
        name = "output" if k == len(graph.layers) - 1 else f"hidden{k}"
        expected = tape.codes[name]
        mismatch = np.argwhere(codes != expected)
        if mismatch.size:
            sample, neuron = mismatch[0]
            raise LoweringError(
                f"Layer {k} neuron {neuron}, sample {sample}: integer code "
                f"{codes[sample, neuron]} != fake-quant code "
                f"{expected[sample, neuron]}."
            )


def lower(
    net: PolicyNet, verify_samples: int = 256, seed: int = 0
) -> IntegerGraph:
    """
    Lower a frozen fake-quantized policy to an integer graph

    Parameters
    ----------
    net: PolicyNet
        Frozen quantized policy
    verify_samples: int (default=256)
        Number of random inputs of the bit-exactness check (0 skips it)
    seed: int (default=0)
        Seed of the verification inputs

    Returns
    -------
    graph: IntegerGraph
        Integer-only policy
    """
    _check_frozen(net)
    layers = [lower_layer(net, k) for k in range(NUM_LAYERS)]
    normalizer = net.normalizer.copy()
    normalizer.freeze()
    graph = IntegerGraph(
        input_spec=net.activation_spec("input"),
        normalizer=normalizer,
        obs_clip=net.obs_clip,
        layers=tuple(layers),
        tanh_lut=build_tanh_lut(layers[-1].out_spec),
    )
    if verify_samples:
        inputs = verification_inputs(net, verify_samples, seed)
        verify_lowering(graph, net, inputs)
    logging.info(
        f"Policy lowered: dims {graph.dims()}, accumulator widths "
        f"{[layer.acc_bits for layer in layers]}"
    )
    return graph
