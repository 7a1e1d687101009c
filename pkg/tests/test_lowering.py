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
"""Tests for the lowering of fake-quantized policies to integer graphs."""

# Third party imports
import numpy as np
import pytest

# qpolicy imports
from qpolicy.core import lowering
from qpolicy.core.integer_runtime import run_integer
from qpolicy.core.lowering import (
    IntLayer,
    LoweringError,
    accumulator_bits,
    accumulator_range,
    build_tanh_lut,
    compute_thresholds,
    count_thresholds,
    lower,
    requantize_reference,
    verify_lowering,
)
from qpolicy.core.network import PolicyNet, QuantConfig, forward_fakequant
from qpolicy.core.quant import QuantSpec

# Tests helpers
from .helpers import random_observations, random_policy

UNSIGNED_2 = QuantSpec(bits=2, signed=False, scale=1.0)


@pytest.mark.unit_tests
@pytest.mark.fast
def test_threshold_examples():
    """Hand-computed tables, ties rounded to even"""
    np.testing.assert_array_equal(
        compute_thresholds(0.7, 0, UNSIGNED_2), [1, 3, 4]
    )
    np.testing.assert_array_equal(
        compute_thresholds(1.0, 0, UNSIGNED_2), [1, 2, 3]
    )
    # rint(0.5) = 0 and rint(2.5) = 2
    np.testing.assert_array_equal(
        compute_thresholds(0.5, 0, UNSIGNED_2), [2, 3, 6]
    )
    np.testing.assert_array_equal(
        compute_thresholds(0.7, 5, UNSIGNED_2), np.array([1, 3, 4]) - 5
    )

    with pytest.raises(LoweringError):
        compute_thresholds(0.0, 0, UNSIGNED_2)
    with pytest.raises(LoweringError):
        compute_thresholds(-0.3, 0, UNSIGNED_2)


@pytest.mark.unit_tests
@pytest.mark.fast
def test_thresholds_match_direct_requantization():
    """Counting thresholds reproduces the direct requantization"""
    rng = np.random.default_rng(0)
    acc = np.arange(-400, 401)
    for _ in range(200):
        spec = QuantSpec(
            bits=int(rng.integers(2, 5)),
            signed=bool(rng.integers(2)),
            scale=1.0,
        )
        multiplier = float(rng.uniform(0.05, 2.0))
        bias = int(rng.integers(-20, 21))
        thresholds = compute_thresholds(multiplier, bias, spec)
        assert np.all(np.diff(thresholds) >= 0)
        codes = spec.q_min + count_thresholds(
            thresholds[None, :], acc[:, None]
        )
        expected = requantize_reference(acc, bias, spec, multiplier)
        np.testing.assert_array_equal(codes[:, 0], expected)


@pytest.mark.unit_tests
@pytest.mark.fast
def test_count_thresholds_long_tables():
    """Binary search and linear scan agree"""
    rng = np.random.default_rng(1)
    thresholds = np.sort(rng.integers(-100, 100, size=(5, 31)), axis=1)
    acc = rng.integers(-120, 120, size=(40, 5))
    expected = np.sum(acc[:, :, None] >= thresholds[None, :, :], axis=2)
    assert thresholds.shape[1] > lowering.LINEAR_SCAN_MAX
    np.testing.assert_array_equal(count_thresholds(thresholds, acc), expected)


@pytest.mark.unit_tests
@pytest.mark.fast
def test_accumulator_bits():
    """Worst-case accumulator width"""
    assert accumulator_bits(np.array([[1]]), UNSIGNED_2) == 3
    assert accumulator_bits(np.zeros((2, 3), dtype=int), UNSIGNED_2) == 2
    assert accumulator_bits(np.ones((1, 8)), UNSIGNED_2) == (
        accumulator_bits(np.ones((1, 4)), UNSIGNED_2) + 1
    )
    assert accumulator_bits(np.array([[1]]), UNSIGNED_2, np.array([4])) == 4

    rng = np.random.default_rng(2)
    spec = QuantSpec(bits=4, signed=True, scale=1.0)
    weights = rng.integers(-8, 8, size=(6, 10))
    bits = accumulator_bits(weights, spec)
    low, high = accumulator_range(weights, spec)
    assert low.min() >= -(2 ** (bits - 1))
    assert high.max() <= 2 ** (bits - 1) - 1


@pytest.mark.unit_tests
@pytest.mark.fast
def test_tanh_lut():
    """tanh of every output code"""
    spec = QuantSpec(bits=8, signed=True, scale=1.0)
    lut = build_tanh_lut(spec)
    assert lut.size == 256
    assert lut[-spec.q_min] == 0.0
    assert lut[-1] == pytest.approx(np.tanh(127 / 128))
    assert np.all(np.diff(lut) > 0)
    # odd symmetry of the codes -127 .. 127
    np.testing.assert_allclose(lut[1:], -lut[1:][::-1])

    with pytest.raises(ValueError):
        build_tanh_lut(UNSIGNED_2)


@pytest.mark.unit_tests
@pytest.mark.fast
def test_lower_small_policy():
    """3 -> 4 -> 4 -> 2 policy at 3 bits is lowered bit-exactly"""
    rng = np.random.default_rng(3)
    net = random_policy(rng, obs_dim=3, action_dim=2, width=4, bits=(3, 3, 3))
    graph = lower(net, verify_samples=512, seed=1)
    assert graph.dims() == [3, 4, 4, 2]
    assert graph.tanh_lut.size == 8
    assert [layer.thresholds.shape for layer in graph.layers] == [
        (4, 7),
        (4, 7),
        (2, 7),
    ]
    for layer in graph.layers:
        low, high = accumulator_range(layer.int_weights, layer.in_spec)
        assert np.all(layer.thresholds >= low[:, None])
        assert np.all(layer.thresholds <= high[:, None] + 1)
        assert not layer.int_weights.flags.writeable
    verify_lowering(graph, net, random_observations(rng, net, 500))


@pytest.mark.unit_tests
@pytest.mark.slow
def test_lower_random_policies():
    """Bit-exact lowering across widths and bitwidths"""
    rng = np.random.default_rng(4)
    for _ in range(60):
        bits = tuple(int(b) for b in rng.integers(2, 9, size=3))
        net = random_policy(
            rng,
            obs_dim=int(rng.integers(1, 6)),
            action_dim=int(rng.integers(1, 4)),
            width=int(rng.integers(2, 24)),
            bits=bits,
        )
        graph = lower(net, verify_samples=256, seed=int(rng.integers(100)))
        verify_lowering(graph, net, random_observations(rng, net, 200))


@pytest.mark.unit_tests
@pytest.mark.slow
def test_integer_runtime_matches_fakequant():
    """Integer codes and actions equal the fake-quant ones on 1000 random
    policies, 100 observations each"""
    rng = np.random.default_rng(21)
    for _ in range(1000):
        bits = tuple(int(b) for b in rng.choice([2, 3, 4, 8], size=3))
        net = random_policy(
            rng,
            obs_dim=int(rng.integers(1, 6)),
            action_dim=int(rng.integers(1, 4)),
            width=int(rng.integers(2, 17)),
            bits=bits,
        )
        graph = lower(net, verify_samples=0)
        obs = random_observations(rng, net, 100)
        expected_action, tape = forward_fakequant(net, obs)
        action, trace = run_integer(graph, obs)
        names = ["input", "hidden0", "hidden1", "output"]
        for name, activation in zip(names, trace):
            np.testing.assert_array_equal(activation.codes, tape.codes[name])
        np.testing.assert_array_equal(action, expected_action)


@pytest.mark.unit_tests
@pytest.mark.fast
def test_lowering_errors():
    """Only frozen quantized policies are lowered"""
    rng = np.random.default_rng(5)
    with pytest.raises(LoweringError):
        lower(random_policy(rng))
    with pytest.raises(LoweringError):
        lower(PolicyNet(3, 1, width=4, quant_config=QuantConfig()))

    net = random_policy(rng, bits=(8, 4, 8))
    net.normalizer.unfreeze()
    with pytest.raises(LoweringError):
        lower(net)


@pytest.mark.unit_tests
@pytest.mark.fast
def test_int_layer_validation():
    """Malformed layers are rejected"""
    spec = QuantSpec(bits=2, signed=True, scale=1.0)
    kwargs = {
        "int_weights": np.array([[1, -1]]),
        "bias_int": np.array([0]),
        "thresholds": np.array([[-1, 0, 1]]),
        "acc_bits": 4,
        "in_spec": UNSIGNED_2,
        "out_spec": spec,
        "weight_spec": spec,
        "acc_step": 0.25,
    }
    layer = IntLayer(**kwargs)
    np.testing.assert_array_equal(
        layer.requantize(np.array([[-5, -1, 0, 7]]).T).ravel(), [-2, -1, 0, 1]
    )
    for key, value in (
        ("thresholds", np.array([[1, 0, 2]])),
        ("thresholds", np.array([[0, 1]])),
        ("bias_int", np.array([0, 1])),
        ("int_weights", np.array([[5, 0]])),
    ):
        with pytest.raises(ValueError):
            IntLayer(**{**kwargs, key: value})
