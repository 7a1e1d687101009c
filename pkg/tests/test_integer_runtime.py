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
"""Tests for the integer-only policy runtime."""

# Standard imports
import dataclasses
import os
import tempfile

# Third party imports
import numpy as np
import pytest

# qpolicy imports
from qpolicy.core.agents import evaluate
from qpolicy.core.environments import Pendulum
from qpolicy.core.integer_runtime import (
    AccumulatorOverflowError,
    ActivationRangeError,
    IntActivation,
    IntegerPolicy,
    checksum,
    count_macs,
    run_codes,
    run_integer,
)
from qpolicy.core.lowering import (
    IntegerGraph,
    IntLayer,
    accumulator_bits,
    build_tanh_lut,
    lower,
)
from qpolicy.core.network import Normalizer
from qpolicy.core.quant import QuantSpec
from qpolicy.tools.model_io import read_graph, write_graph

# Tests helpers
from .helpers import get_temporary_dir, random_observations, random_policy

SIGNED_2 = QuantSpec(bits=2, signed=True, scale=1.0)
UNSIGNED_2 = QuantSpec(bits=2, signed=False, scale=1.0)


def tiny_graph() -> IntegerGraph:
    """Hand-built 3 -> 4 -> 2 graph at 2 bits"""
    weights = [
        np.array([[1, -1, 0], [2, 0, -2], [0, 1, 1], [-1, -1, 2]]),
        np.array([[1, 0, -1, 2], [0, -2, 1, 1]]),
    ]
    specs = [
        (SIGNED_2, UNSIGNED_2, [0, 1, 2]),
        (UNSIGNED_2, SIGNED_2, [-1, 0, 1]),
    ]
    layers = []
    for int_weights, (in_spec, out_spec, row) in zip(weights, specs):
        out_dim = int_weights.shape[0]
        layers.append(
            IntLayer(
                int_weights=int_weights,
                bias_int=np.zeros(out_dim, dtype=np.int64),
                thresholds=np.tile(row, (out_dim, 1)),
                acc_bits=accumulator_bits(int_weights, in_spec),
                in_spec=in_spec,
                out_spec=out_spec,
                weight_spec=SIGNED_2,
                acc_step=0.25,
            )
        )
    normalizer = Normalizer(3, enabled=False)
    normalizer.freeze()
    return IntegerGraph(
        input_spec=SIGNED_2,
        normalizer=normalizer,
        obs_clip=10.0,
        layers=tuple(layers),
        tanh_lut=build_tanh_lut(SIGNED_2),
    )


@pytest.mark.unit_tests
@pytest.mark.fast
def test_tiny_graph():
    """Hand-checked codes of the 3 -> 4 -> 2 graph"""
    graph = tiny_graph()
    assert count_macs(graph) == 20
    assert graph.dims() == [3, 4, 2]

    trace = run_codes(graph, np.array([[1, -2, 0]]))
    # accumulators (3, 2, -2, 1) -> unsigned codes (3, 3, 0, 2)
    np.testing.assert_array_equal(trace[1].codes, [[3, 3, 0, 2]])
    # accumulators (7, -4) -> signed codes (1, -2)
    np.testing.assert_array_equal(trace[2].codes, [[1, -2]])

    action, trace = run_integer(graph, [[0.6, -1.2, 0.1]])
    np.testing.assert_array_equal(trace[0].codes, [[1, -2, 0]])
    np.testing.assert_allclose(action, np.tanh([[0.5, -1.0]]))


@pytest.mark.unit_tests
@pytest.mark.fast
def test_matches_fake_quant_policy():
    """Integer actions equal the fake-quantized actions"""
    rng = np.random.default_rng(0)
    for bits in ((8, 8, 8), (6, 3, 8), (4, 2, 4)):
        net = random_policy(rng, obs_dim=4, action_dim=2, width=16, bits=bits)
        graph = lower(net)
        obs = random_observations(rng, net, 300)
        action, trace = run_integer(graph, obs)
        _, tape = net.forward(obs)
        np.testing.assert_array_equal(action, tape.action)
        for name, activation in zip(
            ["input", "hidden0", "hidden1", "output"], trace
        ):
            np.testing.assert_array_equal(activation.codes, tape.codes[name])

        noise = 0.3 * rng.standard_normal(obs.shape)
        np.testing.assert_array_equal(
            run_integer(graph, obs, noise)[0], net.act(obs, obs_noise=noise)
        )


@pytest.mark.unit_tests
@pytest.mark.fast
def test_batch_semantics():
    """Rows are independent and runs are deterministic"""
    rng = np.random.default_rng(1)
    net = random_policy(rng, bits=(8, 3, 8))
    graph = lower(net)
    obs = random_observations(rng, net, 64)
    action, _ = run_integer(graph, obs)
    permutation = rng.permutation(64)
    np.testing.assert_array_equal(
        run_integer(graph, obs[permutation])[0], action[permutation]
    )
    np.testing.assert_array_equal(run_integer(graph, obs)[0], action)
    np.testing.assert_array_equal(run_integer(graph, obs[5])[0], action[5:6])

    with pytest.raises(ValueError):
        run_integer(graph, np.zeros((2, 4)))


@pytest.mark.unit_tests
@pytest.mark.fast
def test_integer_policy_evaluation():
    """The evaluation adapter reproduces the fake-quant returns"""
    rng = np.random.default_rng(2)
    net = random_policy(rng, bits=(8, 4, 8))
    policy = IntegerPolicy(lower(net))
    assert (policy.obs_dim, policy.action_dim) == (3, 1)
    env = Pendulum()
    np.testing.assert_array_equal(
        evaluate(policy, env, 2, 5).returns, evaluate(net, env, 2, 5).returns
    )
    np.testing.assert_array_equal(
        evaluate(policy, env, 2, 5, noise_sigma=0.2, noise_seed=3).returns,
        evaluate(net, env, 2, 5, noise_sigma=0.2, noise_seed=3).returns,
    )


@pytest.mark.unit_tests
@pytest.mark.fast
def test_checksum():
    """Checksums survive the graph document and see every weight"""
    rng = np.random.default_rng(3)
    graph = lower(random_policy(rng, bits=(8, 4, 8)))
    with tempfile.TemporaryDirectory(dir=get_temporary_dir()) as directory:
        filepath = os.path.join(directory, "graph.json")
        write_graph(filepath, graph)
        restored = read_graph(filepath, checksum=checksum(graph))
        assert checksum(restored) == checksum(graph)
        obs = rng.normal(size=(20, 3))
        np.testing.assert_array_equal(
            run_integer(restored, obs)[0], run_integer(graph, obs)[0]
        )
        with pytest.raises(ValueError):
            read_graph(filepath, checksum=checksum(graph) ^ 1)

    layer = graph.layers[1]
    weights = layer.int_weights.copy()
    weights[0, 0] = -weights[0, 0] if weights[0, 0] else 1
    changed = dataclasses.replace(
        graph,
        layers=(
            graph.layers[0],
            dataclasses.replace(layer, int_weights=weights),
            graph.layers[2],
        ),
    )
    assert checksum(changed) != checksum(graph)
    assert 0 <= checksum(graph) < 2**64


@pytest.mark.unit_tests
@pytest.mark.fast
def test_range_errors():
    """Out-of-range codes and accumulators are reported"""
    with pytest.raises(TypeError):
        IntActivation(np.array([0.5]), SIGNED_2)
    with pytest.raises(ActivationRangeError):
        IntActivation(np.array([[0, 2]]), SIGNED_2)
    IntActivation(np.array([[-2, 1]]), SIGNED_2)

    graph = tiny_graph()
    narrow = dataclasses.replace(graph.layers[0], acc_bits=2)
    graph = dataclasses.replace(graph, layers=(narrow, graph.layers[1]))
    with pytest.raises(AccumulatorOverflowError):
        run_codes(graph, np.array([[1, -2, 0]]))
