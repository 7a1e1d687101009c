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
"""Tests for the fake-quantized policy network."""

# Third party imports
import numpy as np
import pytest

# qpolicy imports
from qpolicy.core.network import (
    DenseNet,
    Normalizer,
    PolicyNet,
    QuantConfig,
    backward,
    forward_fakequant,
    normalize,
    update_normalizer,
)
from qpolicy.core.quant import quantize_int
from qpolicy.tools.model_io import policy_from_dict, policy_to_dict

# Tests helpers
from .helpers import random_observations, random_policy


def _loss(net, obs, weights):
    action, _ = net.forward(obs, surrogate=True)
    return float(np.sum(weights * action))


def _check_gradients(net, obs, rng, keys):
    """Central finite differences against backward()"""
    weights = rng.normal(size=(obs.shape[0], net.action_dim))
    _, tape = forward_fakequant(net, obs, surrogate=True)
    grads = backward(net, tape, weights)
    eps = 1e-6

    def shifted_loss(param, index, value):
        param[index] = value
        if net.quantized:
            net.sync_scales()
        return _loss(net, obs, weights)

    for key in keys:
        param = net.params[key]
        numeric = np.zeros_like(param)
        for index in np.ndindex(param.shape):
            original = param[index]
            plus = shifted_loss(param, index, original + eps)
            minus = shifted_loss(param, index, original - eps)
            shifted_loss(param, index, original)
            numeric[index] = (plus - minus) / (2 * eps)
        np.testing.assert_allclose(grads[key], numeric, rtol=1e-4, atol=1e-7)


@pytest.mark.unit_tests
@pytest.mark.fast
def test_zero_network():
    """Zero weights and biases give a zero action"""
    net = PolicyNet(3, 2, width=8, quant_config=QuantConfig(warmup_steps=0))
    for key in ("w0", "b0", "w1", "b1", "w2", "b2"):
        net.params[key][...] = 0.0
    action, tape = net.forward(np.random.default_rng(0).normal(size=(5, 3)))
    np.testing.assert_array_equal(action, np.zeros((5, 2)))
    np.testing.assert_array_equal(tape.codes["output"], 0)


@pytest.mark.unit_tests
@pytest.mark.fast
def test_high_precision_matches_fp32():
    """16-bit quantizers with covering scales are transparent"""
    rng = np.random.default_rng(3)
    config = QuantConfig(
        bits_in=16,
        bits_core=16,
        bits_out=16,
        warmup_steps=0,
        init_activation_scale=20.0,
    )
    for _ in range(50):
        quantized = PolicyNet(
            3, 2, width=8, quant_config=config, seed=int(rng.integers(1000))
        )
        fp32 = PolicyNet(3, 2, width=8)
        for k in range(3):
            fp32.params[f"w{k}"] = quantized.params[f"w{k}"].copy()
            fp32.params[f"b{k}"] = quantized.params[f"b{k}"].copy()
        obs = rng.normal(size=(20, 3))
        error = np.abs(quantized.act(obs) - fp32.act(obs))
        assert error.max() <= 1e-2


@pytest.mark.unit_tests
@pytest.mark.fast
def test_lattice_inputs():
    """Every matvec input is on its quantizer lattice"""
    rng = np.random.default_rng(5)
    net = random_policy(rng, bits=(4, 3, 8))
    _, tape = net.forward(random_observations(rng, net))
    for k, record in enumerate(tape.layers):
        spec = net.layer_in_spec(k)
        steps = record.x / spec.step
        np.testing.assert_allclose(steps, np.rint(steps), rtol=0, atol=1e-9)
        np.testing.assert_array_equal(
            tape.codes["input" if k == 0 else f"hidden{k - 1}"],
            np.rint(steps).astype(np.int64),
        )


@pytest.mark.unit_tests
@pytest.mark.fast
def test_wide_accumulators_exact():
    """Fake-quant accumulators are exact integers beyond float precision"""
    rng = np.random.default_rng(13)
    net = random_policy(rng, width=64, bits=(28, 28, 28))
    _, tape = net.forward(random_observations(rng, net, 20))
    inputs = ["input", "hidden0", "hidden1"]
    for k, name in enumerate(inputs):
        acc = tape.codes[f"acc{k}"]
        assert acc.dtype == np.int64
        w_codes = quantize_int(net.params[f"w{k}"], net.weight_spec(k))
        exact = tape.codes[name].astype(object) @ w_codes.T.astype(object)
        assert acc.tolist() == exact.tolist()
    largest = np.abs(tape.codes["hidden1"]).max() * np.abs(w_codes).max()
    assert largest > 2**53


@pytest.mark.unit_tests
@pytest.mark.fast
def test_gradients_fp32():
    """FP32 backward against finite differences"""
    rng = np.random.default_rng(7)
    net = PolicyNet(3, 2, width=6, seed=1)
    obs = rng.normal(size=(4, 3))
    _check_gradients(net, obs, rng, ["w0", "b0", "w1", "b1", "w2", "b2"])


@pytest.mark.unit_tests
@pytest.mark.slow
def test_gradients_surrogate():
    """Straight-through backward against finite differences of the
    surrogate forward pass, scales included"""
    rng = np.random.default_rng(11)
    for trial in range(100):
        config = QuantConfig(
            bits_in=4,
            bits_core=3,
            bits_out=4,
            warmup_steps=0,
            init_activation_scale=float(rng.uniform(0.5, 2.0)),
        )
        net = PolicyNet(3, 1, width=5, quant_config=config, seed=trial)
        obs = rng.normal(size=(3, 3))
        keys = ["w0", "b0", "w1", "b1", "w2", "b2"] + [
            f"log_s_{name}"
            for name in ("input", "hidden0", "hidden1", "output")
        ]
        _check_gradients(net, obs, rng, keys)


@pytest.mark.unit_tests
@pytest.mark.fast
def test_saturated_activation_gradient():
    """Clipped STE blocks the gradient of a saturated neuron"""
    net = PolicyNet(3, 1, width=16, quant_config=QuantConfig(warmup_steps=0))
    net.params["b0"][0] = 100.0
    obs = np.random.default_rng(0).normal(size=(8, 3))
    _, tape = net.forward(obs)
    grads = net.backward(tape, np.ones((8, 1)))
    np.testing.assert_array_equal(grads["w0"][0], 0.0)
    assert grads["b0"][0] == 0.0
    assert np.any(grads["w0"][1:] != 0.0)


@pytest.mark.unit_tests
@pytest.mark.fast
def test_zero_loss_gradient():
    """Zero upstream gradient gives zero gradients"""
    rng = np.random.default_rng(2)
    net = random_policy(rng, bits=(8, 4, 8))
    for state in net.scale_states.values():
        state.learnable = True
    _, tape = net.forward(random_observations(rng, net, 10))
    grads = net.backward(tape, np.zeros((10, 1)))
    for value in grads.values():
        np.testing.assert_array_equal(value, 0.0)


@pytest.mark.unit_tests
@pytest.mark.fast
def test_normalizer():
    """Running statistics, freezing and the disabled identity"""
    norm = Normalizer(3)
    first = np.array([1.0, -2.0, 0.5])
    update_normalizer(norm, first)
    np.testing.assert_array_equal(norm.mean, first)
    np.testing.assert_allclose(normalize(norm, first), 0.0)

    norm = Normalizer(2)
    norm.update(np.random.default_rng(0).standard_normal((100_000, 2)))
    np.testing.assert_allclose(norm.mean, 0.0, atol=0.02)
    np.testing.assert_allclose(norm.var, 1.0, atol=0.05)

    norm.freeze()
    mean, var = norm.mean.copy(), norm.var.copy()
    norm.update(np.full((10, 2), 50.0))
    np.testing.assert_array_equal(norm.mean, mean)
    np.testing.assert_array_equal(norm.var, var)

    identity = Normalizer(2, enabled=False)
    identity.update(np.ones((4, 2)))
    np.testing.assert_array_equal(
        identity.normalize([[3.0, 4.0]]), [[3.0, 4.0]]
    )

    with pytest.raises(ValueError):
        Normalizer(2).update(np.ones(3))


@pytest.mark.unit_tests
@pytest.mark.fast
def test_dense_net_gradients():
    """Critic network backward against finite differences"""
    rng = np.random.default_rng(4)
    net = DenseNet([4, 6, 1], rng)
    x = rng.normal(size=(5, 4))
    y, cache = net.forward(x)
    grads, grad_x = net.backward(cache, np.ones_like(y))
    eps = 1e-6
    numeric = np.zeros_like(x)
    for index in np.ndindex(x.shape):
        shifted = x.copy()
        shifted[index] += eps
        plus = net(shifted).sum()
        shifted[index] -= 2 * eps
        numeric[index] = (plus - net(shifted).sum()) / (2 * eps)
    np.testing.assert_allclose(grad_x, numeric, rtol=1e-5, atol=1e-8)
    assert grads["w0"].shape == (6, 4)


@pytest.mark.unit_tests
@pytest.mark.fast
def test_freeze_and_document():
    """A frozen policy keeps its actions through its JSON document"""
    rng = np.random.default_rng(8)
    net = random_policy(rng, bits=(6, 3, 8), sigma_branch=True)
    assert not net.in_warmup
    obs = random_observations(rng, net, 50)
    restored = policy_from_dict(policy_to_dict(net))
    np.testing.assert_array_equal(restored.act(obs), net.act(obs))
    assert restored.normalizer.frozen
    assert restored.quant_config == net.quant_config

    with pytest.raises(ValueError):
        net.act(np.zeros((2, 5)))
