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
Policy and critic networks with hand-written reverse-mode gradients.

The policy is a two-hidden-layer MLP. In quantized mode, QDQ steps are
imposed at the input, on every weight matrix and bias, after every ReLU
and before the final tanh:

    normalize -> QDQ_in -> [matvec -> +bias -> ReLU -> QDQ] x 2
              -> matvec -> +bias -> QDQ_out -> tanh

Matrix-vector products of the quantized forward pass are evaluated on the
integer codes and scaled once by the accumulator step, so that every
pre-activation equals accumulator * step exactly as in the integer graph.
"""
# pylint: disable=too-many-instance-attributes,too-many-locals

# Standard imports
import copy
from dataclasses import dataclass, field
from typing import Dict, List, Optional

# Third party imports
import numpy as np

# qpolicy imports
from . import quant
from .quant import QuantSpec, ScaleState

STE_MODES = ["clipped", "plain"]

# Names of the activation quantizers, in forward order
ACTIVATION_QUANTIZERS = ["input", "hidden0", "hidden1", "output"]

NUM_LAYERS = 3


@dataclass(frozen=True)
class QuantConfig:
    """Bitwidths and scale-management options of a quantized policy"""

    bits_in: int = 8
    bits_core: int = 8
    bits_out: int = 8
    bias_bits: int = 24
    warmup_steps: int = 300
    percentile: float = 99.9
    ema_momentum: float = 0.9
    activation_ste: str = "clipped"
    weight_ste: str = "plain"
    init_activation_scale: float = 1.0

    def __post_init__(self):
        for name in ("bits_in", "bits_core", "bits_out", "bias_bits"):
            if getattr(self, name) < 2:
                raise ValueError(
                    f"QuantConfig '{name}' should be >= 2. "
                    f"Found {getattr(self, name)}."
                )
        for name in ("activation_ste", "weight_ste"):
            if getattr(self, name) not in STE_MODES:
                raise ValueError(
                    f"QuantConfig '{name}' should be in {STE_MODES}. "
                    f"Found '{getattr(self, name)}'."
                )
        if self.warmup_steps < 0:
            raise ValueError("QuantConfig 'warmup_steps' should be >= 0.")

    def to_dict(self) -> dict:
        """Plain dictionary (JSON compatible)"""
        return dict(self.__dict__)


class Normalizer:
    """Per-dimension running mean / variance standardization"""

    def __init__(
        self,
        dim: int,
        epsilon: float = 1e-8,
        enabled: bool = True,
    ) -> None:
        self.dim = int(dim)
        self.epsilon = float(epsilon)
        self.enabled = bool(enabled)
        self.frozen = False

        self.count = 0
        self.mean = np.zeros(self.dim, dtype=np.float64)
        self.m2 = np.zeros(self.dim, dtype=np.float64)

    @property
    def var(self) -> np.ndarray:
        """Population variance (ones before any update)"""
        if self.count == 0:
            return np.ones(self.dim, dtype=np.float64)
        return self.m2 / self.count

    def update(self, obs: np.ndarray) -> None:
        """Welford's online update with one observation or a batch of rows"""
        if self.frozen or not self.enabled:
            return
        obs = np.atleast_2d(np.asarray(obs, dtype=np.float64))
        if obs.shape[-1] != self.dim:
            raise ValueError(
                f"Observation dimension {obs.shape[-1]} does not match the "
                f"normalizer dimension {self.dim}."
            )
        for row in obs:
            self.count += 1
            delta = row - self.mean
            self.mean += delta / self.count
            self.m2 += delta * (row - self.mean)

    def normalize(self, obs: np.ndarray) -> np.ndarray:
        """(obs - mean) / sqrt(var + epsilon)"""
        obs = np.asarray(obs, dtype=np.float64)
        if not self.enabled:
            return obs.copy()
        return (obs - self.mean) / np.sqrt(self.var + self.epsilon)

    def freeze(self) -> None:
        """Stop updating statistics"""
        self.frozen = True

    def unfreeze(self) -> None:
        """Resume updating statistics"""
        self.frozen = False

    def copy(self) -> "Normalizer":
        """Independent copy"""
        return copy.deepcopy(self)


def normalize(norm: Normalizer, obs: np.ndarray) -> np.ndarray:
    """Normalize obs with the normalizer statistics"""
    return norm.normalize(obs)


def update_normalizer(norm: Normalizer, obs: np.ndarray) -> Normalizer:
    """Update norm statistics in place (no-op when frozen) and return it"""
    norm.update(obs)
    return norm


def kaiming_uniform(
    rng: np.random.Generator, fan_out: int, fan_in: int
) -> tuple:
    """Weights and bias drawn from U(-1/sqrt(fan_in), 1/sqrt(fan_in))"""
    bound = 1.0 / np.sqrt(fan_in)
    weights = rng.uniform(-bound, bound, size=(fan_out, fan_in))
    bias = rng.uniform(-bound, bound, size=fan_out)
    return weights, bias


class DenseNet:
    """FP32 ReLU multi-layer perceptron with a linear output"""

    def __init__(self, sizes: List[int], rng: np.random.Generator) -> None:
        if len(sizes) < 2:
            raise ValueError(
                f"DenseNet needs at least an input and an output size. "
                f"Found {sizes}."
            )
        self.sizes = [int(s) for s in sizes]
        self.params: Dict[str, np.ndarray] = {}
        for k in range(len(sizes) - 1):
            weights, bias = kaiming_uniform(rng, sizes[k + 1], sizes[k])
            self.params[f"w{k}"] = weights
            self.params[f"b{k}"] = bias

    @property
    def num_layers(self) -> int:
        """Number of affine layers"""
        return len(self.sizes) - 1

    def forward(self, x: np.ndarray) -> tuple:
        """
        Forward pass

        Parameters
        ----------
        x: np.ndarray
            Batch of inputs (N, sizes[0])

        Returns
        -------
        y: np.ndarray
            Outputs (N, sizes[-1])
        cache: list
            Layer inputs and pre-activations kept for backward
        """
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        cache = []
        for k in range(self.num_layers):
            z = x @ self.params[f"w{k}"].T + self.params[f"b{k}"]
            cache.append((x, z))
            x = np.maximum(z, 0.0) if k < self.num_layers - 1 else z
        return x, cache

    def backward(self, cache: list, grad_y: np.ndarray) -> tuple:
        """
        Reverse pass

        Returns
        -------
        grads: dict
            Gradients keyed like params
        grad_x: np.ndarray
            Gradient with respect to the network input
        """
        grads = {}
        grad = np.asarray(grad_y, dtype=np.float64)
        for k in reversed(range(self.num_layers)):
            x, z = cache[k]
            if k < self.num_layers - 1:
                grad = grad * (z > 0)
            grads[f"w{k}"] = grad.T @ x
            grads[f"b{k}"] = grad.sum(axis=0)
            grad = grad @ self.params[f"w{k}"]
        return grads, grad

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.forward(x)[0]

    def copy(self) -> "DenseNet":
        """Independent copy"""
        return copy.deepcopy(self)


@dataclass
class QuantNode:
    """Record of one QDQ node for the backward pass"""

    name: str
    x: np.ndarray
    y: np.ndarray
    spec: QuantSpec
    clipped: bool
    trainable: bool


@dataclass
class LayerRecord:
    """Record of one affine layer for the backward pass"""

    x: np.ndarray
    weights: np.ndarray
    weights_eff: np.ndarray
    bias: np.ndarray
    z: np.ndarray
    weight_spec: Optional[QuantSpec] = None
    bias_spec: Optional[QuantSpec] = None


@dataclass
class Tape:
    """Everything the backward pass of PolicyNet needs"""

    quantized: bool
    surrogate: bool
    weight_clipped: bool
    features: np.ndarray
    layers: List[LayerRecord] = field(default_factory=list)
    nodes: Dict[str, QuantNode] = field(default_factory=dict)
    codes: Dict[str, np.ndarray] = field(default_factory=dict)
    mu: Optional[np.ndarray] = None
    action: Optional[np.ndarray] = None


class PolicyNet:
    """
    Deterministic policy mu(s) followed by tanh, optionally fake-quantized,
    with an optional FP32 sigma branch for SAC training.
    """

    def __init__(
        self,
        obs_dim: int,
        action_dim: int,
        width: int = 256,
        quant_config: Optional[QuantConfig] = None,
        sigma_branch: bool = False,
        normalize_input: bool = True,
        obs_clip: float = 10.0,
        seed: int = 0,
    ) -> None:
        """
        Init a policy network

        Parameters
        ----------
        obs_dim: int
            Observation dimension
        action_dim: int
            Action dimension
        width: int (default=256)
            Hidden layer width (both hidden layers)
        quant_config: QuantConfig (default=None)
            Quantization configuration, None for an FP32 policy
        sigma_branch: bool (default=False)
            Whether to add the FP32 log-sigma branch (SAC)
        normalize_input: bool (default=True)
            Running input normalization (identity when False)
        obs_clip: float (default=10.)
            Normalized observations are clipped to [-obs_clip, obs_clip]
        seed: int (default=0)
            Seed of the weight initialization
        """
        self.obs_dim = int(obs_dim)
        self.action_dim = int(action_dim)
        self.width = int(width)
        self.quant_config = quant_config
        self.obs_clip = float(obs_clip)
        self.normalizer = Normalizer(self.obs_dim, enabled=normalize_input)

        rng = np.random.default_rng(seed)
        sizes = [self.obs_dim, self.width, self.width, self.action_dim]
        self.params: Dict[str, np.ndarray] = {}
        for k in range(NUM_LAYERS):
            weights, bias = kaiming_uniform(rng, sizes[k + 1], sizes[k])
            self.params[f"w{k}"] = weights
            self.params[f"b{k}"] = bias

        self.scale_states: Dict[str, ScaleState] = {}
        if self.quantized:
            for name in ACTIVATION_QUANTIZERS:
                spec = QuantSpec(
                    bits=self._activation_bits(name),
                    signed=name in ("input", "output"),
                    scale=quant_config.init_activation_scale,
                )
                self.scale_states[name] = ScaleState(
                    spec=spec,
                    warmup_steps_remaining=quant_config.warmup_steps,
                    ema_statistic=quant_config.init_activation_scale,
                    learnable=True,
                )
                self.params[f"log_s_{name}"] = np.array(
                    [np.log(spec.scale)], dtype=np.float64
                )

        self.sigma_branch = (
            DenseNet([self.obs_dim, 64, self.action_dim], rng)
            if sigma_branch
            else None
        )

    # ------------------------------------------------------------------ #
    # Properties and helpers
    # ------------------------------------------------------------------ #

    @property
    def quantized(self) -> bool:
        """Whether the policy carries QDQ nodes"""
        return self.quant_config is not None

    def _activation_bits(self, name: str) -> int:
        if name == "input":
            return self.quant_config.bits_in
        if name == "output":
            return self.quant_config.bits_out
        return self.quant_config.bits_core

    def activation_spec(self, name: str) -> QuantSpec:
        """Current spec of an activation quantizer"""
        return self.scale_states[name].spec

    def weight_spec(self, layer: int) -> QuantSpec:
        """Signed per-tensor weight spec, scale = max |w|"""
        return QuantSpec(
            bits=self.quant_config.bits_core,
            signed=True,
            scale=quant.weight_scale(self.params[f"w{layer}"]),
        )

    def bias_spec(self, layer: int, in_spec: QuantSpec) -> QuantSpec:
        """
        Signed bias spec whose integer step is the accumulator step.
        The width is at least bias_bits and grows with the input and weight
        widths so the representable bias range does not shrink.
        """
        w_spec = self.weight_spec(layer)
        bits = max(self.quant_config.bias_bits, in_spec.bits + w_spec.bits + 8)
        acc_step = in_spec.step * w_spec.step
        return QuantSpec(
            bits=bits, signed=True, scale=acc_step * 2 ** (bits - 1)
        )

    def layer_in_spec(self, layer: int) -> QuantSpec:
        """Spec of the values entering a layer's matvec"""
        return self.activation_spec(
            "input" if layer == 0 else f"hidden{layer - 1}"
        )

    def layer_out_spec(self, layer: int) -> QuantSpec:
        """Spec applied to a layer's output"""
        return self.activation_spec(
            "output" if layer == NUM_LAYERS - 1 else f"hidden{layer}"
        )

    @property
    def in_warmup(self) -> bool:
        """Whether some activation scale is still in warm-up"""
        return any(s.in_warmup for s in self.scale_states.values())

    def sync_scales(self) -> None:
        """Propagate learned log-scales to the quantizer specs"""
        for name, state in self.scale_states.items():
            scale = max(
                float(np.exp(self.params[f"log_s_{name}"][0])),
                quant.EPS_SCALE,
            )
            state.spec = state.spec.with_scale(scale)

    def parameters(self) -> Dict[str, np.ndarray]:
        """Flat view of every trainable array (sigma branch prefixed)"""
        params = dict(self.params)
        if self.sigma_branch is not None:
            for key, value in self.sigma_branch.params.items():
                params[f"sigma.{key}"] = value
        return params

    def features(
        self, obs: np.ndarray, obs_noise: Optional[np.ndarray] = None
    ) -> np.ndarray:
        """Normalized (optionally perturbed) and clipped observations"""
        obs = np.atleast_2d(np.asarray(obs, dtype=np.float64))
        if obs.shape[-1] != self.obs_dim:
            raise ValueError(
                f"Observation dimension {obs.shape[-1]} does not match the "
                f"policy input dimension {self.obs_dim}."
            )
        x = self.normalizer.normalize(obs)
        if obs_noise is not None:
            x = x + obs_noise
        return np.clip(x, -self.obs_clip, self.obs_clip)

    def _calibrate(self, name: str, values: np.ndarray) -> None:
        state = self.scale_states[name]
        if not state.in_warmup:
            return
        state = quant.update_scale_warmup(
            state,
            values,
            percentile=self.quant_config.percentile,
            momentum=self.quant_config.ema_momentum,
        )
        self.scale_states[name] = state
        self.params[f"log_s_{name}"][0] = np.log(state.spec.scale)

    def _quantize_activation(
        self,
        tape: Tape,
        name: str,
        values: np.ndarray,
        calibrate: bool,
    ) -> np.ndarray:
        if calibrate:
            self._calibrate(name, values)
        state = self.scale_states[name]
        clipped = self.quant_config.activation_ste == "clipped"
        if tape.surrogate:
            out = quant.ste_surrogate(values, state.spec, clipped)
        else:
            codes = quant.quantize_int(values, state.spec)
            tape.codes[name] = codes
            out = quant.dequantize(codes, state.spec)
        tape.nodes[name] = QuantNode(
            name=name,
            x=values,
            y=out,
            spec=state.spec,
            clipped=clipped,
            trainable=state.trainable,
        )
        return out

    # ------------------------------------------------------------------ #
    # Forward / backward
    # ------------------------------------------------------------------ #

    def forward(
        self,
        obs: np.ndarray,
        calibrate: bool = False,
        surrogate: bool = False,
        obs_noise: Optional[np.ndarray] = None,
    ) -> tuple:
        """
        Forward pass of the deterministic policy.

        Parameters
        ----------
        obs: np.ndarray
            Raw observations (obs_dim,) or (N, obs_dim)
        calibrate: bool (default=False)
            Feed activation statistics to the scales still in warm-up
        surrogate: bool (default=False)
            Replace every QDQ by its straight-through surrogate
        obs_noise: np.ndarray (default=None)
            Perturbation added to the normalized observations

        Returns
        -------
        action: np.ndarray
            tanh of the output, in (-1, 1), shape (N, action_dim)
        tape: Tape
            Backprop record
        """
        x = self.features(obs, obs_noise)
        tape = Tape(
            quantized=self.quantized,
            surrogate=surrogate and self.quantized,
            weight_clipped=(
                self.quantized and self.quant_config.weight_ste == "clipped"
            ),
            features=x,
        )

        if self.quantized:
            x = self._quantize_activation(tape, "input", x, calibrate)

        for k in range(NUM_LAYERS):
            weights = self.params[f"w{k}"]
            bias = self.params[f"b{k}"]
            if self.quantized:
                z, record = self._quantized_affine(tape, k, x)
            else:
                z = x @ weights.T + bias
                record = LayerRecord(
                    x=x, weights=weights, weights_eff=weights, bias=bias, z=z
                )
            tape.layers.append(record)

            if k < NUM_LAYERS - 1:
                x = np.maximum(z, 0.0)
                if self.quantized:
                    x = self._quantize_activation(
                        tape, f"hidden{k}", x, calibrate
                    )
            elif self.quantized:
                x = self._quantize_activation(tape, "output", z, calibrate)
            else:
                x = z

        tape.mu = x
        tape.action = np.tanh(x)
        return tape.action, tape

    def _quantized_affine(self, tape: Tape, k: int, x: np.ndarray) -> tuple:
        weights = self.params[f"w{k}"]
        bias = self.params[f"b{k}"]
        in_spec = tape.nodes["input" if k == 0 else f"hidden{k - 1}"].spec
        w_spec = self.weight_spec(k)
        b_spec = self.bias_spec(k, in_spec)
        acc_step = in_spec.step * w_spec.step

        if tape.surrogate:
            weights_eff = quant.ste_surrogate(
                weights, w_spec, tape.weight_clipped
            )
            bias_eff = quant.ste_surrogate(bias, b_spec, tape.weight_clipped)
            z = x @ weights_eff.T + bias_eff
        else:
            in_name = "input" if k == 0 else f"hidden{k - 1}"
            w_codes = quant.quantize_int(weights, w_spec)
            b_codes = quant.quantize_int(bias, b_spec)
            acc = tape.codes[in_name].astype(np.int64) @ w_codes.T
            z = (acc + b_codes).astype(np.float64) * acc_step
            weights_eff = quant.dequantize(w_codes, w_spec)
            tape.codes[f"acc{k}"] = acc

        record = LayerRecord(
            x=x,
            weights=weights,
            weights_eff=weights_eff,
            bias=bias,
            z=z,
            weight_spec=w_spec,
            bias_spec=b_spec,
        )
        return z, record

    def backward(
        self, tape: Tape, loss_grad: np.ndarray, wrt: str = "action"
    ) -> Dict[str, np.ndarray]:
        """
        Gradients of the loss for all parameters and trainable scales.

        Parameters
        ----------
        tape: Tape
            Record of the forward pass
        loss_grad: np.ndarray
            Gradient of the loss with respect to the action (wrt="action")
            or to the pre-tanh output mu (wrt="mu")
        wrt: str (default="action")
            Which output loss_grad refers to

        Returns
        -------
        grads: dict
            Gradients keyed like params ("log_s_*" for trainable scales)
        """
        if wrt not in ("action", "mu"):
            raise ValueError(
                f"'wrt' should be 'action' or 'mu'. Found '{wrt}'."
            )
        grad = np.asarray(loss_grad, dtype=np.float64).reshape(tape.mu.shape)
        if wrt == "action":
            grad = grad * (1.0 - tape.action**2)

        grads: Dict[str, np.ndarray] = {}
        if tape.quantized:
            grad = self._node_backward(tape, "output", grad, grads)

        for k in reversed(range(NUM_LAYERS)):
            record = tape.layers[k]
            if k < NUM_LAYERS - 1:
                if tape.quantized:
                    grad = self._node_backward(tape, f"hidden{k}", grad, grads)
                grad = grad * (record.z > 0)

            grad_w = grad.T @ record.x
            grad_b = grad.sum(axis=0)
            if tape.quantized:
                grad_w = quant.qdq_backward(
                    grad_w,
                    record.weights,
                    record.weight_spec,
                    tape.weight_clipped,
                )
                grad_b = quant.qdq_backward(
                    grad_b, record.bias, record.bias_spec, tape.weight_clipped
                )
            grads[f"w{k}"] = grad_w
            grads[f"b{k}"] = grad_b
            grad = grad @ record.weights_eff

        if tape.quantized:
            self._node_backward(tape, "input", grad, grads)

        return grads

    @staticmethod
    def _node_backward(
        tape: Tape, name: str, grad: np.ndarray, grads: dict
    ) -> np.ndarray:
        node = tape.nodes[name]
        if node.trainable:
            grad_scale = quant.qdq_scale_grad(
                grad, node.x, node.y, node.spec, node.clipped
            )
            # through the log-scale parameterization
            grads[f"log_s_{name}"] = np.array([grad_scale * node.spec.scale])
        return quant.qdq_backward(grad, node.x, node.spec, node.clipped)

    def act(
        self, obs: np.ndarray, obs_noise: Optional[np.ndarray] = None
    ) -> np.ndarray:
        """Deterministic action tanh(mu(s)) used for evaluation"""
        return self.forward(obs, obs_noise=obs_noise)[0]

    def freeze(self) -> None:
        """Freeze the normalizer and stop scale warm-up and learning"""
        self.normalizer.freeze()
        for state in self.scale_states.values():
            state.warmup_steps_remaining = 0
            state.learnable = False

    def copy(self) -> "PolicyNet":
        """Independent copy"""
        return copy.deepcopy(self)

    def serialize(self, filepath: str) -> None:
        """Write the policy JSON document"""
        from ..tools.model_io import write_policy

        write_policy(filepath, self)


def forward_fakequant(
    net: PolicyNet, obs: np.ndarray, **kwargs
) -> tuple:
    """Forward pass returning (action, tape), see PolicyNet.forward"""
    return net.forward(obs, **kwargs)


def backward(
    net: PolicyNet, tape: Tape, loss_grad: np.ndarray, wrt: str = "action"
) -> Dict[str, np.ndarray]:
    """Gradients of the loss, see PolicyNet.backward"""
    return net.backward(tape, loss_grad, wrt=wrt)
