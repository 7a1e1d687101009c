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
Quantize / de-quantize arithmetic shared by fake-quant training and the
integer deployment path.

A quantizer is described by a QuantSpec (bitwidth, signedness, scale). The
integer code of a real value x is

    Q(x) = clip(round_half_even(x / scale * q_s), q_min, q_max)

and its de-quantized value is scale / q_s * Q(x). Both the training
forward pass and the lowering compiler go through the functions of this
module, in the same floating-point evaluation order, which is what makes
the integer graph bit-exact with respect to the fake-quant network.
"""

# Standard imports
import logging
from dataclasses import dataclass, replace
from typing import Union

# Third party imports
import numpy as np

# Floor applied to every scale (dead channels, all-zero weight matrices)
EPS_SCALE = 1e-8

ArrayLike = Union[float, np.ndarray]


class NonFiniteValueError(ValueError):
    """Raised when a quantizer receives NaN or infinite values"""


@dataclass(frozen=True)
class QuantSpec:
    """Bitwidth, signedness and scale of one quantizer"""

    bits: int
    signed: bool
    scale: float

    def __post_init__(self):
        if isinstance(self.bits, bool) or not isinstance(
            self.bits, (int, np.integer)
        ):
            raise TypeError(
                f"QuantSpec 'bits' should be an integer. "
                f"Found '{type(self.bits)}'."
            )
        if self.bits < 2:
            raise ValueError(
                f"QuantSpec 'bits' should be >= 2. Found {self.bits}."
            )
        if not np.isfinite(self.scale) or self.scale <= 0:
            raise ValueError(
                f"QuantSpec 'scale' should be positive and finite. "
                f"Found {self.scale}."
            )
        # normalize numpy scalars so that specs compare and serialize cleanly
        object.__setattr__(self, "bits", int(self.bits))
        object.__setattr__(self, "signed", bool(self.signed))
        object.__setattr__(self, "scale", float(self.scale))

    @property
    def q_min(self) -> int:
        """Smallest integer code"""
        return -(2 ** (self.bits - 1)) if self.signed else 0

    @property
    def q_max(self) -> int:
        """Largest integer code"""
        if self.signed:
            return 2 ** (self.bits - 1) - 1
        return 2**self.bits - 1

    @property
    def q_s(self) -> int:
        """To-integer scaling factor max(|q_min|, |q_max|)"""
        return max(abs(self.q_min), abs(self.q_max))

    @property
    def step(self) -> float:
        """De-quantization factor scale / q_s (one integer step in reals)"""
        return self.scale / self.q_s

    @property
    def num_levels(self) -> int:
        """Number of representable codes"""
        return self.q_max - self.q_min + 1

    def with_scale(self, scale: float) -> "QuantSpec":
        """Copy of the spec with another scale"""
        return replace(self, scale=scale)

    def to_dict(self) -> dict:
        """JSON document {bits, signed, scale}, scale as decimal string"""
        return {
            "bits": self.bits,
            "signed": self.signed,
            "scale": repr(self.scale),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "QuantSpec":
        """Inverse of to_dict"""
        for key in ("bits", "signed", "scale"):
            if key not in data:
                raise ValueError(f"QuantSpec document is missing '{key}'.")
        return cls(
            bits=int(data["bits"]),
            signed=bool(data["signed"]),
            scale=float(data["scale"]),
        )


@dataclass
class ScaleState:
    """Activation-scale initialization state of one quantizer"""

    spec: QuantSpec
    warmup_steps_remaining: int = 300
    ema_statistic: float = 0.0
    learnable: bool = True

    @property
    def in_warmup(self) -> bool:
        """Whether the scale still follows the input statistics"""
        return self.warmup_steps_remaining > 0

    @property
    def trainable(self) -> bool:
        """Whether the scale may be changed by gradient updates"""
        return self.learnable and not self.in_warmup


def _to_lattice(x: ArrayLike, spec: QuantSpec) -> np.ndarray:
    """Real value expressed in integer steps (before rounding)"""
    return np.asarray(x, dtype=np.float64) / spec.scale * spec.q_s


def quantize_int(x: ArrayLike, spec: QuantSpec) -> np.ndarray:
    """
    Integer code of x: clip(round_half_even(x / scale * q_s), q_min, q_max)

    Parameters
    ----------
    x: float or np.ndarray
        Real values
    spec: QuantSpec
        Quantizer description

    Returns
    -------
    codes: np.ndarray
        int64 codes in [q_min, q_max], same shape as x
    """
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise NonFiniteValueError(
            f"Cannot quantize non-finite values ({spec.bits}-bit "
            f"{'signed' if spec.signed else 'unsigned'} quantizer, scale "
            f"{spec.scale}). Upstream state is corrupted."
        )
    # np.rint rounds half to even, as the IEEE default
    codes = np.clip(np.rint(_to_lattice(x, spec)), spec.q_min, spec.q_max)
    return codes.astype(np.int64)


def dequantize(codes: ArrayLike, spec: QuantSpec) -> np.ndarray:
    """Real value of integer codes: scale / q_s * codes"""
    return spec.step * np.asarray(codes, dtype=np.float64)


def qdq(x: ArrayLike, spec: QuantSpec) -> np.ndarray:
    """Project x onto the quantizer lattice and map it back to reals"""
    return dequantize(quantize_int(x, spec), spec)


def clip_range(spec: QuantSpec) -> tuple:
    """Real interval [scale*q_min/q_s, scale*q_max/q_s] covered by spec"""
    return spec.step * spec.q_min, spec.step * spec.q_max


def in_range_mask(x: ArrayLike, spec: QuantSpec) -> np.ndarray:
    """Whether x / scale * q_s lies inside [q_min, q_max]"""
    t = _to_lattice(x, spec)
    return (t >= spec.q_min) & (t <= spec.q_max)


def qdq_backward(
    upstream_grad: ArrayLike,
    x: ArrayLike,
    spec: QuantSpec,
    clipped: bool = True,
) -> np.ndarray:
    """
    Straight-through gradient of qdq with respect to its input.

    The rounding is treated as the identity. With the clipped variant the
    gradient is zeroed where x falls outside the clip range, where the
    quantizer output does not depend on x.

    Parameters
    ----------
    upstream_grad: float or np.ndarray
        Gradient of the loss with respect to qdq(x)
    x: float or np.ndarray
        Input of the quantizer during the forward pass
    spec: QuantSpec
        Quantizer description
    clipped: bool (default=True)
        Clipped STE when True, plain pass-through otherwise

    Returns
    -------
    grad: np.ndarray
        Gradient with respect to x
    """
    upstream_grad = np.asarray(upstream_grad, dtype=np.float64)
    if not clipped:
        return upstream_grad * np.ones_like(np.asarray(x, dtype=np.float64))
    return np.where(in_range_mask(x, spec), upstream_grad, 0.0)


def qdq_scale_grad(
    upstream_grad: ArrayLike,
    x: ArrayLike,
    y: ArrayLike,
    spec: QuantSpec,
    clipped: bool = True,
) -> float:
    """
    Straight-through gradient of a QDQ node with respect to its scale.

    For y = scale / q_s * Q(x) and rounding treated as the identity,
    dy/dscale = (y - m * x) / scale where m is the pass-through mask of
    qdq_backward. The contribution of all entries is summed (per-tensor
    scale).
    """
    x = np.asarray(x, dtype=np.float64)
    if clipped:
        mask = in_range_mask(x, spec).astype(np.float64)
    else:
        mask = np.ones_like(x)
    local = (np.asarray(y, dtype=np.float64) - mask * x) / spec.scale
    return float(np.sum(np.asarray(upstream_grad) * local))


def ste_surrogate(x: ArrayLike, spec: QuantSpec, clipped: bool = True):
    """
    Differentiable function whose exact gradient is the STE gradient:
    clip to the quantizer range (clipped STE) or identity (plain STE).
    """
    x = np.asarray(x, dtype=np.float64)
    if not clipped:
        return x.copy()
    low, high = clip_range(spec)
    return np.clip(x, low, high)


def weight_scale(weights: np.ndarray) -> float:
    """
    Per-tensor weight scale: max |w| floored at EPS_SCALE

    Parameters
    ----------
    weights: np.ndarray
        Weight matrix

    Returns
    -------
    scale: float
        Positive scale
    """
    weights = np.asarray(weights, dtype=np.float64)
    if weights.size == 0:
        raise ValueError("Cannot compute the scale of an empty weight matrix.")
    return max(float(np.max(np.abs(weights))), EPS_SCALE)


def update_scale_warmup(
    state: ScaleState,
    batch: ArrayLike,
    percentile: float = 99.9,
    momentum: float = 0.9,
) -> ScaleState:
    """
    One warm-up step of an activation scale.

    The statistic is an exponential moving average of a high percentile of
    |batch|; the scale follows the statistic, floored at EPS_SCALE.

    Parameters
    ----------
    state: ScaleState
        Current state, still in warm-up
    batch: np.ndarray
        Values seen by the quantizer
    percentile: float (default=99.9)
        Percentile of the absolute values
    momentum: float (default=0.9)
        EMA momentum (weight of the previous statistic)

    Returns
    -------
    state: ScaleState
        New state
    """
    if state.warmup_steps_remaining <= 0:
        raise ValueError(
            "Scale warm-up is over: the scale is now learned by gradient."
        )
    batch = np.asarray(batch, dtype=np.float64)
    if batch.size == 0:
        raise ValueError("Cannot update a scale from an empty batch.")
    if not np.all(np.isfinite(batch)):
        raise NonFiniteValueError(
            "Non-finite activation statistics during scale warm-up."
        )

    statistic = float(np.percentile(np.abs(batch), percentile))
    ema = momentum * state.ema_statistic + (1.0 - momentum) * statistic
    remaining = state.warmup_steps_remaining - 1

    if remaining == 0:
        logging.debug(
            f"Scale warm-up finished, scale initialized to "
            f"{max(ema, EPS_SCALE)}"
        )

    return ScaleState(
        spec=state.spec.with_scale(max(ema, EPS_SCALE)),
        warmup_steps_remaining=remaining,
        ema_statistic=ema,
        learnable=state.learnable,
    )
