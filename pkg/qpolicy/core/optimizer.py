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
Adam optimizer over dictionaries of numpy arrays.
"""

# Standard imports
from typing import Dict

# Third party imports
import numpy as np


class Adam:
    """Adam with per-parameter step counters, updating arrays in place"""

    def __init__(
        self,
        params: Dict[str, np.ndarray],
        lr: float,
        betas: tuple = (0.9, 0.999),
        eps: float = 1e-8,
    ) -> None:
        if lr <= 0:
            raise ValueError(f"Learning rate should be positive. Found {lr}.")
        self.params = params
        self.lr = float(lr)
        self.beta1, self.beta2 = betas
        self.eps = float(eps)
        self.m = {key: np.zeros_like(value) for key, value in params.items()}
        self.v = {key: np.zeros_like(value) for key, value in params.items()}
        self.t = {key: 0 for key in params}

    def step(self, grads: Dict[str, np.ndarray]) -> None:
        """
        Apply one update. Parameters without a gradient are left untouched.

        Parameters
        ----------
        grads: dict
            Gradients keyed like params
        """
        for key, grad in grads.items():
            if key not in self.params:
                raise KeyError(f"Gradient for unknown parameter '{key}'.")
            self.t[key] += 1
            self.m[key] = self.beta1 * self.m[key] + (1 - self.beta1) * grad
            self.v[key] = self.beta2 * self.v[key] + (1 - self.beta2) * grad**2
            m_hat = self.m[key] / (1 - self.beta1 ** self.t[key])
            v_hat = self.v[key] / (1 - self.beta2 ** self.t[key])
            self.params[key] -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
