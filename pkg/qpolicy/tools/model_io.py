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
JSON documents of policies and integer graphs.

Real numbers are stored as decimal strings (repr) so that reading a
document back yields bit-identical floats.
"""

# Standard imports
import hashlib
import json
from typing import Optional

# Third party imports
import numpy as np

# qpolicy imports
from ..core.lowering import IntegerGraph, IntLayer
from ..core.network import Normalizer, PolicyNet, QuantConfig
from ..core.quant import QuantSpec, ScaleState

POLICY_FORMAT = ("qpolicy.policy", 1)
GRAPH_FORMAT = ("qpolicy.graph", 1)


def encode_reals(array: np.ndarray) -> dict:
    """{shape, data} with data as a flat list of decimal strings"""
    array = np.asarray(array, dtype=np.float64)
    return {
        "shape": list(array.shape),
        "data": [repr(float(value)) for value in array.ravel()],
    }


def decode_reals(doc: dict) -> np.ndarray:
    """Inverse of encode_reals"""
    return np.array(
        [float(value) for value in doc["data"]], dtype=np.float64
    ).reshape(doc["shape"])


def encode_ints(array: np.ndarray) -> dict:
    """{shape, data} with data as a flat list of integers"""
    array = np.asarray(array, dtype=np.int64)
    return {"shape": list(array.shape), "data": [int(v) for v in array.ravel()]}


def decode_ints(doc: dict) -> np.ndarray:
    """Inverse of encode_ints"""
    return np.array(doc["data"], dtype=np.int64).reshape(doc["shape"])


def _check_format(doc: dict, expected: tuple) -> None:
    name, version = expected
    if doc.get("format") != name:
        raise ValueError(
            f"Document format should be '{name}'. Found '{doc.get('format')}'."
        )
    if doc.get("version") != version:
        raise ValueError(
            f"Unsupported {name} version {doc.get('version')} "
            f"(expected {version})."
        )


def normalizer_to_dict(norm: Normalizer) -> dict:
    """Normalizer statistics document"""
    return {
        "dim": norm.dim,
        "enabled": norm.enabled,
        "frozen": norm.frozen,
        "epsilon": repr(norm.epsilon),
        "count": norm.count,
        "mean": encode_reals(norm.mean),
        "m2": encode_reals(norm.m2),
    }


def normalizer_from_dict(doc: dict) -> Normalizer:
    """Inverse of normalizer_to_dict"""
    norm = Normalizer(
        doc["dim"], epsilon=float(doc["epsilon"]), enabled=doc["enabled"]
    )
    norm.count = int(doc["count"])
    norm.mean = decode_reals(doc["mean"])
    norm.m2 = decode_reals(doc["m2"])
    norm.frozen = bool(doc["frozen"])
    return norm


def policy_to_dict(net: PolicyNet) -> dict:
    """Policy document"""
    scale_states = {
        name: {
            "spec": state.spec.to_dict(),
            "warmup_steps_remaining": state.warmup_steps_remaining,
            "ema_statistic": repr(state.ema_statistic),
            "learnable": state.learnable,
        }
        for name, state in net.scale_states.items()
    }
    sigma = None
    if net.sigma_branch is not None:
        sigma = {
            key: encode_reals(value)
            for key, value in net.sigma_branch.params.items()
        }
    return {
        "format": POLICY_FORMAT[0],
        "version": POLICY_FORMAT[1],
        "obs_dim": net.obs_dim,
        "action_dim": net.action_dim,
        "width": net.width,
        "obs_clip": repr(net.obs_clip),
        "quant_config": (
            None if net.quant_config is None else net.quant_config.to_dict()
        ),
        "normalizer": normalizer_to_dict(net.normalizer),
        "params": {
            key: encode_reals(value) for key, value in net.params.items()
        },
        "scale_states": scale_states,
        "sigma_branch": sigma,
    }


def policy_from_dict(doc: dict) -> PolicyNet:
    """Inverse of policy_to_dict"""
    _check_format(doc, POLICY_FORMAT)
    quant_config = None
    if doc["quant_config"] is not None:
        quant_config = QuantConfig(**doc["quant_config"])
    net = PolicyNet(
        doc["obs_dim"],
        doc["action_dim"],
        width=doc["width"],
        quant_config=quant_config,
        sigma_branch=doc["sigma_branch"] is not None,
        normalize_input=doc["normalizer"]["enabled"],
        obs_clip=float(doc["obs_clip"]),
    )
    net.normalizer = normalizer_from_dict(doc["normalizer"])
    net.params = {
        key: decode_reals(value) for key, value in doc["params"].items()
    }
    net.scale_states = {
        name: ScaleState(
            spec=QuantSpec.from_dict(state["spec"]),
            warmup_steps_remaining=int(state["warmup_steps_remaining"]),
            ema_statistic=float(state["ema_statistic"]),
            learnable=bool(state["learnable"]),
        )
        for name, state in doc["scale_states"].items()
    }
    if doc["sigma_branch"] is not None:
        net.sigma_branch.params = {
            key: decode_reals(value)
            for key, value in doc["sigma_branch"].items()
        }
    return net


def graph_to_dict(graph: IntegerGraph) -> dict:
    """Integer graph document"""
    layers = [
        {
            "int_weights": encode_ints(layer.int_weights),
            "bias_int": encode_ints(layer.bias_int),
            "thresholds": encode_ints(layer.thresholds),
            "acc_bits": layer.acc_bits,
            "in_spec": layer.in_spec.to_dict(),
            "out_spec": layer.out_spec.to_dict(),
            "weight_spec": layer.weight_spec.to_dict(),
            "acc_step": repr(layer.acc_step),
        }
        for layer in graph.layers
    ]
    return {
        "format": GRAPH_FORMAT[0],
        "version": GRAPH_FORMAT[1],
        "input_spec": graph.input_spec.to_dict(),
        "normalizer": normalizer_to_dict(graph.normalizer),
        "obs_clip": repr(graph.obs_clip),
        "layers": layers,
        "tanh_lut": encode_reals(graph.tanh_lut),
    }


def graph_from_dict(doc: dict) -> IntegerGraph:
    """Inverse of graph_to_dict"""
    _check_format(doc, GRAPH_FORMAT)
    layers = [
        IntLayer(
            int_weights=decode_ints(layer["int_weights"]),
            bias_int=decode_ints(layer["bias_int"]),
            thresholds=decode_ints(layer["thresholds"]),
            acc_bits=int(layer["acc_bits"]),
            in_spec=QuantSpec.from_dict(layer["in_spec"]),
            out_spec=QuantSpec.from_dict(layer["out_spec"]),
            weight_spec=QuantSpec.from_dict(layer["weight_spec"]),
            acc_step=float(layer["acc_step"]),
        )
        for layer in doc["layers"]
    ]
    return IntegerGraph(
        input_spec=QuantSpec.from_dict(doc["input_spec"]),
        normalizer=normalizer_from_dict(doc["normalizer"]),
        obs_clip=float(doc["obs_clip"]),
        layers=tuple(layers),
        tanh_lut=decode_reals(doc["tanh_lut"]),
    )


def canonical_json(doc: dict) -> str:
    """Key-sorted compact JSON text"""
    return json.dumps(doc, sort_keys=True, separators=(",", ":"))


def graph_checksum(graph: IntegerGraph) -> int:
    """First 64 bits of the SHA-256 of the canonical graph document"""
    digest = hashlib.sha256(
        canonical_json(graph_to_dict(graph)).encode("utf-8")
    ).hexdigest()
    return int(digest[:16], 16)


def write_json(filepath: str, doc: dict) -> None:
    """Write a JSON document with stable formatting"""
    with open(filepath, "w", encoding="utf-8") as file_:
        json.dump(doc, file_, indent=2, sort_keys=True)
        file_.write("\n")


def read_json(filepath: str) -> dict:
    """Read a JSON document"""
    with open(filepath, "r", encoding="utf-8") as file_:
        return json.load(file_)


def write_policy(filepath: str, net: PolicyNet) -> None:
    """Serialize a policy"""
    write_json(filepath, policy_to_dict(net))


def read_policy(filepath: str) -> PolicyNet:
    """Deserialize a policy"""
    return policy_from_dict(read_json(filepath))


def write_graph(filepath: str, graph: IntegerGraph) -> None:
    """Serialize an integer graph"""
    write_json(filepath, graph_to_dict(graph))


def read_graph(filepath: str, checksum: Optional[int] = None) -> IntegerGraph:
    """
    Deserialize an integer graph, optionally checking its checksum
    """
    graph = graph_from_dict(read_json(filepath))
    if checksum is not None and graph_checksum(graph) != checksum:
        raise ValueError(f"Checksum mismatch for graph '{filepath}'.")
    return graph
