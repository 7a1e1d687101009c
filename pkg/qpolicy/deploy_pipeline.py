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
Deployment pipeline: lowering, integer execution and hardware cost
"""

# Standard imports
import logging
import os
import sys
from typing import List, Optional

# Third party imports
import numpy as np
import pandas as pd

# qpolicy imports
from . import param
from .config import save_config_file
from .core.hardware_cost import (
    CostReport,
    InfeasibleFoldingError,
    LayerShape,
    estimate,
    fit_folding,
    graph_shapes,
    layer_cycles,
    pad_dims,
    policy_shapes,
    reference_cost,
    throughput_sweep,
)
from .core.integer_runtime import (
    IntActivation,
    checksum,
    count_macs,
    run_integer,
)
from .core.lowering import lower
from .tools.handlers import read_csv, write_csv
from .tools.model_io import (
    read_graph,
    read_json,
    read_policy,
    write_graph,
    write_json,
)
from .tools.run_dir import RunDirectory

TRACE_COLUMNS = ["sample", "layer", "neuron", "code"]

COST_COLUMNS = [
    "layer",
    "in_dim",
    "out_dim",
    "padded_in",
    "padded_out",
    "in_bits",
    "weight_bits",
    "out_bits",
    "acc_bits",
    "pe",
    "simd",
    "cycles",
]


def observation_matrix(df: pd.DataFrame, obs_dim: int) -> np.ndarray:
    """(N, obs_dim) observations from the obs_0..obs_{d-1} columns"""
    columns = [f"obs_{i}" for i in range(obs_dim)]
    missing = [c for c in columns if c not in df.columns]
    if missing:
        raise ValueError(
            f"Observation file is missing columns {missing}. Expected "
            f"{columns}."
        )
    return df[columns].to_numpy(dtype=np.float64)


def trace_frame(trace: List[IntActivation]) -> pd.DataFrame:
    """
    Long table of the integer codes at every layer boundary (layer 0 is the
    quantized input)
    """
    frames = []
    for layer, activation in enumerate(trace):
        samples, width = activation.codes.shape
        frames.append(
            pd.DataFrame(
                {
                    "sample": np.repeat(np.arange(samples), width),
                    "layer": layer,
                    "neuron": np.tile(np.arange(width), samples),
                    "code": activation.codes.reshape(-1),
                }
            )
        )
    return pd.concat(frames, ignore_index=True)[TRACE_COLUMNS]


def cost_frame(shapes: List[LayerShape], report: CostReport) -> pd.DataFrame:
    """Per-layer table of a cost estimate"""
    folding = report.folding
    rows = []
    for index, shape in enumerate(shapes):
        pe, simd = folding.pe[index], folding.simd[index]
        rows.append(
            [
                index,
                shape.in_dim,
                shape.out_dim,
                shape.padded_in,
                shape.padded_out,
                shape.in_bits,
                shape.weight_bits,
                shape.out_bits,
                shape.accumulator_bits,
                pe,
                simd,
                layer_cycles(shape, pe, simd),
            ]
        )
    return pd.DataFrame(rows, columns=COST_COLUMNS)


def load_budget(budget) -> Optional[dict]:
    """Resource budget from a preset name, a JSON file or a dictionary"""
    if budget is None or isinstance(budget, dict):
        return budget
    if budget in param.RESOURCE_BUDGETS:
        return dict(param.RESOURCE_BUDGETS[budget])
    if not os.path.isfile(budget):
        raise ValueError(
            f"Budget '{budget}' is neither a preset of "
            f"{list(param.RESOURCE_BUDGETS.keys())} nor a JSON file."
        )
    return read_json(budget)


def mujoco_shapes(task: str) -> List[LayerShape]:
    """Shapes of the selected policy of a MuJoCo task"""
    if task not in param.MUJOCO_DIMS:
        raise ValueError(
            f"Task '{task}' unknown. It should be in "
            f"{list(param.MUJOCO_DIMS.keys())}."
        )
    obs_dim, action_dim = param.MUJOCO_DIMS[task]
    width, b_core, b_in = param.MUJOCO_SELECTIONS[task]
    return policy_shapes(
        obs_dim, action_dim, width, b_in, b_core, param.OUTPUT_BITS
    )


def lower_main(cfg: dict) -> RunDirectory:
    """Lower a trained policy to an integer graph"""
    run = RunDirectory(cfg["out_dir"], "lower", cfg)
    save_config_file(run.path("config.json"), cfg)

    net = read_policy(cfg["model"])
    graph = lower(net, cfg.get("verify_samples", 256), cfg["seed"])
    out = cfg.get("out") or run.path("graph.json")
    write_graph(out, graph)
    run.add(out)
    logging.info(
        f"Integer graph checksum: {checksum(graph):016x}, "
        f"{count_macs(graph)} multiply-accumulates per action"
    )
    run.close()
    return run


def run_main(cfg: dict) -> RunDirectory:
    """Run an integer graph on observations read from a CSV file"""
    run = RunDirectory(cfg["out_dir"], "run", cfg)
    save_config_file(run.path("config.json"), cfg)

    graph = read_graph(cfg["graph"], cfg.get("checksum"))
    obs = observation_matrix(read_csv(cfg["obs"]), graph.obs_dim)
    actions, trace = run_integer(graph, obs)

    df = pd.DataFrame(
        actions, columns=[f"action_{i}" for i in range(graph.action_dim)]
    )
    header = {"checksum": f"{checksum(graph):016x}", "samples": len(df)}
    if cfg.get("out"):
        write_csv(cfg["out"], df, "actions", header)
        run.add(cfg["out"])
    else:
        write_csv(sys.stdout, df, "actions", header)

    if cfg.get("trace"):
        write_csv(cfg["trace"], trace_frame(trace), "trace", header)
        run.add(cfg["trace"])
    run.close()
    return run


def cost_main(cfg: dict) -> RunDirectory:
    """Cost of a lowered graph, or of a MuJoCo-scale selected policy"""
    run = RunDirectory(cfg["out_dir"], "cost", cfg)
    save_config_file(run.path("config.json"), cfg)
    budget = load_budget(cfg.get("budget"))
    clock_hz = cfg.get("clock_hz", param.CLOCK_HZ)
    target = cfg.get("target")

    if cfg.get("mujoco"):
        shapes = mujoco_shapes(cfg["mujoco"])
    else:
        shapes = graph_shapes(read_graph(cfg["graph"]))

    report = estimate(shapes, fit_folding(shapes, target, budget, clock_hz))
    doc = {"selected": report.to_dict(), "padded_dims": pad_dims(shapes)}
    if cfg.get("mujoco"):
        try:
            doc["reference"] = reference_cost(
                param.MUJOCO_DIMS[cfg["mujoco"]],
                clock_hz=clock_hz,
                target_throughput=target,
                resource_budget=budget,
            ).to_dict()
        except InfeasibleFoldingError as error:
            logging.warning(f"Reference policy does not fit: {error}")
            doc["reference"] = None
    write_json(run.path("cost.json"), doc)
    run.add("cost.json")

    write_csv(
        run.path("cost.csv"),
        cost_frame(shapes, report),
        "cost",
        {"clock_hz": clock_hz, "target": target},
    )
    run.add("cost.csv")
    logging.info(
        f"Latency {report.latency_cycles} cycles, throughput "
        f"{report.throughput_actions_per_s:.3g} actions/s, "
        f"{report.mac_units} MAC units"
    )
    run.close()
    return run


def fold_main(cfg: dict) -> RunDirectory:
    """Throughput sweep: highest feasible target within a budget"""
    run = RunDirectory(cfg["out_dir"], "fold", cfg)
    save_config_file(run.path("config.json"), cfg)
    budget = load_budget(cfg.get("budget"))
    clock_hz = cfg.get("clock_hz", param.CLOCK_HZ)

    if cfg.get("mujoco"):
        shapes = mujoco_shapes(cfg["mujoco"])
    else:
        shapes = graph_shapes(read_graph(cfg["graph"]))

    best, table = throughput_sweep(
        shapes,
        budget,
        cfg.get("targets", param.THROUGHPUT_TARGETS),
        clock_hz,
    )
    write_csv(run.path("fold.csv"), table, "fold", {"clock_hz": clock_hz})
    run.add("fold.csv")

    doc = None
    if best is not None:
        target, folding, report = best
        doc = {
            "target": target,
            "folding": folding.to_dict(),
            "cost": report.to_dict(),
        }
    write_json(run.path("folding.json"), {"best": doc})
    run.add("folding.json")
    run.close()
    return run
