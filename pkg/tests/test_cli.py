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
End-to-end tests of the qpolicy commands
"""

# Standard imports
import json
import os
import tempfile

# Third party imports
import numpy as np
import pandas as pd
import pytest

# qpolicy imports
from qpolicy import cli
from qpolicy.config import make_train_config
from qpolicy.core.integer_runtime import checksum
from qpolicy.tools.handlers import read_csv
from qpolicy.tools.model_io import read_graph, read_policy

# Tests helpers
from .helpers import get_temporary_dir, get_test_data_path

TRAIN_CONFIG = get_test_data_path("train_config.json")


def read_json(filepath: str) -> dict:
    """JSON document of a run directory"""
    with open(filepath, "r", encoding="utf-8") as file_:
        return json.load(file_)


def read_bytes(filepath: str) -> bytes:
    """Raw content of an artifact"""
    with open(filepath, "rb") as file_:
        return file_.read()


def train(out_dir: str) -> int:
    """Tiny quantized DDPG training"""
    return cli.main(
        [
            "train",
            "--config",
            TRAIN_CONFIG,
            "--total-steps",
            "80",
            "--out-dir",
            out_dir,
            "--loglevel",
            "WARNING",
        ]
    )


@pytest.mark.unit_tests
@pytest.mark.fast
def test_config_merge():
    """Defaults, then config file, then flags"""
    parser = cli.get_parser()
    args = parser.parse_args(
        ["train", "--config", TRAIN_CONFIG, "--width", "16", "--seed", "4"]
    )
    cfg = cli.make_config(args)
    assert cfg["algo"] == "ddpg"
    assert cfg["width"] == 16
    assert cfg["seed"] == 4
    assert cfg["bits_core"] == 3
    assert cfg["preset"] == "desk"
    assert cfg["train_overrides"]["batch_size"] == 16
    assert os.path.isabs(cfg["out_dir"])

    args = parser.parse_args(
        ["train", "--config", TRAIN_CONFIG, "--total-steps", "70"]
    )
    cfg = cli.make_config(args)
    assert cfg["train_overrides"]["total_steps"] == 70
    assert cfg["train_overrides"]["learning_starts"] == 30

    args = parser.parse_args(["train", "--algo", "sac", "--preset", "paper"])
    cfg = cli.make_config(args)
    assert cfg["preset"] == "paper"
    paper = make_train_config(cfg["algo"], cfg["preset"])
    assert paper.total_steps == 1_000_000
    assert paper.buffer_size == 1_000_000
    assert paper.learning_starts == 5_000
    assert paper.q_lr == 1e-3
    assert paper.target_update_freq == 1

    args = parser.parse_args(["run", "--graph", "g.json", "--obs", "o.csv"])
    args.checksum = "00000000000000ff"
    assert cli.make_config(args)["checksum"] == 255


@pytest.mark.end2end_tests
@pytest.mark.fast
def test_bad_arguments():
    """Invalid options end with an argparse error"""
    with tempfile.TemporaryDirectory(dir=get_temporary_dir()) as directory:
        out_dir = os.path.join(directory, "out")
        bad = os.path.join(directory, "bad.json")
        with open(bad, "w", encoding="utf-8") as file_:
            json.dump({"width": 8, "hidden_layers": 3}, file_)

        for argv in (
            ["train", "--width", "x"],
            ["train", "--bits-core", "12", "--out-dir", out_dir],
            ["train", "--config", bad, "--out-dir", out_dir],
            ["sweep", "--bits", "1", "--out-dir", out_dir],
            ["cost", "--out-dir", out_dir],
            ["lower", "--out-dir", out_dir],
            ["cost", "--mujoco", "Hopper", "--graph", "g.json"],
        ):
            with pytest.raises(SystemExit) as error:
                cli.main(argv)
            assert error.value.code == 2

        with pytest.raises(SystemExit) as error:
            cli.main([])
        assert error.value.code == 0


@pytest.mark.end2end_tests
@pytest.mark.fast
def test_cost_commands():
    """MuJoCo-scale cost and throughput sweep"""
    with tempfile.TemporaryDirectory(dir=get_temporary_dir()) as directory:
        out_dir = os.path.join(directory, "cost")
        argv = ["cost", "--mujoco", "Hopper", "--out-dir", out_dir]
        assert cli.main(argv) == 0
        doc = read_json(os.path.join(out_dir, "cost.json"))
        assert doc["selected"]["throughput_actions_per_s"] == 1e8
        assert doc["reference"] is not None
        assert (
            doc["reference"]["threshold_words"]
            > doc["selected"]["threshold_words"]
        )
        manifest = read_json(os.path.join(out_dir, "manifest.json"))
        assert sorted(manifest["artifacts"]) == ["cost.csv", "cost.json"]
        logs = [f for f in os.listdir(out_dir) if f.endswith("_cost.log")]
        assert len(logs) == 1
        df = read_csv(os.path.join(out_dir, "cost.csv"))
        assert len(df) == 3

        out_dir = os.path.join(directory, "budget")
        argv = ["cost", "--config", get_test_data_path("cost_config.json")]
        assert cli.main(argv + ["--out-dir", out_dir]) == 0
        doc = read_json(os.path.join(out_dir, "cost.json"))
        assert doc["selected"]["throughput_actions_per_s"] >= 1e6
        assert doc["selected"]["mac_units"] <= 4096

        # full parallelism within the budget, the reference does not fit
        out_dir = os.path.join(directory, "small")
        argv = ["cost", "--mujoco", "Hopper", "--budget", "small"]
        assert cli.main(argv + ["--out-dir", out_dir]) == 0
        doc = read_json(os.path.join(out_dir, "cost.json"))
        assert doc["selected"]["throughput_actions_per_s"] == 1e8
        assert doc["reference"] is None
        assert doc["padded_dims"] == [32, 32, 32, 32]

        tight = os.path.join(directory, "tight.json")
        with open(tight, "w", encoding="utf-8") as file_:
            json.dump({"mac_units": 100}, file_)
        argv = ["cost", "--mujoco", "Hopper", "--budget", tight]
        out_dir = os.path.join(directory, "tight")
        assert cli.main(argv + ["--out-dir", out_dir]) == 1

        out_dir = os.path.join(directory, "fold")
        argv = ["fold", "--mujoco", "Hopper", "--targets", "1e9", "1000"]
        assert cli.main(argv + ["--out-dir", out_dir]) == 0
        table = read_csv(os.path.join(out_dir, "fold.csv"))
        assert list(table["feasible"]) == [True, False]
        best = read_json(os.path.join(out_dir, "folding.json"))["best"]
        assert best["target"] == 1000.0


@pytest.mark.end2end_tests
@pytest.mark.slow
def test_train_lower_run():
    """Trained policy, integer graph and integer actions"""
    with tempfile.TemporaryDirectory(dir=get_temporary_dir()) as directory:
        train_dir = os.path.join(directory, "train")
        assert train(train_dir) == 0
        model = os.path.join(train_dir, "model.json")
        manifest = read_json(os.path.join(train_dir, "manifest.json"))
        assert sorted(manifest["artifacts"]) == [
            "curve.csv",
            "evaluation.csv",
            "model.json",
        ]
        curve = read_csv(os.path.join(train_dir, "curve.csv"))
        assert list(curve["step"]) == [40, 80]

        # same configuration, same artifacts
        again_dir = os.path.join(directory, "again")
        assert train(again_dir) == 0
        for name in ("model.json", "curve.csv", "evaluation.csv"):
            assert read_bytes(os.path.join(train_dir, name)) == read_bytes(
                os.path.join(again_dir, name)
            )

        lower_dir = os.path.join(directory, "lower")
        argv = ["lower", "--model", model, "--out-dir", lower_dir]
        assert cli.main(argv) == 0
        graph_path = os.path.join(lower_dir, "graph.json")
        graph = read_graph(graph_path)
        assert graph.dims() == [3, 8, 8, 1]

        net = read_policy(model)
        rng = np.random.default_rng(0)
        obs = rng.normal(size=(50, 3))
        obs_path = os.path.join(directory, "obs.csv")
        pd.DataFrame(obs, columns=["obs_0", "obs_1", "obs_2"]).to_csv(
            obs_path, index=False, float_format="%.17g"
        )
        run_dir = os.path.join(directory, "run")
        actions_path = os.path.join(run_dir, "actions.csv")
        trace_path = os.path.join(run_dir, "trace.csv")
        argv = [
            "run",
            "--graph",
            graph_path,
            "--obs",
            obs_path,
            "--out",
            actions_path,
            "--trace",
            trace_path,
            "--checksum",
            f"{checksum(graph):016x}",
            "--out-dir",
            run_dir,
        ]
        assert cli.main(argv) == 0
        actions = read_csv(actions_path)
        np.testing.assert_array_equal(
            actions[["action_0"]].to_numpy(),
            net.act(read_csv(obs_path).to_numpy()),
        )
        trace = read_csv(trace_path)
        assert set(trace["layer"]) == {0, 1, 2, 3}

        wrong = f"{checksum(graph) ^ 1:016x}"
        argv[argv.index("--checksum") + 1] = wrong
        assert cli.main(argv) == 1


@pytest.mark.end2end_tests
@pytest.mark.slow
def test_select_then_noise():
    """Noise robustness of the policies of a select run"""
    with tempfile.TemporaryDirectory(dir=get_temporary_dir()) as directory:
        select_dir = os.path.join(directory, "select")
        argv = ["select", "--config", get_test_data_path("select_config.json")]
        assert cli.main(argv + ["--out-dir", select_dir]) == 0
        selection = os.path.join(select_dir, "selection.json")
        doc = read_json(selection)
        assert doc["seeds"] == [0]
        assert doc["models"] == {"0": "model_0.json"}
        assert doc["baselines"] == {"0": "baseline_0.json"}

        noise_dir = os.path.join(directory, "noise")
        argv = [
            "noise",
            "--selection",
            selection,
            "--sigmas",
            "0",
            "0.2",
            "--out-dir",
            noise_dir,
        ]
        assert cli.main(argv) == 0
        df = read_csv(os.path.join(noise_dir, "noise.csv"))
        assert len(df) == 3 * 2
        assert list(df["model"].drop_duplicates()) == [
            "fp32",
            "qat",
            "integer",
        ]
        # the integer graph acts exactly like its fake-quantized policy
        qat = df[df["model"] == "qat"]["mean_return"].to_numpy()
        integer = df[df["model"] == "integer"]["mean_return"].to_numpy()
        np.testing.assert_array_equal(integer, qat)

        argv += ["--models", "qat", "--out-dir", os.path.join(directory, "q")]
        assert cli.main(argv) == 0
        argv[-3] = "int8"
        assert cli.main(argv) == 1
