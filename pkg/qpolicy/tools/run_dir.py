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
Run directories: effective configuration, artifacts and their manifest
"""

# Standard imports
import hashlib
import logging
import os
from typing import Dict

# qpolicy imports
from .model_io import canonical_json, write_json

MANIFEST_FORMAT = "qpolicy.manifest"
MANIFEST_VERSION = "1.0.0"


def file_sha256(filepath: str) -> str:
    """Hex SHA-256 of a file content"""
    digest = hashlib.sha256()
    with open(filepath, "rb") as file_:
        for chunk in iter(lambda: file_.read(1 << 16), b""):
            digest.update(chunk)
    return digest.hexdigest()


def config_sha256(config: dict) -> str:
    """Hex SHA-256 of the canonical configuration document"""
    return hashlib.sha256(canonical_json(config).encode("utf-8")).hexdigest()


class RunDirectory:
    """Output directory of one command"""

    def __init__(self, out_dir: str, command: str, config: dict) -> None:
        self.out_dir = os.path.abspath(out_dir)
        self.command = command
        self.config = config
        self.artifacts: Dict[str, str] = {}
        os.makedirs(self.out_dir, exist_ok=True)
        existing = [
            name
            for name in os.listdir(self.out_dir)
            if name.endswith((".csv", ".json"))
        ]
        if existing:
            logging.warning(
                f"Directory '{self.out_dir}' is not empty. "
                f"Some files might be overwritten."
            )

    def path(self, filename: str) -> str:
        """Absolute path of a file of the run directory"""
        return os.path.join(self.out_dir, filename)

    def add(self, filename: str) -> str:
        """
        Register an artifact already written, given by its name in the run
        directory or by its path
        """
        filepath = self.path(filename)
        key = os.path.relpath(filepath, self.out_dir).replace(os.sep, "/")
        self.artifacts[key] = file_sha256(filepath)
        logging.info(f"'{filepath}' written")
        return filepath

    def manifest(self) -> dict:
        """Manifest document"""
        return {
            "format": MANIFEST_FORMAT,
            "version": MANIFEST_VERSION,
            "command": self.command,
            "config_sha256": config_sha256(self.config),
            "artifacts": dict(sorted(self.artifacts.items())),
        }

    def close(self) -> str:
        """Write manifest.json"""
        filepath = self.path("manifest.json")
        write_json(filepath, self.manifest())
        return filepath
