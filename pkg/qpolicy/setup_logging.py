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
Console and run-directory logging of qpolicy commands
"""
# Standard imports
import json
import logging
import logging.config
import os
from contextlib import contextmanager
from datetime import datetime
from typing import Iterator, Union

LOGCONF = os.path.join(os.path.dirname(__file__), "logging.json")

FILE_FORMAT = "%(asctime)s :: %(levelname)s :: %(message)s"


def setup_logging(default_level: Union[int, str] = logging.INFO) -> None:
    """
    Configure the root logger from the package logging.json (console on
    stderr) at the level chosen on the command line

    :param default_level: root logger level
    :type default_level: logging level or level name
    """
    if not os.path.exists(LOGCONF):
        logging.basicConfig(level=default_level)
        return
    with open(LOGCONF, "rt", encoding="utf8") as logconf_file:
        logging.config.dictConfig(json.load(logconf_file))
    logging.getLogger().setLevel(default_level)


def log_filename(command: str, now: datetime) -> str:
    """Dated name of the log file of a command"""
    return f"{now.strftime('%y-%m-%d_%Hh%Mm')}_{command}.log"


@contextmanager
def run_log_file(out_dir: str, command: str) -> Iterator[logging.Handler]:
    """
    Copy the root logger records into a dated log file of the run
    directory while a command runs. Log files are not listed in the run
    manifest.

    :param out_dir: run directory
    :type out_dir: str
    :param command: command name, part of the log file name
    :type command: str
    """
    root = logging.getLogger()
    handler = logging.FileHandler(
        os.path.join(out_dir, log_filename(command, datetime.now())),
        encoding="utf8",
    )
    handler.setFormatter(
        logging.Formatter(fmt=FILE_FORMAT, datefmt="%y-%m-%d %H:%M:%S")
    )
    handler.setLevel(root.getEffectiveLevel())
    root.addHandler(handler)
    try:
        yield handler
    finally:
        root.removeHandler(handler)
        handler.close()
