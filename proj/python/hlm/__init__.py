# Copyright (c) 2026 The hlm authors
# SPDX-License-Identifier: Apache-2.0
"""Host-memory-centric streaming trainer, pipeline simulator and planner.

The heavy lifting lives in the compiled extension ``hlm._core``; these
wrappers just let configs be passed as dicts.
"""

import json as _json

from hlm._core import (  # noqa: F401
    ArenaOom,
    HlmConfigError,
    bf16_round,
    min_host_bytes,
    validate_trace,
)
from hlm import _core as _c

__all__ = [
    "bf16_round",
    "min_host_bytes",
    "plan",
    "scaling_report",
    "train",
    "simulate",
    "validate_trace",
    "ArenaOom",
    "HlmConfigError",
]


def _as_text(config):
    if isinstance(config, str):
        return config
    return _json.dumps(config)


def plan(config):
    """Feasibility report for a config dict or JSON string."""
    return _c.plan(_as_text(config))


def scaling_report(config):
    """Depth/width scaling table for a config with a sweep section."""
    return _c.scaling_report(_as_text(config))


def train(config):
    """Run training steps; returns losses and memory ledgers."""
    return _c.train(_as_text(config))


def simulate(config):
    """Validate and time the canonical pipeline trace for a config."""
    return _c.simulate(_as_text(config))
