"""Named random sub-streams derived from one seed."""
from __future__ import annotations

import zlib

import numpy as np

STREAMS = {"init": 1, "shuffle": 2, "dropout": 3, "synth": 4, "split": 5, "val": 6}


def stream(seed: int, name: str, *extra: int) -> np.random.Generator:
    """Independent generator for ``(seed, name, *extra)``."""
    return np.random.default_rng([int(seed), STREAMS[name], *extra])


def param_stream(seed: int, param_name: str) -> np.random.Generator:
    # keyed by name so models that share a parameter draw identical initial values
    return stream(seed, "init", zlib.crc32(param_name.encode()))
