"""Named, reproducible random streams derived from a single integer seed."""
from __future__ import annotations

import zlib

import numpy as np


def label_key(label: str) -> int:
    return zlib.crc32(label.encode("utf-8"))


def stream(seed: int, label: str, *keys: int) -> np.random.Generator:
    """Generator that depends only on ``(seed, label, keys)``."""
    return np.random.default_rng([int(seed), label_key(label), *(int(k) for k in keys)])
