"""Deterministic named substreams derived from one master seed."""

import hashlib

import numpy as np


def substream(seed: int, label: str) -> np.random.Generator:
    """Independent generator for one purpose (init / shuffle / noise / split)."""
    digest = hashlib.sha256(label.encode("utf-8")).digest()
    key = int.from_bytes(digest[:8], "little")
    return np.random.default_rng(np.random.SeedSequence([int(seed) & (2**63 - 1), key]))
