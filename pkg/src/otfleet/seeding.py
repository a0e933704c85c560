"""Deterministic seed derivation.

All randomness in the package flows from a single root seed. Sub-streams
are derived from the root plus a label path, so any sub-experiment can be
reproduced in isolation: ``derive_rng(root, "demos", task_id, episode)``.

Labels are folded into 32-bit words with SHA-256, which is stable across
platforms and Python versions (unlike ``hash``).
"""

from __future__ import annotations

import hashlib

import numpy as np


def _label_words(label: str | int) -> list[int]:
    if isinstance(label, int):
        return [label & 0xFFFFFFFF, (label >> 32) & 0xFFFFFFFF]
    digest = hashlib.sha256(label.encode("utf-8")).digest()
    return [int.from_bytes(digest[i : i + 4], "little") for i in range(0, 16, 4)]


def seed_sequence(root: int, *labels: str | int) -> np.random.SeedSequence:
    words: list[int] = [root & 0xFFFFFFFFFFFFFFFF]
    for label in labels:
        words.extend(_label_words(label))
    return np.random.SeedSequence(words)


def derive_rng(root: int, *labels: str | int) -> np.random.Generator:
    """Generator for the sub-stream named by ``labels`` under ``root``."""
    return np.random.default_rng(seed_sequence(root, *labels))


def derive_seed(root: int, *labels: str | int) -> int:
    """64-bit integer seed for the sub-stream named by ``labels``.

    Useful where an object wants to carry a plain integer seed (and
    derive its own sub-streams from it) rather than a generator.
    """
    return int(seed_sequence(root, *labels).generate_state(2, np.uint64)[0])
