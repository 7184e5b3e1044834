"""Deterministic RNG streams.

Child streams are counter-based Philox generators keyed by
SHA-256(master_seed, stage, index), so every (stage, index) pair owns an
independent stream and adding replicas or stages never perturbs existing
draws, regardless of execution order.
"""

import hashlib

import numpy as np


def child_key(master_seed: int, stage: str, index: int = 0) -> int:
    msg = f"{int(master_seed)}:{stage}:{int(index)}".encode()
    return int.from_bytes(hashlib.sha256(msg).digest()[:16], "little")


def stream(master_seed: int, stage: str, index: int = 0) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=child_key(master_seed, stage, index)))
