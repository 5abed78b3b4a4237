"""
Seeding helpers shared by the sampler and the training loop
"""

import random
from typing import Iterable

import numpy as np
import torch

_MASK_64 = (1 << 64) - 1


def derive_seed(*parts: int) -> int:
    """Mix integers into one 64-bit seed (order-sensitive)"""
    entropy = [int(p) & _MASK_64 for p in parts]
    return int(np.random.SeedSequence(entropy).generate_state(1, dtype=np.uint64)[0])


def seed_sequence(parts: Iterable[int]) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(p) & _MASK_64 for p in parts])


def seed_everything(seed: int, deterministic: bool = True) -> None:
    """Seed python, numpy and torch; optionally force deterministic kernels"""
    seed = int(seed) & 0xFFFFFFFF
    random.seed(seed)
    np.random.seed(seed)
    torch.manual_seed(seed)
    if deterministic:
        torch.use_deterministic_algorithms(True, warn_only=True)
        torch.backends.cudnn.benchmark = False
