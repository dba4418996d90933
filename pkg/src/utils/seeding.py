"""
Seed derivation. Every random stream is derived from the run seed XOR a
purpose tag, then keyed by (step, slot) so results do not depend on which
worker thread handles which image.
"""

from typing import Dict

import numpy as np

PURPOSE_TAGS: Dict[str, int] = {
    'init': 0x1A17,
    'data': 0xDA7A,
    'augment': 0xA06E,
    'windows': 0x317D,
    'masks': 0x3A5C,
    'probe': 0x960B,
    'corpus': 0xC095,
    'bench': 0xBE4C,
}


def purpose_seed(seed: int, purpose: str) -> int:
    """Run seed XOR the purpose tag."""
    return int(seed) ^ PURPOSE_TAGS[purpose]


def derive_rng(seed: int, purpose: str, *stream: int) -> np.random.Generator:
    """
    Independent generator for one purpose and stream key.

    Args:
        seed: Run seed
        purpose: Key of PURPOSE_TAGS
        *stream: Extra non-negative integers (step, image slot, window index ...)
    """
    entropy = [purpose_seed(seed, purpose) & 0xFFFFFFFFFFFFFFFF, *[int(s) for s in stream]]
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))
