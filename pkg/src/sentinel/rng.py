"""Deterministic random streams.

Every stochastic draw in the engine comes from a Philox counter-based
generator keyed by (master seed, stream label, integer context). Streams are
therefore independent of call order and consumption history, which is what
makes full-run replay byte-reproducible: the negatives drawn for window 240
do not depend on how many users were sampled while generating window 12.

Constants: numpy's Philox4x64-10 bit generator, keyed through SeedSequence
entropy [master_seed, fnv1a64(label), *context].
"""

import numpy as np

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3


def _fnv1a64(text: str) -> int:
    h = _FNV_OFFSET
    for byte in text.encode("utf-8"):
        h = ((h ^ byte) * _FNV_PRIME) & 0xFFFFFFFFFFFFFFFF
    return h


def stream(seed: int, label: str, *context: int) -> np.random.Generator:
    """Generator for one named substream of the master seed."""
    entropy = [int(seed) & 0xFFFFFFFFFFFFFFFF, _fnv1a64(label)]
    entropy.extend(int(c) & 0xFFFFFFFFFFFFFFFF for c in context)
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))
