"""Counter-based random substreams.

Every stochastic routine derives its generators from a ``(seed, key)`` pair
through the Philox counter-based bit generator, so the draws of block ``i``
do not depend on how many workers process the blocks or in which order.
"""

import hashlib

import numpy as np

_MASK64 = (1 << 64) - 1


def substream(seed, key=0):
    """Independent generator for ``(seed, key)``.

    Parameters
    ----------
    seed : int
        Master seed, reduced modulo 2**64.
    key : int
        Substream index (block or repetition number), reduced modulo 2**64.
    """
    k = np.array([int(key) & _MASK64, int(seed) & _MASK64], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=k))


def derive_seed(seed, *labels):
    """Deterministic 64-bit child seed from a master seed and labels."""
    h = hashlib.blake2b(digest_size=8)
    h.update(int(seed & _MASK64).to_bytes(8, "little"))
    for lab in labels:
        if isinstance(lab, np.ndarray):
            h.update(np.ascontiguousarray(lab).tobytes())
        else:
            h.update(repr(lab).encode())
    return int.from_bytes(h.digest(), "little")


def check_random_state(rng):
    """Coerce ``None``, an int seed or a Generator into a Generator."""
    if rng is None:
        return np.random.default_rng()
    if isinstance(rng, np.random.Generator):
        return rng
    if isinstance(rng, (int, np.integer)):
        return substream(int(rng), 0)
    raise TypeError(f"cannot use {rng!r} as a random stream")
