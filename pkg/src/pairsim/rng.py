"""Deterministic random streams keyed by (seed, stage tag, index, ...).

Every stochastic operation in this package draws from a Philox
counter-based generator whose 128-bit key is a hash of the stream
coordinates. Streams are independent of each other and of iteration
order: the draws for item 17 do not change when items are processed in
a different order, when other items are added, or when an unrelated
stage consumes more randomness.
"""

from __future__ import annotations

import hashlib
from typing import Union

import numpy as np

KeyPart = Union[int, str]


def stream(*parts: KeyPart) -> np.random.Generator:
    """Return the generator for the stream addressed by ``parts``.

    Parts may be ints (seeds, item indices, slots) or short strings
    (stage tags). The same parts always yield the same stream.
    """
    h = hashlib.blake2b(digest_size=16)
    for part in parts:
        if isinstance(part, (int, np.integer)):
            h.update(b"i" + int(part).to_bytes(16, "little", signed=True))
        elif isinstance(part, str):
            data = part.encode("utf-8")
            h.update(b"s" + len(data).to_bytes(4, "little") + data)
        else:
            raise TypeError(
                f"stream key parts must be int or str, got {type(part).__name__}"
            )
    key = int.from_bytes(h.digest(), "little")
    return np.random.Generator(np.random.Philox(key=key))
