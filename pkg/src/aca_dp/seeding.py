"""Deterministic seed derivation for grid cells and replicates."""

import hashlib
import struct

SEED_BITS = 63


def derive_seed(*parts) -> int:
    """Stable 63-bit seed from a tuple of ints, floats and strings.

    Floats enter through their exact hex form, so 0.1 and 0.1000000001 map
    to different seeds, and results do not depend on PYTHONHASHSEED.
    """
    h = hashlib.sha256()
    for p in parts:
        if isinstance(p, bool) or isinstance(p, int):
            token = f"i{int(p)}"
        elif isinstance(p, float):
            token = f"f{p.hex()}"
        else:
            token = f"s{p}"
        h.update(token.encode())
        h.update(b"\x00")
    return struct.unpack(">Q", h.digest()[:8])[0] >> (64 - SEED_BITS)
