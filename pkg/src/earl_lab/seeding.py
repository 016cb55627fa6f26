"""Named random sub-streams derived from one root seed."""

import zlib

import numpy as np


def stream_key(name: str) -> int:
    return zlib.crc32(name.encode("utf-8"))


def substream(root_seed: int, name: str, *extra: int) -> np.random.Generator:
    """Independent generator for ``name`` (plus optional integer coordinates).

    The same (root_seed, name, extra) always gives the same stream, so components
    can be replayed in isolation.
    """
    entropy = [int(root_seed) & 0xFFFFFFFFFFFFFFFF, stream_key(name), *map(int, extra)]
    return np.random.default_rng(np.random.SeedSequence(entropy))


def derive_seeds(root_seed: int, name: str, count: int) -> list:
    """``count`` reproducible 32-bit integer seeds for the named stream."""
    ss = np.random.SeedSequence([int(root_seed), stream_key(name)])
    return [int(s) for s in ss.generate_state(count, dtype=np.uint32)]
