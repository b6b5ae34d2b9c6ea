"""Counter-based random substreams.

Every stochastic stage draws from ``substream(master, label, index)``, so the
numbers a given trajectory sees depend only on the master seed, the stage
label and the trajectory/ensemble index -- never on execution order.
"""
import zlib

import numpy as np


def _label_key(label: str) -> int:
    return zlib.crc32(label.encode("utf-8"))


def substream(master: int, label: str, index: int = 0) -> np.random.Generator:
    """Return an independent generator for ``(master, label, index)``."""
    seq = np.random.SeedSequence(entropy=int(master), spawn_key=(_label_key(label), int(index)))
    return np.random.Generator(np.random.PCG64(seq))


def child_seed(master: int, label: str, index: int = 0) -> int:
    """Derive a 63-bit integer seed, for stages that take a master seed themselves."""
    seq = np.random.SeedSequence(entropy=int(master), spawn_key=(_label_key(label), int(index)))
    return int(seq.generate_state(2, dtype=np.uint64)[0] >> np.uint64(1))
