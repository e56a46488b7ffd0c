import zlib

import numpy as np


def derive_seed(root, purpose):
    """Expand the root seed into an independent seed for one purpose"""
    sequence = np.random.SeedSequence([int(root), zlib.crc32(purpose.encode("utf-8"))])
    return int(sequence.generate_state(1, dtype=np.uint32)[0])


def fresh_seed():
    """128 bits of OS entropy, for secrets a node never shares"""
    return int(np.random.SeedSequence().entropy)
