"""Deterministic seed derivation and Gaussian sampling."""
import hashlib

import numpy as np


def child_seed(master, tag):
    """64-bit seed that depends only on ``(master, tag)``."""
    digest = hashlib.sha256(f"{int(master)}:{tag}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


def rng_for(master, tag):
    return np.random.Generator(np.random.PCG64(child_seed(master, tag)))


def box_muller(rng, n, std=1.0):
    """``n`` draws from N(0, std^2) built from the generator's uniform stream."""
    m = (n + 1) // 2
    u1 = 1.0 - rng.random(m)  # (0, 1], keeps log finite
    u2 = rng.random(m)
    r = np.sqrt(-2.0 * np.log(u1))
    z = np.empty(2 * m)
    z[0::2] = r * np.cos(2.0 * np.pi * u2)
    z[1::2] = r * np.sin(2.0 * np.pi * u2)
    return std * z[:n]
