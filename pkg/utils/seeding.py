"""
Seed handling
Every random stream is a counter-based Philox generator keyed by an integer seed.
Per-measurement seeds are mixed from the master seed with BLAKE2b so that
measurements are independent but reproducible in any execution order.
"""
import hashlib

import numpy as np

# Stream labels mixed into derived seeds
STREAMS = ("symbols", "channel", "detector", "calibration")


def make_rng(seed):
    """Philox generator for a non-negative integer seed"""
    if seed is None or int(seed) < 0:
        raise ValueError(f"seed must be a non-negative integer, got {seed!r}")
    return np.random.Generator(np.random.Philox(key=int(seed)))


def derive_seed(master_seed, measurement, stream):
    """
    seed = first 8 bytes (little endian) of BLAKE2b-64("{master}:{measurement}:{stream}")

    Args:
        master_seed: experiment master seed
        measurement: measurement index m
        stream: one of STREAMS

    Returns:
        63-bit non-negative integer seed
    """
    if stream not in STREAMS:
        raise ValueError(f"unknown seed stream {stream!r}; expected one of {STREAMS}")
    digest = hashlib.blake2b(
        f"{int(master_seed)}:{int(measurement)}:{stream}".encode("utf-8"),
        digest_size=8,
    ).digest()
    return int.from_bytes(digest, "little") >> 1


def measurement_seeds(master_seed, measurement):
    """All stream seeds of one measurement"""
    return {stream: derive_seed(master_seed, measurement, stream) for stream in STREAMS}
