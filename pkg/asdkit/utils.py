"""
Utility functions shared by the asdkit modules.
"""

import itertools
import math
import zlib

import numpy as np
from scipy.special import gammaln

from .errors import InvalidDistribution


# Tolerance for "sums to one" checks on user supplied tables.
PROB_TOL = 1e-12


def stream_key(part):
    """Map a substream key component to a non-negative int."""
    if isinstance(part, (int, np.integer)):
        if part < 0:
            raise ValueError(f"negative substream key: {part}")
        return int(part)
    # Strings hash stably across processes (unlike hash()).
    return zlib.crc32(str(part).encode("utf-8"))


def make_rng(seed, *key):
    """
    Counter-based generator for the substream (seed, *key).

    The same (seed, key) always gives the same stream; distinct keys give
    independent streams, so parallel runs stay reproducible.
    """
    seq = np.random.SeedSequence(int(seed), spawn_key=tuple(stream_key(k) for k in key))
    return np.random.Generator(np.random.Philox(seq))


def check_probability_vector(p, what="distribution", tol=PROB_TOL):
    """Raise InvalidDistribution unless p is a probability vector."""
    p = np.asarray(p, dtype=float)
    if p.size == 0:
        raise InvalidDistribution(f"{what} is empty")
    if np.any(p < -tol) or not np.all(np.isfinite(p)):
        raise InvalidDistribution(f"{what} has negative or non-finite entries")
    total = float(p.sum())
    if abs(total - 1.0) > tol:
        raise InvalidDistribution(f"{what} sums to {total!r}, expected 1")
    return p


def largest_remainder(weights, total):
    """
    Round total*weights to integers summing to total.

    Floors first, then hands the leftover units to the largest fractional
    parts (ties broken by position).
    """
    weights = np.asarray(weights, dtype=float)
    raw = weights * total
    counts = np.floor(raw).astype(np.int64)
    leftover = int(total - counts.sum())
    if leftover > 0:
        order = np.argsort(-(raw - counts), kind="stable")
        counts[order[:leftover]] += 1
    return counts


def compositions(total, parts):
    """
    All vectors of `parts` non-negative ints summing to `total`.

    Returned as an int array of shape (C(total+parts-1, parts-1), parts),
    in stars-and-bars order.
    """
    if parts == 1:
        return np.array([[total]], dtype=np.int64)
    rows = []
    slots = total + parts - 1
    for bars in itertools.combinations(range(slots), parts - 1):
        prev = -1
        row = []
        for b in bars:
            row.append(b - prev - 1)
            prev = b
        row.append(slots - prev - 1)
        rows.append(row)
    return np.array(rows, dtype=np.int64)


def composition_count(total, parts):
    return math.comb(total + parts - 1, parts - 1)


def log_multinomial(rows):
    """log of total!/prod(row!) for each row of an int array."""
    rows = np.asarray(rows)
    return gammaln(rows.sum(axis=-1) + 1) - gammaln(rows + 1).sum(axis=-1)


def simplex_lattice(dim, resolution):
    """Points of the (dim-1)-simplex with coordinates in multiples of 1/resolution."""
    return compositions(resolution, dim).astype(float) / resolution


def total_variation(p, q):
    """Half L1 distance between two dicts (or aligned arrays) of probabilities."""
    if isinstance(p, dict):
        keys = set(p) | set(q)
        return 0.5 * sum(abs(p.get(k, 0.0) - q.get(k, 0.0)) for k in keys)
    return 0.5 * float(np.abs(np.asarray(p) - np.asarray(q)).sum())


def project_simplex(v, axis=0):
    """Clamp to [0, 1] and renormalise along axis."""
    v = np.clip(v, 0.0, 1.0)
    s = v.sum(axis=axis, keepdims=True)
    s[s == 0] = 1.0
    return v / s
