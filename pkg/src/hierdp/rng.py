"""Counter-based random streams for reproducible noise generation.

Each (seed, node id, replicate index) triple maps to one uniform draw
through a splitmix64-style hash, so noise values do not depend on
traversal order, chunking, or worker count. Node ids are hashed with
blake2b rather than Python's ``hash`` to stay stable across processes.
"""

from __future__ import annotations

import hashlib

import numpy as np

_GAMMA = 0x9E3779B97F4A7C15
_MASK = (1 << 64) - 1

_U64_GAMMA = np.uint64(_GAMMA)
_C1 = np.uint64(0xBF58476D1CE4E5B9)
_C2 = np.uint64(0x94D049BB133111EB)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)


def _mix64_int(z: int) -> int:
    z = (z + _GAMMA) & _MASK
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return z ^ (z >> 31)


def _mix64_np(z: np.ndarray) -> np.ndarray:
    # uint64 arithmetic wraps; silence the spurious overflow warnings
    with np.errstate(over="ignore"):
        z = z + _U64_GAMMA
        z = (z ^ (z >> _S30)) * _C1
        z = (z ^ (z >> _S27)) * _C2
        return z ^ (z >> _S31)


def node_key(node_id: str) -> int:
    """Stable 64-bit key for a node id."""
    return int.from_bytes(
        hashlib.blake2b(node_id.encode("utf-8"), digest_size=8).digest(), "big"
    )


def derive_seed(seed: int, index: int) -> int:
    """Independent child seed for replicate ``index`` of ``seed``."""
    return _mix64_int(_mix64_int(seed & _MASK) ^ (index & _MASK))


def node_keys(node_ids) -> np.ndarray:
    return np.array([node_key(i) for i in node_ids], dtype=np.uint64)


def _seed_base(seed: int) -> int:
    return _mix64_int((seed & _MASK) ^ 0x5DEECE66D)


def _to_unit(out: np.ndarray | int):
    """Map 64-bit words to uniforms strictly inside (-1/2, 1/2)."""
    if isinstance(out, np.ndarray):
        u = ((out >> _S11).astype(np.float64) + 0.5) * 2.0**-53
    else:
        u = ((out >> 11) + 0.5) * 2.0**-53
    return u - 0.5


def centered_uniforms(seed: int, keys: np.ndarray, replicate: int) -> np.ndarray:
    """One uniform in (-1/2, 1/2) per node key, for a given replicate."""
    base = np.uint64(_seed_base(seed))
    with np.errstate(over="ignore"):
        k = _mix64_np(keys ^ base)
        out = _mix64_np(k + np.uint64(replicate & _MASK) * _U64_GAMMA)
    return _to_unit(out)


def centered_uniform(seed: int, key: int, replicate: int) -> float:
    k = _mix64_int(key ^ _seed_base(seed))
    out = _mix64_int((k + replicate * _GAMMA) & _MASK)
    return float(_to_unit(out))


def centered_uniform_matrix(
    seed: int, keys: np.ndarray, rep_lo: int, rep_hi: int
) -> np.ndarray:
    """Matrix of uniforms, rows = replicates [rep_lo, rep_hi), columns =
    node keys. Row r equals ``centered_uniforms(seed, keys, r)``."""
    base = np.uint64(_seed_base(seed))
    reps = np.arange(rep_lo, rep_hi, dtype=np.uint64)
    with np.errstate(over="ignore"):
        k = _mix64_np(keys ^ base)
        out = _mix64_np(k[None, :] + reps[:, None] * _U64_GAMMA)
    return _to_unit(out)


def standard_laplace(u):
    """Inverse-CDF transform of centered uniforms to unit-scale Laplace.

    ``u`` must lie in (-1/2, 1/2); the map is sign(u)-symmetric with
    median 0 and variance 2.
    """
    return -np.sign(u) * np.log1p(-2.0 * np.abs(u))


class CounterStream:
    """Sequential view over one node's counter-based stream.

    ``next_uniform()`` advances the replicate counter by one; values
    agree exactly with the vectorized ``centered_uniforms`` path at the
    same (seed, node, counter) coordinates.
    """

    def __init__(self, seed: int, node_id: str, start: int = 0):
        self._key = _mix64_int(node_key(node_id) ^ _seed_base(seed))
        self._counter = start

    def next_uniform(self) -> float:
        out = _mix64_int((self._key + self._counter * _GAMMA) & _MASK)
        self._counter += 1
        return float(_to_unit(out))
