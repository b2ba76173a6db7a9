"""Dense float64 vector/matrix primitives and seeded random streams.

All arithmetic is 64-bit. Reductions in :func:`dot` and :func:`matvec` are
performed in fixed left-to-right order (via ``cumsum``, which is bitwise
identical to a sequential accumulation loop), so results are reproducible
across runs and match a naive reference implementation exactly.

Random streams use numpy's counter-based Philox generator keyed by
``(stream_id << 64) | seed``; numpy pins the bit stream across platforms and
versions, and distinct keys give statistically independent streams. Frozen
draw values are asserted in the test suite as regression vectors.
"""

from __future__ import annotations

import numpy as np
from numpy.random import Generator, Philox

from .errors import DimensionError, NumericError, ParameterError

_MASK64 = (1 << 64) - 1


def as_vector(values) -> np.ndarray:
    """Coerce to a contiguous 1-D float64 array."""
    v = np.ascontiguousarray(values, dtype=np.float64)
    if v.ndim != 1:
        raise DimensionError(f"expected a 1-D vector, got shape {v.shape}")
    return v


def as_matrix(values) -> np.ndarray:
    """Coerce to a contiguous 2-D float64 array (row-major)."""
    m = np.ascontiguousarray(values, dtype=np.float64)
    if m.ndim != 2:
        raise DimensionError(f"expected a 2-D matrix, got shape {m.shape}")
    return m


def require_finite(arr: np.ndarray, what: str) -> np.ndarray:
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"non-finite values in {what}")
    return arr


def dot(a, b) -> float:
    """Inner product with deterministic left-to-right summation."""
    a = as_vector(a)
    b = as_vector(b)
    if a.shape[0] != b.shape[0]:
        raise DimensionError(f"dot length mismatch: {a.shape[0]} vs {b.shape[0]}")
    if a.shape[0] == 0:
        return 0.0
    return float(np.cumsum(a * b)[-1])


def norm2(v) -> float:
    return float(np.sqrt(dot(v, v)))


def matvec(m, v) -> np.ndarray:
    """Matrix-vector product, each row reduced in deterministic order."""
    m = as_matrix(m)
    v = as_vector(v)
    if m.shape[1] != v.shape[0]:
        raise DimensionError(f"matvec shape mismatch: {m.shape} x {v.shape[0]}")
    if m.shape[1] == 0:
        return np.zeros(m.shape[0])
    return np.cumsum(m * v, axis=1)[:, -1].copy()


def _mix64(*parts: int) -> int:
    """splitmix64-style mixer for deriving child stream ids."""
    h = 0x9E3779B97F4A7C15
    for p in parts:
        h = (h ^ (p & _MASK64)) * 0xBF58476D1CE4E5B9 & _MASK64
        h = (h ^ (h >> 27)) * 0x94D049BB133111EB & _MASK64
        h ^= h >> 31
    return h


def _tag_to_int(tag) -> int:
    if isinstance(tag, int):
        return tag & _MASK64
    # stable string hash (FNV-1a), independent of PYTHONHASHSEED
    h = 0xCBF29CE484222325
    for byte in str(tag).encode("utf-8"):
        h = ((h ^ byte) * 0x100000001B3) & _MASK64
    return h


class SeededRng:
    """Deterministic random stream identified by (seed, stream_id).

    Identical (seed, stream_id) pairs reproduce identical draw sequences;
    distinct stream_ids are independent. Single-owner mutable: do not share
    one instance across concurrent consumers, derive children instead.
    """

    def __init__(self, seed: int, stream_id: int = 0):
        self.seed = int(seed) & _MASK64
        self.stream_id = int(stream_id) & _MASK64
        key = (self.stream_id << 64) | self.seed
        self.generator = Generator(Philox(key=key))

    def child(self, *tags) -> "SeededRng":
        """Independent stream derived deterministically from this one's identity."""
        ints = [self.stream_id] + [_tag_to_int(t) for t in tags]
        return SeededRng(self.seed, _mix64(*ints))

    def normal(self, size=None, mean: float = 0.0, std: float = 1.0):
        return self.generator.normal(loc=mean, scale=std, size=size)

    def permutation(self, n: int) -> np.ndarray:
        return self.generator.permutation(n)

    def choice(self, n: int, size: int, replace: bool = False) -> np.ndarray:
        return self.generator.choice(n, size=size, replace=replace)

    def get_state(self) -> dict:
        """JSON-serializable bit-generator state (for checkpointing)."""
        raw = self.generator.bit_generator.state
        return {
            "seed": self.seed,
            "stream_id": self.stream_id,
            "counter": [int(x) for x in raw["state"]["counter"]],
            "key": [int(x) for x in raw["state"]["key"]],
            "buffer": [int(x) for x in raw["buffer"]],
            "buffer_pos": int(raw["buffer_pos"]),
            "has_uint32": int(raw["has_uint32"]),
            "uinteger": int(raw["uinteger"]),
        }

    @classmethod
    def from_state(cls, state: dict) -> "SeededRng":
        rng = cls(state["seed"], state["stream_id"])
        raw = rng.generator.bit_generator.state
        raw["state"]["counter"] = np.array(state["counter"], dtype=np.uint64)
        raw["state"]["key"] = np.array(state["key"], dtype=np.uint64)
        raw["buffer"] = np.array(state["buffer"], dtype=np.uint64)
        raw["buffer_pos"] = state["buffer_pos"]
        raw["has_uint32"] = state["has_uint32"]
        raw["uinteger"] = state["uinteger"]
        rng.generator.bit_generator.state = raw
        return rng


def gaussian_vector(rng: SeededRng, dim: int, mean: float = 0.0, std: float = 1.0) -> np.ndarray:
    """dim i.i.d. normal draws; std = 0 degenerates to the constant `mean`."""
    if std < 0:
        raise ParameterError(f"std must be >= 0, got {std}")
    if dim < 1:
        raise ParameterError(f"dim must be >= 1, got {dim}")
    return rng.normal(size=dim, mean=mean, std=std)
