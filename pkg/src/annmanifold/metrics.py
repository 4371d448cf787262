"""Distance functions and probability-vector transforms.

Hellinger and total-variation distances between pmfs reduce to plain L2 and
L1 distances between transformed vectors:

    H(p, q)  = ||sqrt(p) - sqrt(q)||_2 / sqrt(2)
    TV(p, q) = ||p - q||_1 / 2

Indexes work on the raw transformed vectors; the constant factors do not
change neighbor order.
"""

from enum import Enum

import numpy as np

from annmanifold import _kernels
from annmanifold.errors import InvalidInput, InvalidParameter

PMF_TOL = 1e-9


class Metric(str, Enum):
    EUCLIDEAN = "euclidean"
    MANHATTAN = "manhattan"

    @property
    def code(self) -> int:
        return _kernels.EUCLIDEAN if self is Metric.EUCLIDEAN else _kernels.MANHATTAN

    @classmethod
    def parse(cls, value) -> "Metric":
        if isinstance(value, Metric):
            return value
        aliases = {"l2": cls.EUCLIDEAN, "euclidean": cls.EUCLIDEAN,
                   "l1": cls.MANHATTAN, "manhattan": cls.MANHATTAN}
        try:
            return aliases[str(value).lower()]
        except KeyError:
            raise InvalidParameter(f"unknown metric {value!r}") from None

    def key_to_distance(self, key):
        """Map comparison keys (squared L2 or L1) to distances."""
        return np.sqrt(key) if self is Metric.EUCLIDEAN else np.asarray(key, dtype=float)


def _pair(a, b):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.ndim != 1 or a.shape != b.shape:
        raise InvalidInput(f"vectors must be 1-d with equal length, got {a.shape} and {b.shape}")
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise InvalidInput("vectors contain non-finite entries")
    return a, b


def euclidean(a, b) -> float:
    a, b = _pair(a, b)
    return float(np.sqrt(_kernels.dist_key(a, b, _kernels.EUCLIDEAN)))


def manhattan(a, b) -> float:
    a, b = _pair(a, b)
    return float(_kernels.dist_key(a, b, _kernels.MANHATTAN))


def check_pmf(p, tol: float = PMF_TOL) -> np.ndarray:
    """Validate a probability vector and renormalize it if within tolerance."""
    p = np.asarray(p, dtype=float)
    if p.ndim != 1 or p.size == 0:
        raise InvalidInput("pmf must be a non-empty 1-d vector")
    if not np.all(np.isfinite(p)):
        raise InvalidInput("pmf contains non-finite entries")
    if np.any(p < 0):
        raise InvalidInput("pmf has negative mass")
    s = p.sum()
    if abs(s - 1.0) > tol:
        raise InvalidInput(f"pmf sums to {s!r}, not 1 within {tol}")
    return p / s


def hellinger_coords(pmf) -> np.ndarray:
    return np.sqrt(check_pmf(pmf))


def hellinger(p, q) -> float:
    a, b = _pair(hellinger_coords(p), hellinger_coords(q))
    return euclidean(a, b) / np.sqrt(2.0)


def total_variation(p, q) -> float:
    a, b = _pair(check_pmf(p), check_pmf(q))
    return 0.5 * manhattan(a, b)
