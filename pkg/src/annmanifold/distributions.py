"""Binning usage readings into discrete distributions.

A household's readings are grouped by period slot (half-hour of the week by
default, 48 x 7 = 336 slots).  Each slot's readings are binned on one common
grid into a pmf; pmfs are compared with Hellinger distance (L2 between square
roots) or total variation (L1 / 2), and a household is represented by the
concatenation of its slot pmfs.
"""

from __future__ import annotations

import csv
import math
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from annmanifold.core import PointCloud
from annmanifold.errors import DegenerateGrid, FormatError, InvalidInput, InvalidParameter
from annmanifold.metrics import Metric, total_variation

DEFAULT_BINS = 200
PERIODS_PER_DAY = 48
DEFAULT_PERIODS = PERIODS_PER_DAY * 7
MODES = ("raw", "hellinger", "tv")


@dataclass(frozen=True)
class BinGrid:
    edges: np.ndarray   # G + 1 ascending values

    @property
    def G(self) -> int:
        return self.edges.shape[0] - 1

    def same_as(self, other: "BinGrid") -> bool:
        return self is other or bool(np.array_equal(self.edges, other.edges))


def _finite(values) -> np.ndarray:
    v = np.asarray(values, dtype=float).ravel()
    return v[~np.isnan(v)]


def build_grid(values, G: int = DEFAULT_BINS) -> BinGrid:
    """Evenly spaced edges from the pooled minimum to the pooled maximum.

    NaN entries are treated as missing and ignored.
    """
    if G < 1:
        raise InvalidParameter("G must be >= 1")
    v = _finite(values)
    if v.size and not np.all(np.isfinite(v)):
        raise InvalidInput("readings contain infinite values")
    if v.size == 0 or v.min() == v.max():
        raise DegenerateGrid("need at least two distinct readings to build a grid")
    lo, hi = float(v.min()), float(v.max())
    edges = np.linspace(lo, hi, G + 1)
    edges[0], edges[-1] = lo, hi
    if np.any(np.diff(edges) <= 0):
        raise DegenerateGrid(f"range [{lo!r}, {hi!r}] too narrow for {G} distinct bins")
    edges.setflags(write=False)
    return BinGrid(edges)


@dataclass(frozen=True)
class DiscreteDistribution:
    pi: np.ndarray
    grid: BinGrid
    support_count: int

    @property
    def empty(self) -> bool:
        return self.support_count == 0


def bin_series(values, grid: BinGrid) -> DiscreteDistribution:
    """pmf of the non-missing values over ``grid``.

    Bins are [k_{g-1}, k_g) except the last, which also takes k_G.  An
    all-missing series yields the zero vector with support_count 0.
    """
    v = _finite(values)
    G = grid.G
    if v.size == 0:
        return DiscreteDistribution(np.zeros(G), grid, 0)
    e = grid.edges
    if v.min() < e[0] or v.max() > e[-1]:
        raise InvalidInput(f"readings fall outside the grid [{e[0]!r}, {e[-1]!r}]")
    idx = np.minimum(np.searchsorted(e, v, side="right") - 1, G - 1)
    counts = np.bincount(idx, minlength=G)
    return DiscreteDistribution(counts / v.size, grid, int(v.size))


def to_feature_vector(dist: DiscreteDistribution, mode: str = "hellinger") -> np.ndarray:
    """sqrt(pi) for Hellinger (pair with euclidean), pi itself for TV (pair with manhattan)."""
    if dist.empty:
        raise InvalidInput("cannot featurize an empty distribution")
    if mode == "hellinger":
        return np.sqrt(dist.pi)
    if mode in ("tv", "raw"):
        return dist.pi.copy()
    raise InvalidParameter(f"unknown mode {mode!r}; expected one of {MODES}")


def metric_for_mode(mode: str) -> Metric:
    return Metric.MANHATTAN if mode == "tv" else Metric.EUCLIDEAN


@dataclass(frozen=True)
class StackedDistribution:
    vector: np.ndarray
    H: int
    G: int
    empty_periods: tuple

    def block(self, h: int) -> np.ndarray:
        return self.vector[h * self.G:(h + 1) * self.G]


def stack_household(dists: Sequence[DiscreteDistribution]) -> StackedDistribution:
    """Concatenate per-slot pmfs; L1 between stacks equals twice the summed slot TVs."""
    if not dists:
        raise InvalidInput("no distributions to stack")
    grid = dists[0].grid
    if any(not d.grid.same_as(grid) for d in dists):
        raise InvalidInput("all period distributions must share one grid")
    empty = tuple(h for h, d in enumerate(dists) if d.empty)
    return StackedDistribution(np.concatenate([d.pi for d in dists]), len(dists), grid.G, empty)


def household_distance(a: Sequence[DiscreteDistribution], b: Sequence[DiscreteDistribution]) -> float:
    """Sum over period slots of the total variation between matching pmfs."""
    if len(a) != len(b):
        raise InvalidInput("households have different numbers of periods")
    return float(sum(total_variation(x.pi, y.pi) for x, y in zip(a, b)))


# ---------------------------------------------------------------------------
# household series


def slot_readings(series: np.ndarray, periods: int = DEFAULT_PERIODS) -> list[np.ndarray]:
    """Split a flat half-hourly series (index 0 = first slot) into per-slot reading lists."""
    s = np.asarray(series, dtype=float).ravel()
    return [s[h::periods] for h in range(periods)]


def period_distributions(series, grid: BinGrid, periods: int = DEFAULT_PERIODS) -> list[DiscreteDistribution]:
    return [bin_series(v, grid) for v in slot_readings(series, periods)]


def household_cloud(series, G: int = DEFAULT_BINS, mode: str = "hellinger",
                    periods: int = DEFAULT_PERIODS) -> tuple[PointCloud, BinGrid]:
    """One point per period slot of a single household: its featurized pmf."""
    grid = build_grid(series, G)
    dists = period_distributions(series, grid, periods)
    empty = [h for h, d in enumerate(dists) if d.empty]
    if empty:
        raise InvalidInput(f"period slots with no readings: {empty[:10]}")
    X = np.vstack([to_feature_vector(d, mode) for d in dists])
    return PointCloud(X, tuple(range(periods))), grid


def households_cloud(data: Mapping, G: int = DEFAULT_BINS, mode: str = "tv",
                     periods: int = DEFAULT_PERIODS) -> tuple[PointCloud, BinGrid]:
    """One point per household: stacked slot pmfs on a grid pooled over all households."""
    ids = sorted(data)
    grid = build_grid(np.concatenate([np.asarray(data[i], dtype=float).ravel() for i in ids]), G)
    rows = []
    for i in ids:
        st = stack_household(period_distributions(data[i], grid, periods))
        if st.empty_periods:
            raise InvalidInput(f"household {i!r} has empty period slots {list(st.empty_periods)[:10]}")
        rows.append(np.sqrt(st.vector) if mode == "hellinger" else st.vector)
    return PointCloud(np.vstack(rows), tuple(ids)), grid


# ---------------------------------------------------------------------------
# synthetic readings


def synthetic_household(seed: int, weeks: int = 75, periods: int = DEFAULT_PERIODS,
                        missing_rate: float = 0.0) -> np.ndarray:
    """Half-hourly kWh readings, ``weeks * periods`` long, with NaN for missing.

    Load = seasonal base (annual cycle) x daily profile (morning and evening
    peaks, weekend shift) + gamma noise + occasional appliance spikes.
    """
    rng = np.random.default_rng(seed)
    per_day = PERIODS_PER_DAY
    days = periods // per_day if periods % per_day == 0 else None
    t = np.arange(weeks * periods)
    hour = (t % per_day) / 2.0
    day = (t // per_day) % (days or 7)
    week = t // periods
    base = rng.uniform(0.15, 0.35)
    season = 1.0 + 0.3 * np.cos(2.0 * np.pi * (week + rng.uniform(0, 52)) / 52.0)
    am, pm = rng.uniform(6.5, 8.5), rng.uniform(17.0, 20.0)
    weekend = day >= 5
    shift = np.where(weekend, 1.5, 0.0)
    profile = (0.6 * np.exp(-0.5 * ((hour - am - shift) / 1.0) ** 2)
               + 1.0 * np.exp(-0.5 * ((hour - pm) / 1.5) ** 2)
               + np.where((hour >= 23) | (hour < 6), -0.1, 0.0))
    mean = np.maximum(base * season * (1.0 + profile), 0.02)
    load = rng.gamma(4.0, mean / 4.0)
    spikes = rng.random(t.size) < 0.02
    load = load + spikes * rng.exponential(1.5, t.size)
    load = np.round(load, 3)
    if missing_rate > 0:
        load[rng.random(t.size) < missing_rate] = np.nan
    return load


def synthetic_households(n: int, seed: int = 0, weeks: int = 75, periods: int = DEFAULT_PERIODS,
                         missing_rate: float = 0.0) -> dict:
    seeds = np.random.SeedSequence(seed).generate_state(n)
    return {1000 + i: synthetic_household(int(s), weeks, periods, missing_rate) for i, s in enumerate(seeds)}


# ---------------------------------------------------------------------------
# long-format CSV: id, period, value


def read_long_csv(path) -> dict:
    """{id: flat series} from rows ``id,period,value``; gaps and empty values become NaN."""
    cells: dict = defaultdict(dict)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip().lower() for h in header[:3]] != ["id", "period", "value"]:
            raise FormatError(f"{path}: expected header id,period,value")
        for lineno, row in enumerate(reader, start=2):
            if not row or not any(c.strip() for c in row):
                continue
            if len(row) < 3:
                raise FormatError(f"{path}:{lineno}: expected 3 columns")
            try:
                period = int(row[1])
                value = float(row[2]) if row[2].strip() else math.nan
            except ValueError as exc:
                raise FormatError(f"{path}:{lineno}: {exc}") from exc
            if period < 0:
                raise FormatError(f"{path}:{lineno}: negative period")
            cells[_parse_id(row[0])][period] = value
    out = {}
    for hid, d in cells.items():
        s = np.full(max(d) + 1, np.nan)
        s[list(d)] = list(d.values())
        out[hid] = s
    return out


def _parse_id(text: str):
    text = text.strip()
    try:
        return int(text)
    except ValueError:
        return text


def write_long_csv(data: Mapping, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "period", "value"])
        for hid in sorted(data, key=str):
            for t, v in enumerate(np.asarray(data[hid], dtype=float)):
                w.writerow([hid, t, "" if np.isnan(v) else repr(float(v))])


def pooled(data: Mapping | Iterable) -> np.ndarray:
    vals = data.values() if isinstance(data, Mapping) else data
    return np.concatenate([np.asarray(v, dtype=float).ravel() for v in vals])
