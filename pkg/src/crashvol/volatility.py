"""Coefficient-of-variation driving-volatility indices.

Each event yields 16 CVs (longitudinal/lateral x acceleration/deceleration,
over the whole cleaned trace and per 10 s bin) plus mean speeds. Missing
values are NaN in memory and empty fields in CSV.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import IO, Iterable, Mapping, Sequence

import numpy as np

from .kinematics import N_BINS, KinematicsTrace, TimeBin, clean_trace, segment_trace

MIN_SIDE_SAMPLES = 5

CV_BASE = ("cv_long_acc", "cv_long_dec", "cv_lat_acc", "cv_lat_dec")
FEATURE_COLUMNS = (
    CV_BASE
    + tuple(f"{name}_k{k}" for k in range(1, N_BINS + 1) for name in CV_BASE)
    + ("mean_speed",)
    + tuple(f"mean_speed_k{k}" for k in range(1, N_BINS + 1))
)


def split_signed(values) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(acc, dec)`` magnitudes; zeros belong to neither side."""
    v = np.asarray(values, dtype=float)
    return v[v > 0], -v[v < 0]


def coefficient_of_variation(values, min_samples: int = 1) -> float:
    """Sample SD (n-1) over mean; NaN if too few values or a zero mean."""
    v = np.asarray(values, dtype=float)
    if len(v) < max(min_samples, 2):
        return math.nan
    mu = v.mean()
    if mu == 0:
        return math.nan
    # a constant sample has zero spread; skip the rounding noise in the mean
    if v.min() == v.max():
        return 0.0
    return float(v.std(ddof=1) / mu)


@dataclass(frozen=True)
class VolatilityFeatures:
    event_id: str
    values: Mapping[str, float]
    degenerate: bool = False
    provenance: dict = field(default_factory=dict, compare=False)

    def __getitem__(self, name):
        return self.values[name]

    def row(self) -> list[float]:
        return [self.values[c] for c in FEATURE_COLUMNS]


def _window_features(trace: KinematicsTrace, suffix: str, min_side_samples: int) -> dict:
    out = {}
    for channel, arr in (("long", trace.accel_long), ("lat", trace.accel_lat)):
        acc, dec = split_signed(arr)
        out[f"cv_{channel}_acc{suffix}"] = coefficient_of_variation(acc, min_side_samples)
        out[f"cv_{channel}_dec{suffix}"] = coefficient_of_variation(dec, min_side_samples)
    out[f"mean_speed{suffix}"] = float(trace.speed.mean()) if len(trace) else math.nan
    return out


def compute_features(
    trace: KinematicsTrace,
    bins: Sequence[TimeBin],
    min_side_samples: int = MIN_SIDE_SAMPLES,
) -> VolatilityFeatures:
    """Aggregate and per-bin features for a cleaned trace and its bins."""
    values = dict.fromkeys(FEATURE_COLUMNS, math.nan)
    if not trace.degenerate:
        values.update(_window_features(trace, "", min_side_samples))
        for b in bins:
            if not b.missing:
                values.update(_window_features(b.trace, f"_k{b.index}", min_side_samples))
    prov = dict(trace.provenance)
    prov["bin_samples"] = {b.index: b.n_samples for b in bins}
    return VolatilityFeatures(trace.event_id, values, trace.degenerate, prov)


def extract_features(
    trace: KinematicsTrace,
    bin_length_s: float = 10.0,
    min_bin_samples: int = 20,
    min_side_samples: int = MIN_SIDE_SAMPLES,
) -> VolatilityFeatures:
    """Clean, segment and featurize one raw trace."""
    cleaned = clean_trace(trace)
    bins = segment_trace(cleaned, bin_length_s, min_bin_samples)
    return compute_features(cleaned, bins, min_side_samples)


def _fmt(v: float) -> str:
    return "" if v is None or math.isnan(v) else repr(float(v))


def write_features(features: Iterable[VolatilityFeatures], sink: IO[str]) -> None:
    w = csv.writer(sink, lineterminator="\n")
    w.writerow(("event_id",) + FEATURE_COLUMNS)
    for f in features:
        w.writerow([f.event_id, *(_fmt(v) for v in f.row())])


def read_table(source: IO[str], key: str = "event_id") -> tuple[list[str], dict[str, np.ndarray]]:
    """Read a CSV into ``(keys, {column: float array})``.

    Empty fields become NaN. Non-numeric columns are kept as object arrays.
    """
    reader = csv.DictReader(source)
    if reader.fieldnames is None:
        return [], {}
    raw = {name.strip(): [] for name in reader.fieldnames}
    for row in reader:
        for name, cell in row.items():
            raw[name.strip()].append("" if cell is None else cell.strip())
    keys = raw.pop(key, None)
    if keys is None:
        raise KeyError(f"missing key column {key!r}")
    cols = {}
    for name, cells in raw.items():
        try:
            cols[name] = np.array([float(c) if c != "" else math.nan for c in cells], dtype=float)
        except ValueError:
            cols[name] = np.array(cells, dtype=object)
    return keys, cols


@dataclass(frozen=True)
class ColumnStats:
    n: int
    mean: float
    sd: float
    min: float
    max: float


def describe(table: Mapping[str, Sequence[float]]) -> dict[str, ColumnStats]:
    """N / mean / sample SD / min / max per column, ignoring NaN."""
    if not table or all(len(np.asarray(v)) == 0 for v in table.values()):
        raise ValueError("empty dataset")
    out = {}
    for name, col in table.items():
        v = np.asarray(col, dtype=float)
        v = v[~np.isnan(v)]
        n = len(v)
        if n == 0:
            out[name] = ColumnStats(0, math.nan, math.nan, math.nan, math.nan)
            continue
        sd = float(v.std(ddof=1)) if n > 1 else math.nan
        out[name] = ColumnStats(n, float(v.mean()), sd, float(v.min()), float(v.max()))
    return out


def write_describe(stats: Mapping[str, ColumnStats], sink: IO[str]) -> None:
    w = csv.writer(sink, lineterminator="\n")
    w.writerow(("variable", "n", "mean", "sd", "min", "max"))
    for name, s in stats.items():
        w.writerow([name, s.n, _fmt(s.mean), _fmt(s.sd), _fmt(s.min), _fmt(s.max)])
