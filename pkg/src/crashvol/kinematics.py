"""Ingest, validate, clean and segment 10 Hz pre-crash kinematics traces.

Traces are held as immutable column arrays. Time bins are anchored at the
trace end (the crash instant): ``K=3`` is the last ``bin_length_s``
seconds, ``K=2`` the window before that and ``K=1`` the earliest.
"""
from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field
from typing import IO, Iterable, NamedTuple

import numpy as np

log = logging.getLogger(__name__)

TRACE_COLUMNS = ("event_id", "t", "speed_kmh", "accel_long_ms2", "accel_lat_ms2")
SAMPLE_INTERVAL_S = 0.1
N_BINS = 3
MIN_BIN_SAMPLES = 20
# Absorbs float noise in (t_end - t) so that e.g. 10.000000000000002 s
# still lands in the window starting at 10 s.
_WINDOW_EPS = 1e-9


class TraceParseError(ValueError):
    """Raised for structurally malformed trace CSV input."""

    def __init__(self, message, line=None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class TraceSample(NamedTuple):
    t: float
    speed: float
    accel_long: float
    accel_lat: float


@dataclass(frozen=True)
class Diagnostic:
    event_id: str
    message: str
    line: int | None = None

    def __str__(self):
        where = f" (line {self.line})" if self.line is not None else ""
        return f"event {self.event_id}{where}: {self.message}"


def _frozen(a):
    a = np.ascontiguousarray(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class KinematicsTrace:
    """One event's pre-crash time series.

    ``anchor_t`` is the crash instant used for binning. It defaults to the
    last timestamp and survives :func:`clean_trace`, so removing trailing
    zero-speed samples does not move the bin windows.
    """

    event_id: str
    t: np.ndarray
    speed: np.ndarray
    accel_long: np.ndarray
    accel_lat: np.ndarray
    anchor_t: float | None = None
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        arrays = [_frozen(getattr(self, name)) for name in ("t", "speed", "accel_long", "accel_lat")]
        n = len(arrays[0])
        if any(len(a) != n for a in arrays):
            raise ValueError("trace columns must have equal length")
        for name, a in zip(("t", "speed", "accel_long", "accel_lat"), arrays):
            object.__setattr__(self, name, a)
        if self.anchor_t is None and n:
            object.__setattr__(self, "anchor_t", float(arrays[0][-1]))

    def __len__(self):
        return len(self.t)

    def __eq__(self, other):
        if not isinstance(other, KinematicsTrace):
            return NotImplemented
        return (
            self.event_id == other.event_id
            and all(
                np.array_equal(getattr(self, c), getattr(other, c))
                for c in ("t", "speed", "accel_long", "accel_lat")
            )
        )

    __hash__ = None

    @property
    def samples(self) -> list[TraceSample]:
        return [TraceSample(*row) for row in zip(self.t, self.speed, self.accel_long, self.accel_lat)]

    @property
    def duration_s(self) -> float:
        return float(self.t[-1] - self.t[0]) if len(self) else 0.0

    @property
    def degenerate(self) -> bool:
        return len(self) == 0

    @property
    def gaps(self) -> np.ndarray:
        """Indices ``i`` where ``t[i+1] - t[i]`` exceeds the nominal 0.1 s."""
        if len(self) < 2:
            return np.empty(0, dtype=int)
        return np.flatnonzero(np.diff(self.t) > SAMPLE_INTERVAL_S * 1.5)

    def take(self, mask_or_index, **provenance) -> KinematicsTrace:
        prov = dict(self.provenance)
        prov.update(provenance)
        return KinematicsTrace(
            self.event_id,
            self.t[mask_or_index],
            self.speed[mask_or_index],
            self.accel_long[mask_or_index],
            self.accel_lat[mask_or_index],
            anchor_t=self.anchor_t,
            provenance=prov,
        )


@dataclass(frozen=True, eq=False)
class TimeBin:
    """Samples whose backward offset from the anchor lies in ``window``.

    ``window`` is ``(lo, hi)`` seconds before the trace end, half-open
    ``[lo, hi)``. A missing bin carries ``trace=None``.
    """

    index: int
    window: tuple[float, float]
    trace: KinematicsTrace | None

    @property
    def missing(self) -> bool:
        return self.trace is None

    @property
    def n_samples(self) -> int:
        return 0 if self.trace is None else len(self.trace)


def _check_trace_values(t, speed, along, alat):
    if not (np.all(np.isfinite(t)) and np.all(np.isfinite(speed))):
        return "non-finite time or speed"
    if not (np.all(np.isfinite(along)) and np.all(np.isfinite(alat))):
        return "non-finite acceleration"
    if np.any(speed < 0):
        return "negative speed"
    if np.any(t < 0):
        return "negative time"
    return None


def parse_traces(source: IO | str | bytes, diagnostics: list | None = None) -> list[KinematicsTrace]:
    """Parse trace CSV into one :class:`KinematicsTrace` per ``event_id``.

    Non-numeric fields and missing columns raise :class:`TraceParseError`.
    Events with non-finite or negative values, or duplicate timestamps, are
    excluded; a :class:`Diagnostic` is appended to ``diagnostics`` for each.
    Traces come back in first-appearance order with samples sorted by ``t``.
    """
    if isinstance(source, bytes):
        source = source.decode("utf-8")
    if isinstance(source, str):
        source = io.StringIO(source)
    elif hasattr(source, "mode") and "b" in getattr(source, "mode", ""):
        source = io.TextIOWrapper(source, encoding="utf-8")
    if diagnostics is None:
        diagnostics = []

    reader = csv.reader(source)
    header = next(reader, None)
    if header is None:
        return []
    header = [h.strip() for h in header]
    missing = [c for c in TRACE_COLUMNS if c not in header]
    if missing:
        raise TraceParseError(f"missing column(s): {', '.join(missing)}", line=1)
    pos = [header.index(c) for c in TRACE_COLUMNS]

    rows: dict[str, list] = {}
    lines: dict[str, list] = {}
    for lineno, row in enumerate(reader, start=2):
        if not row or all(not cell.strip() for cell in row):
            continue
        if len(row) < len(header):
            raise TraceParseError(f"expected {len(header)} fields, got {len(row)}", line=lineno)
        eid = row[pos[0]].strip()
        values = []
        for name, p in zip(TRACE_COLUMNS[1:], pos[1:]):
            cell = row[p].strip()
            try:
                values.append(float(cell))
            except ValueError:
                raise TraceParseError(f"non-numeric {name} {cell!r}", line=lineno) from None
        rows.setdefault(eid, []).append(values)
        lines.setdefault(eid, []).append(lineno)

    traces = []
    for eid, vals in rows.items():
        arr = np.asarray(vals, dtype=float)
        line_no = np.asarray(lines[eid])
        order = np.argsort(arr[:, 0], kind="stable")
        arr, line_no = arr[order], line_no[order]
        t, speed, along, alat = arr.T
        problem = _check_trace_values(t, speed, along, alat)
        if problem is None:
            dup = np.flatnonzero(np.diff(t) == 0)
            if len(dup):
                problem = f"duplicate timestamp t={t[dup[0]]!r}"
                bad_line = int(line_no[dup[0] + 1])
        else:
            bad = ~(np.isfinite(arr).all(axis=1) & (speed >= 0) & (t >= 0))
            bad_line = int(line_no[np.flatnonzero(bad)[0]])
        if problem is not None:
            d = Diagnostic(eid, f"{problem}; event excluded", bad_line)
            log.warning("%s", d)
            diagnostics.append(d)
            continue
        traces.append(KinematicsTrace(eid, t, speed, along, alat, provenance={"source_rows": len(t)}))
    return traces


def write_traces(traces: Iterable[KinematicsTrace], sink: IO[str]) -> None:
    """Serialize traces in the CSV format read by :func:`parse_traces`."""
    w = csv.writer(sink, lineterminator="\n")
    w.writerow(TRACE_COLUMNS)
    for tr in traces:
        for s in zip(tr.t, tr.speed, tr.accel_long, tr.accel_lat):
            w.writerow([tr.event_id, *(repr(float(v)) for v in s)])


def clean_trace(trace: KinematicsTrace) -> KinematicsTrace:
    """Drop zero-speed samples, keeping the original anchor time."""
    keep = trace.speed != 0
    original = trace.provenance.get("original_samples", len(trace))
    removed = trace.provenance.get("removed_zero_speed", 0) + int(len(trace) - keep.sum())
    return trace.take(
        keep, original_samples=original, removed_zero_speed=removed, degenerate=not keep.any()
    )


def bin_offsets(trace: KinematicsTrace) -> np.ndarray:
    """Seconds before the anchor for every sample."""
    if trace.degenerate:
        return np.empty(0)
    return trace.anchor_t - trace.t


def segment_trace(
    trace: KinematicsTrace,
    bin_length_s: float = 10.0,
    min_bin_samples: int = MIN_BIN_SAMPLES,
) -> list[TimeBin]:
    """Split a cleaned trace into the three end-anchored bins.

    Always returns three :class:`TimeBin` objects ordered ``K=1, 2, 3``;
    bins with fewer than ``min_bin_samples`` samples are marked missing.
    """
    if not bin_length_s > 0:
        raise ValueError("bin_length_s must be positive")
    offsets = bin_offsets(trace)
    slot = np.floor((offsets + _WINDOW_EPS) / bin_length_s).astype(int) if len(offsets) else offsets
    bins = []
    for k in range(1, N_BINS + 1):
        back = N_BINS - k
        window = (back * bin_length_s, (back + 1) * bin_length_s)
        idx = np.flatnonzero(slot == back) if len(offsets) else np.empty(0, dtype=int)
        sub = trace.take(idx, bin=k) if len(idx) >= min_bin_samples else None
        bins.append(TimeBin(k, window, sub))
    return bins
