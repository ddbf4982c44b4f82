"""Dataset container, trace-aware splitting, seeding and file I/O."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import RangeError, SchemaError, SplitError, StatisticsError

# A confidence is a plain float in [0, 1]; see check_confidence.
Confidence = float


def check_confidence(value, *, row=None, column=None) -> float:
    value = float(value)
    if not (0.0 <= value <= 1.0):
        raise RangeError(f"confidence {value!r} outside [0, 1]", row=row, column=column)
    return value


def check_confidences(values) -> np.ndarray:
    arr = np.asarray(values, dtype=float)
    if arr.size and (np.isnan(arr).any() or arr.min() < 0.0 or arr.max() > 1.0):
        bad = np.flatnonzero(~((arr >= 0.0) & (arr <= 1.0)).ravel())[0]
        raise RangeError(f"confidence {arr.ravel()[bad]!r} outside [0, 1] at index {bad}")
    return arr


@dataclass(frozen=True)
class RngSeed:
    """Reproducible randomness: identical (seed, stream_id) gives identical streams."""

    seed: int
    stream_id: int = 0

    def __post_init__(self):
        if not (0 <= int(self.seed) < 2**64):
            raise ValueError("seed must be a 64-bit unsigned integer")

    def generator(self) -> np.random.Generator:
        return np.random.default_rng(np.random.SeedSequence(int(self.seed), spawn_key=(int(self.stream_id),)))

    def child(self, stream_id: int) -> "RngSeed":
        # Derived streams stay within the same root seed.
        return RngSeed(self.seed, self.stream_id * 1_000_003 + stream_id + 1)


@dataclass(frozen=True)
class MonitorSample:
    trace_id: int
    step: int
    monitor_values: tuple[float, ...]
    assumption_flags: tuple[bool, ...]
    safety_flag: bool


@dataclass(frozen=True, eq=False)
class Dataset:
    """Immutable column store of monitor samples.

    Columns are numpy arrays: ``trace_ids`` and ``steps`` (N,), ``monitors``
    (N, k) confidences, ``flags`` (N, k) booleans and ``safety`` (N,) booleans.
    """

    trace_ids: np.ndarray
    steps: np.ndarray
    monitors: np.ndarray
    flags: np.ndarray
    safety: np.ndarray
    metadata: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        trace_ids = np.asarray(self.trace_ids, dtype=np.int64).reshape(-1)
        n = trace_ids.shape[0]
        monitors = np.asarray(self.monitors, dtype=float)
        if monitors.ndim == 1:
            monitors = monitors.reshape(n, -1) if n else monitors.reshape(0, 0)
        flags = np.asarray(self.flags, dtype=bool).reshape(monitors.shape)
        steps = np.asarray(self.steps, dtype=np.int64).reshape(-1)
        safety = np.asarray(self.safety, dtype=bool).reshape(-1)
        if not (steps.shape[0] == safety.shape[0] == monitors.shape[0] == n):
            raise SchemaError("column lengths differ")
        if n and steps.min() < 0:
            raise SchemaError("negative step index")
        check_confidences(monitors)
        _check_trace_safety(trace_ids, safety)
        for arr in (trace_ids, steps, monitors, flags, safety):
            arr.setflags(write=False)
        object.__setattr__(self, "trace_ids", trace_ids)
        object.__setattr__(self, "steps", steps)
        object.__setattr__(self, "monitors", monitors)
        object.__setattr__(self, "flags", flags)
        object.__setattr__(self, "safety", safety)
        object.__setattr__(self, "metadata", dict(self.metadata))

    @classmethod
    def from_samples(cls, samples: Iterable[MonitorSample], monitor_count: int | None = None,
                     metadata: Mapping[str, str] | None = None) -> "Dataset":
        samples = list(samples)
        if monitor_count is None:
            monitor_count = len(samples[0].monitor_values) if samples else 0
        for i, s in enumerate(samples):
            if len(s.monitor_values) != monitor_count or len(s.assumption_flags) != monitor_count:
                raise SchemaError(f"sample has {len(s.monitor_values)} monitors, expected {monitor_count}", row=i)
        return cls(
            trace_ids=np.array([s.trace_id for s in samples], dtype=np.int64),
            steps=np.array([s.step for s in samples], dtype=np.int64),
            monitors=np.array([s.monitor_values for s in samples], dtype=float).reshape(len(samples), monitor_count),
            flags=np.array([s.assumption_flags for s in samples], dtype=bool).reshape(len(samples), monitor_count),
            safety=np.array([s.safety_flag for s in samples], dtype=bool),
            metadata=metadata or {},
        )

    def __len__(self) -> int:
        return int(self.trace_ids.shape[0])

    def __eq__(self, other) -> bool:
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            self.monitor_count == other.monitor_count
            and np.array_equal(self.trace_ids, other.trace_ids)
            and np.array_equal(self.steps, other.steps)
            and np.array_equal(self.monitors, other.monitors)
            and np.array_equal(self.flags, other.flags)
            and np.array_equal(self.safety, other.safety)
            and dict(self.metadata) == dict(other.metadata)
        )

    @property
    def monitor_count(self) -> int:
        return int(self.monitors.shape[1]) if self.monitors.ndim == 2 else 0

    @property
    def samples(self) -> list[MonitorSample]:
        return [
            MonitorSample(
                trace_id=int(self.trace_ids[i]),
                step=int(self.steps[i]),
                monitor_values=tuple(float(x) for x in self.monitors[i]),
                assumption_flags=tuple(bool(x) for x in self.flags[i]),
                safety_flag=bool(self.safety[i]),
            )
            for i in range(len(self))
        ]

    def unique_traces(self) -> np.ndarray:
        """Trace ids in order of first appearance."""
        _, first = np.unique(self.trace_ids, return_index=True)
        return self.trace_ids[np.sort(first)]

    def subset(self, mask) -> "Dataset":
        mask = np.asarray(mask)
        return Dataset(self.trace_ids[mask], self.steps[mask], self.monitors[mask],
                       self.flags[mask], self.safety[mask], self.metadata)

    def with_monitors(self, monitors) -> "Dataset":
        return Dataset(self.trace_ids, self.steps, monitors, self.flags, self.safety, self.metadata)


def _check_trace_safety(trace_ids: np.ndarray, safety: np.ndarray) -> None:
    if not trace_ids.size:
        return
    order = np.argsort(trace_ids, kind="stable")
    t, s = trace_ids[order], safety[order]
    same = t[1:] == t[:-1]
    clash = same & (s[1:] != s[:-1])
    if clash.any():
        bad = int(t[1:][clash][0])
        raise SchemaError(f"safety flag varies within trace {bad}", column="phi")


def _columns(k: int) -> list[str]:
    return ["trace_id", "step", *[f"m_{i + 1}" for i in range(k)], *[f"a_{i + 1}" for i in range(k)], "phi"]


def _parse_header(header: Sequence[str]) -> int:
    names = [h.strip() for h in header]
    if len(names) < 3 or (len(names) - 3) % 2:
        raise SchemaError("header must be trace_id,step,m_1..m_k,a_1..a_k,phi", row=0)
    k = (len(names) - 3) // 2
    expected = _columns(k)
    for col, (got, want) in enumerate(zip(names, expected)):
        if got != want:
            raise SchemaError(f"expected {want!r}, found {got!r}", row=0, column=want)
    return k


def _parse_int(text, row, column) -> int:
    try:
        value = float(text) if isinstance(text, str) else text
        if isinstance(value, bool) or value != int(value):
            raise ValueError
        return int(value)
    except (TypeError, ValueError, OverflowError):
        raise SchemaError(f"not an integer: {text!r}", row=row, column=column) from None


def _parse_flag(text, row, column) -> bool:
    if isinstance(text, bool):
        return text
    if isinstance(text, (int, float)) and text in (0, 1):
        return bool(text)
    if isinstance(text, str) and text.strip() in ("0", "1"):
        return text.strip() == "1"
    raise SchemaError(f"flag must be 0 or 1, found {text!r}", row=row, column=column)


def _parse_conf(text, row, column) -> float:
    try:
        value = float(text)
    except (TypeError, ValueError):
        raise SchemaError(f"not a number: {text!r}", row=row, column=column) from None
    if isinstance(text, bool) or math.isnan(value):
        raise SchemaError(f"not a number: {text!r}", row=row, column=column)
    return check_confidence(value, row=row, column=column)


def _rows_to_dataset(records, k: int, metadata) -> Dataset:
    n = len(records)
    trace_ids = np.empty(n, dtype=np.int64)
    steps = np.empty(n, dtype=np.int64)
    monitors = np.empty((n, k), dtype=float)
    flags = np.empty((n, k), dtype=bool)
    safety = np.empty(n, dtype=bool)
    for r, rec in enumerate(records):
        row = r + 1  # header is row 0
        trace_ids[r] = _parse_int(rec["trace_id"], row, "trace_id")
        steps[r] = _parse_int(rec["step"], row, "step")
        if steps[r] < 0:
            raise SchemaError("step must be non-negative", row=row, column="step")
        for i in range(k):
            monitors[r, i] = _parse_conf(rec[f"m_{i + 1}"], row, f"m_{i + 1}")
            flags[r, i] = _parse_flag(rec[f"a_{i + 1}"], row, f"a_{i + 1}")
        safety[r] = _parse_flag(rec["phi"], row, "phi")
    return Dataset(trace_ids, steps, monitors, flags, safety, metadata)


def load_dataset(path, format: str | None = None) -> Dataset:
    """Read a dataset in the CSV or JSON interchange schema.

    Row order is preserved. Malformed cells raise SchemaError naming the row
    (1-based, header is row 0) and column; out-of-range confidences raise
    RangeError.
    """
    path = Path(path)
    fmt = (format or path.suffix.lstrip(".")).lower()
    if fmt == "csv":
        with path.open(newline="") as fh:
            reader = csv.reader(fh)
            try:
                header = next(reader)
            except StopIteration:
                raise SchemaError("missing header", row=0) from None
            k = _parse_header(header)
            names = _columns(k)
            records = []
            for r, line in enumerate(reader, start=1):
                if not line:
                    continue
                if len(line) != len(names):
                    raise SchemaError(f"expected {len(names)} fields, found {len(line)}", row=r)
                records.append(dict(zip(names, line)))
        return _rows_to_dataset(records, k, {})
    if fmt == "json":
        try:
            payload = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise SchemaError(f"invalid JSON: {exc.msg}", row=exc.lineno) from None
        metadata = {}
        if isinstance(payload, dict):
            metadata = {str(a): str(b) for a, b in payload.get("metadata", {}).items()}
            k = payload.get("monitor_count")
            payload = payload.get("samples", [])
        else:
            k = None
        if not isinstance(payload, list):
            raise SchemaError("expected an array of sample objects")
        if k is None:
            if not payload:
                k = 0
            else:
                k = sum(1 for key in payload[0] if key.startswith("m_"))
        names = _columns(int(k))
        for r, rec in enumerate(payload, start=1):
            if not isinstance(rec, dict):
                raise SchemaError("sample must be an object", row=r)
            for name in names:
                if name not in rec:
                    raise SchemaError("missing field", row=r, column=name)
        return _rows_to_dataset(payload, int(k), metadata)
    raise SchemaError(f"unsupported format {fmt!r}")


def save_dataset(d: Dataset, path, format: str | None = None) -> Path:
    path = Path(path)
    fmt = (format or path.suffix.lstrip(".")).lower()
    k = d.monitor_count
    names = _columns(k)
    path.parent.mkdir(parents=True, exist_ok=True)
    if fmt == "csv":
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(names)
            for i in range(len(d)):
                writer.writerow([
                    int(d.trace_ids[i]), int(d.steps[i]),
                    *[repr(float(x)) for x in d.monitors[i]],
                    *[int(x) for x in d.flags[i]],
                    int(d.safety[i]),
                ])
    elif fmt == "json":
        rows = []
        for s in d.samples:
            rec = {"trace_id": s.trace_id, "step": s.step}
            rec.update({f"m_{i + 1}": v for i, v in enumerate(s.monitor_values)})
            rec.update({f"a_{i + 1}": int(v) for i, v in enumerate(s.assumption_flags)})
            rec["phi"] = int(s.safety_flag)
            rows.append(rec)
        payload = {"monitor_count": k, "metadata": dict(d.metadata), "samples": rows}
        path.write_text(json.dumps(payload, indent=1) + "\n")
    else:
        raise SchemaError(f"unsupported format {fmt!r}")
    return path


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def split_by_trace(d: Dataset, fraction: float, seed: RngSeed) -> tuple[Dataset, Dataset]:
    """Randomly partition whole traces; the first part gets round(fraction * traces)."""
    if not (0.0 < fraction < 1.0):
        raise SplitError(f"fraction must lie in (0, 1), got {fraction}")
    traces = d.unique_traces()
    if traces.size < 2:
        raise SplitError(f"need at least 2 traces to split, found {traces.size}")
    n_first = round_half_up(fraction * traces.size)
    perm = seed.generator().permutation(traces.size)
    first = traces[perm[:n_first]]
    mask = np.isin(d.trace_ids, first)
    return d.subset(mask), d.subset(~mask)


def monitor_stats(d: Dataset, monitor_index: int) -> tuple[float, float]:
    """Sample mean and unbiased variance of one monitor's outputs."""
    if not (0 <= monitor_index < d.monitor_count):
        raise StatisticsError(f"monitor index {monitor_index} out of range")
    values = d.monitors[:, monitor_index]
    if values.size == 0:
        raise StatisticsError("empty dataset")
    mean = float(values.mean())
    var = float(values.var(ddof=1)) if values.size > 1 else 0.0
    return mean, var
