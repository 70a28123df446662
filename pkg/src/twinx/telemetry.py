"""Multichannel vehicle telemetry: schema, CSV ingestion, cleaning, scaling, windowing.

The canonical schema is the 15-channel layout used throughout the pipeline
(engine / transmission / fuel / brake subsystem groups sampled at 1 Hz).
All frame-producing operations return immutable frames whose arrays are
marked read-only, so they are safe to share across threads.
"""

from __future__ import annotations

import csv
import enum
import io
from dataclasses import dataclass

import numpy as np

from ._fsio import atomic_write_text
from .errors import (
    AllRowsDropped,
    EmptyFile,
    MissingColumn,
    NonMonotoneTime,
    SchemaMismatch,
)

LABEL_COLUMN = "anomaly"


class Fwg(enum.Enum):
    """Functional working group a sensor channel belongs to."""

    ENGINE = "Engine"
    TRANSMISSION = "Transmission"
    FUEL = "Fuel"
    BRAKE = "Brake"


@dataclass(frozen=True)
class Channel:
    name: str
    unit: str
    fwg: Fwg


@dataclass(frozen=True)
class ChannelSchema:
    """Ordered channel layout plus the name of the time column."""

    channels: tuple[Channel, ...]
    time_column: str = "UTC_1HZ"

    def __post_init__(self):
        names = [c.name for c in self.channels]
        if any(not n for n in names):
            raise ValueError("channel names must be non-empty")
        if len(set(names)) != len(names):
            raise ValueError("channel names must be unique")

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(c.name for c in self.channels)

    @property
    def num_channels(self) -> int:
        return len(self.channels)

    def index_of(self, name: str) -> int:
        for i, c in enumerate(self.channels):
            if c.name == name:
                return i
        raise KeyError(name)


def default_schema() -> ChannelSchema:
    """The canonical 15-channel layout (engine, transmission, fuel, brake)."""
    e, t, f, b = Fwg.ENGINE, Fwg.TRANSMISSION, Fwg.FUEL, Fwg.BRAKE
    return ChannelSchema(
        channels=(
            Channel("EngCoolantTemp", "degF", e),
            Channel("PctEngLoad", "pct", e),
            Channel("EngPctTorq", "pct", e),
            Channel("BoostPres", "psi", e),
            Channel("AccelPedalPos", "pct", e),
            Channel("IntManfTemp", "degF", e),
            Channel("VehSpeedEng", "mph", t),
            Channel("TransOilTemp", "degF", t),
            Channel("TrSelGr", "gear", t),
            Channel("TransTorqConvLockupEngaged", "flag", t),
            Channel("TrOutShaftSp", "rpm", t),
            Channel("FuelRate", "gph", f),
            Channel("InstFuelEco", "mpg", f),
            Channel("InjCtlPres", "psi", f),
            Channel("BrakeSwitch", "flag", b),
        ),
        time_column="UTC_1HZ",
    )


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class TelemetryFrame:
    """Timestamped sensor table: T timestamps and a T x d value matrix.

    ``labels`` is an optional per-row anomaly flag carried by synthetic data.
    ``dropped_rows`` counts rows excluded during ingestion/cleaning.
    """

    schema: ChannelSchema
    timestamps: np.ndarray
    values: np.ndarray
    labels: np.ndarray | None = None
    dropped_rows: int = 0

    def __post_init__(self):
        ts = np.asarray(self.timestamps, dtype=np.float64)
        vals = np.asarray(self.values, dtype=np.float64)
        if vals.ndim != 2:
            raise ValueError("values must be a 2-D matrix")
        if vals.shape[0] != ts.shape[0]:
            raise ValueError("timestamps and values row counts differ")
        if vals.shape[1] != self.schema.num_channels:
            raise SchemaMismatch(
                f"values have {vals.shape[1]} columns, schema has "
                f"{self.schema.num_channels} channels"
            )
        object.__setattr__(self, "timestamps", _freeze(ts))
        object.__setattr__(self, "values", _freeze(vals))
        if self.labels is not None:
            lab = np.asarray(self.labels, dtype=np.int64)
            if lab.shape != ts.shape:
                raise ValueError("labels length must match timestamps")
            object.__setattr__(self, "labels", _freeze(lab))

    @property
    def num_rows(self) -> int:
        return self.values.shape[0]

    @property
    def num_channels(self) -> int:
        return self.values.shape[1]

    def column(self, name: str) -> np.ndarray:
        return self.values[:, self.schema.index_of(name)]

    def validate(self) -> "TelemetryFrame":
        """Check the post-cleaning invariants; returns self for chaining."""
        if self.num_rows and not np.all(np.diff(self.timestamps) > 0):
            raise NonMonotoneTime("timestamps are not strictly increasing")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("values contain non-finite entries")
        return self


def load_csv(path, schema: ChannelSchema) -> TelemetryFrame:
    """Read a telemetry CSV into a frame.

    Rows with missing or unparseable cells are dropped and counted.
    Duplicate timestamps collapse to the first occurrence; rows come back
    sorted by timestamp. Raises NonMonotoneTime when more than half of the
    parsed rows are out of order, which signals the wrong file entirely.
    A trailing ``anomaly`` column, when present, is read as per-row labels.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise EmptyFile(f"{path} has no header row") from None
        header = [h.strip() for h in header]
        col_index: dict[str, int] = {}
        for name in (schema.time_column, *schema.names):
            if name not in header:
                raise MissingColumn(name)
            col_index[name] = header.index(name)
        label_idx = header.index(LABEL_COLUMN) if LABEL_COLUMN in header else None

        wanted = [col_index[schema.time_column]] + [col_index[n] for n in schema.names]
        rows: list[list[float]] = []
        labels: list[int] = []
        dropped = 0
        for raw in reader:
            try:
                parsed = [float(raw[i]) for i in wanted]
                lab = int(float(raw[label_idx])) if label_idx is not None else 0
            except (ValueError, IndexError):
                dropped += 1
                continue
            rows.append(parsed)
            labels.append(lab)

    if not rows:
        raise EmptyFile(f"{path} contains no parseable data rows")

    data = np.asarray(rows, dtype=np.float64)
    ts = data[:, 0]
    out_of_order = int(np.sum(np.diff(ts) < 0))
    if len(rows) > 1 and out_of_order / (len(rows) - 1) > 0.5:
        raise NonMonotoneTime(
            f"{out_of_order} of {len(rows) - 1} steps decrease; wrong file?"
        )

    order = np.argsort(ts, kind="stable")
    data = data[order]
    lab_arr = np.asarray(labels, dtype=np.int64)[order]
    # Collapse duplicate timestamps to their first (file-order) occurrence.
    keep = np.ones(len(data), dtype=bool)
    keep[1:] = np.diff(data[:, 0]) > 0
    dropped += int(np.sum(~keep))
    data = data[keep]
    lab_arr = lab_arr[keep]

    return TelemetryFrame(
        schema=schema,
        timestamps=data[:, 0],
        values=data[:, 1:],
        labels=lab_arr if label_idx is not None else None,
        dropped_rows=dropped,
    )


def write_csv(frame: TelemetryFrame, path, include_labels: bool = False) -> None:
    """Write a frame as UTF-8 CSV with a header row.

    Numbers use the shortest round-trip representation (integers without a
    decimal point) so repeated writes of the same frame are byte-identical.
    """
    if include_labels and frame.labels is None:
        raise ValueError("frame carries no labels")
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    header = [frame.schema.time_column, *frame.schema.names]
    if include_labels:
        header.append(LABEL_COLUMN)
    writer.writerow(header)
    for i in range(frame.num_rows):
        row = [_fmt_number(frame.timestamps[i])]
        row.extend(_fmt_number(v) for v in frame.values[i])
        if include_labels:
            row.append(str(int(frame.labels[i])))
        writer.writerow(row)
    atomic_write_text(path, buf.getvalue())


def _fmt_number(v: float) -> str:
    f = float(v)
    if f == int(f) and abs(f) < 1e15:
        return str(int(f))
    return repr(f)


def clean(frame: TelemetryFrame) -> TelemetryFrame:
    """Drop rows with non-finite values and consecutive duplicate timestamps.

    Idempotent; raises AllRowsDropped when nothing survives.
    """
    finite = np.isfinite(frame.values).all(axis=1) & np.isfinite(frame.timestamps)
    ts = frame.timestamps[finite]
    vals = frame.values[finite]
    labs = frame.labels[finite] if frame.labels is not None else None

    keep = np.ones(len(ts), dtype=bool)
    keep[1:] = np.diff(ts) != 0
    ts, vals = ts[keep], vals[keep]
    if labs is not None:
        labs = labs[keep]

    if len(ts) == 0:
        raise AllRowsDropped("cleaning removed every row")
    dropped = frame.dropped_rows + (frame.num_rows - len(ts))
    out = TelemetryFrame(frame.schema, ts, vals, labs, dropped)
    return out.validate()


@dataclass(frozen=True)
class ScalerParams:
    """Per-channel min/max fitted on training rows.

    Channels with max == min are flagged constant and map to 0.5.
    """

    channel_names: tuple[str, ...]
    mins: np.ndarray
    maxs: np.ndarray

    def __post_init__(self):
        mins = np.asarray(self.mins, dtype=np.float64)
        maxs = np.asarray(self.maxs, dtype=np.float64)
        if mins.shape != maxs.shape or mins.shape != (len(self.channel_names),):
            raise ValueError("min/max shape must match channel count")
        if np.any(maxs < mins):
            raise ValueError("max < min for some channel")
        object.__setattr__(self, "mins", _freeze(mins))
        object.__setattr__(self, "maxs", _freeze(maxs))

    @property
    def constant_mask(self) -> np.ndarray:
        return self.maxs == self.mins

    @property
    def spans(self) -> np.ndarray:
        return np.where(self.constant_mask, 1.0, self.maxs - self.mins)


def fit_scaler(frame: TelemetryFrame) -> ScalerParams:
    """Fit per-channel min/max over the frame's rows (requires T >= 2)."""
    if frame.num_rows < 2:
        raise ValueError("need at least 2 rows to fit a scaler")
    return ScalerParams(
        channel_names=frame.schema.names,
        mins=frame.values.min(axis=0),
        maxs=frame.values.max(axis=0),
    )


def _check_scaler(frame: TelemetryFrame, params: ScalerParams) -> None:
    if frame.schema.names != params.channel_names:
        raise SchemaMismatch("frame channels do not match scaler channels")


def apply_scaler(frame: TelemetryFrame, params: ScalerParams) -> TelemetryFrame:
    """Map each channel through (x - min) / (max - min).

    Values outside the fitted range are allowed (no clipping); constant
    channels map to 0.5 by convention.
    """
    _check_scaler(frame, params)
    scaled = (frame.values - params.mins) / params.spans
    scaled[:, params.constant_mask] = 0.5
    return TelemetryFrame(frame.schema, frame.timestamps, scaled, frame.labels,
                          frame.dropped_rows)


def invert_scaler(frame: TelemetryFrame, params: ScalerParams) -> TelemetryFrame:
    """Inverse of apply_scaler; constant channels recover their fitted value."""
    _check_scaler(frame, params)
    raw = frame.values * params.spans + params.mins
    raw[:, params.constant_mask] = params.mins[params.constant_mask]
    return TelemetryFrame(frame.schema, frame.timestamps, raw, frame.labels,
                          frame.dropped_rows)


def unscale_row(row: np.ndarray, params: ScalerParams) -> np.ndarray:
    """Inverse-scale a single d-vector of channel values."""
    raw = np.asarray(row, dtype=np.float64) * params.spans + params.mins
    raw[params.constant_mask] = params.mins[params.constant_mask]
    return raw


@dataclass(frozen=True)
class WindowedDataset:
    """Sliding-window inputs paired with their next-step targets.

    inputs[i] covers frame rows origin_indices[i] .. origin_indices[i]+w-1
    and targets[i] is row origin_indices[i]+w.
    """

    window_length: int
    stride: int
    inputs: np.ndarray
    targets: np.ndarray
    origin_indices: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "inputs", _freeze(np.asarray(self.inputs, dtype=np.float64)))
        object.__setattr__(self, "targets", _freeze(np.asarray(self.targets, dtype=np.float64)))
        object.__setattr__(self, "origin_indices", _freeze(np.asarray(self.origin_indices, dtype=np.int64)))

    @property
    def num_windows(self) -> int:
        return self.inputs.shape[0]

    @property
    def num_channels(self) -> int:
        return self.inputs.shape[2]

    def take(self, indices: np.ndarray) -> "WindowedDataset":
        idx = np.asarray(indices, dtype=np.int64)
        return WindowedDataset(
            self.window_length, self.stride,
            self.inputs[idx], self.targets[idx], self.origin_indices[idx],
        )


def window_count(num_rows: int, window: int, stride: int) -> int:
    """Number of (window, next-step target) pairs a frame of T rows yields."""
    if num_rows < window + 1:
        return 0
    return (num_rows - window - 1) // stride + 1


def make_windows(frame: TelemetryFrame, window: int, stride: int = 1) -> WindowedDataset:
    """Slice a frame into overlapping windows with next-step targets."""
    if window < 1 or stride < 1:
        raise ValueError("window and stride must be >= 1")
    n = window_count(frame.num_rows, window, stride)
    d = frame.num_channels
    if n == 0:
        return WindowedDataset(
            window, stride,
            np.empty((0, window, d)), np.empty((0, d)), np.empty((0,), dtype=np.int64),
        )
    origins = np.arange(n, dtype=np.int64) * stride
    # (T-w+1, w, d) view; origins select the usable starting rows.
    view = np.lib.stride_tricks.sliding_window_view(frame.values, window, axis=0)
    inputs = view[origins].transpose(0, 2, 1).copy()
    targets = frame.values[origins + window].copy()
    return WindowedDataset(window, stride, inputs, targets, origins)


def split_chronological(ds: WindowedDataset, train_fraction: float = 0.8
                        ) -> tuple[WindowedDataset, WindowedDataset]:
    """Split windows by origin order; no shuffling, to avoid leakage."""
    if not 0.0 < train_fraction < 1.0:
        raise ValueError("train_fraction must lie in (0, 1)")
    cut = int(ds.num_windows * train_fraction)
    cut = max(1, min(ds.num_windows - 1, cut)) if ds.num_windows > 1 else 0
    idx = np.arange(ds.num_windows)
    return ds.take(idx[:cut]), ds.take(idx[cut:])
