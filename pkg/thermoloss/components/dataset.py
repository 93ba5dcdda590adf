"""
Power/temperature time series: loading, preprocessing and regression stacking.

A dataset holds n power channels (watts) and m temperature channels (kelvin,
relative to ambient once baselined) sampled every ``dt`` seconds, plus the
calibration-step segments. Arrays are channel-major: ``X`` is n x K and
``U`` is m x K. Every operation returns a new dataset.
"""
from __future__ import annotations

import logging
import math
import os
from dataclasses import dataclass, replace
from typing import Optional, Tuple

import numpy as np
import pandas as pd

from thermoloss.utils.errors import (
    DataError,
    InsufficientDataError,
    ParseError,
    SchemaError,
    SplitError,
)

logger = logging.getLogger(__name__)

TIME_COLUMN = "t"
POWER_PREFIX = "P_"
TEMP_PREFIX = "T_"
SEGMENT_COLUMNS = ("label", "start_index", "end_index")


@dataclass(frozen=True)
class Segment:
    """Calibration step covering samples ``start`` (inclusive) to ``end`` (exclusive)."""

    start: int
    end: int
    label: str

    def __len__(self):
        return self.end - self.start


@dataclass(frozen=True)
class CsvSchema:
    """
    Column roles of a dataset CSV.

    With no explicit channel lists, power and temperature columns are picked
    by their ``P_`` / ``T_`` prefixes.
    """

    time_column: str = TIME_COLUMN
    power_columns: Optional[Tuple[str, ...]] = None
    temp_columns: Optional[Tuple[str, ...]] = None

    def resolve(self, columns):
        """Return (power columns, temperature columns) for a CSV header."""
        columns = [c.strip() for c in columns]
        if self.time_column not in columns:
            raise SchemaError(f"missing time column '{self.time_column}'", column=self.time_column)

        power = list(self.power_columns) if self.power_columns is not None else \
            [c for c in columns if c.startswith(POWER_PREFIX)]
        temps = list(self.temp_columns) if self.temp_columns is not None else \
            [c for c in columns if c.startswith(TEMP_PREFIX)]

        for name in power + temps:
            if name not in columns:
                raise SchemaError(f"missing column '{name}'", column=name)
        if not power:
            raise SchemaError("schema names no power column")
        if not temps:
            raise SchemaError("schema names no temperature column")
        return power, temps


@dataclass(frozen=True)
class TimeSeriesDataset:
    """Aligned power and temperature matrices with their sampling metadata."""

    power_channels: Tuple[str, ...]
    temp_channels: Tuple[str, ...]
    X: np.ndarray
    U: np.ndarray
    dt: float
    segments: Tuple[Segment, ...] = ()
    ambient: float = 0.0

    def __post_init__(self):
        X = np.array(self.X, dtype=float, ndmin=2)
        U = np.array(self.U, dtype=float, ndmin=2)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "U", U)
        object.__setattr__(self, "power_channels", tuple(self.power_channels))
        object.__setattr__(self, "temp_channels", tuple(self.temp_channels))
        object.__setattr__(self, "segments", tuple(self.segments))

        if X.ndim != 2 or U.ndim != 2:
            raise ValueError("X and U must be 2-D channel-major matrices")
        if X.shape[0] != len(self.power_channels):
            raise ValueError(f"X has {X.shape[0]} rows for {len(self.power_channels)} power channels")
        if U.shape[0] != len(self.temp_channels):
            raise ValueError(f"U has {U.shape[0]} rows for {len(self.temp_channels)} temperature channels")
        if X.shape[1] != U.shape[1]:
            raise ValueError(f"X has {X.shape[1]} samples but U has {U.shape[1]}")
        if X.shape[1] < 2:
            raise InsufficientDataError(f"a dataset needs at least 2 samples, got {X.shape[1]}")
        if not (self.dt > 0 and math.isfinite(self.dt)):
            raise ValueError(f"dt must be positive and finite, got {self.dt}")
        if not np.all(np.isfinite(U)):
            raise ValueError("temperature values must be finite")
        if not math.isfinite(self.ambient):
            raise ValueError(f"ambient must be finite, got {self.ambient}")

        previous_end = 0
        for seg in self.segments:
            if not (0 <= seg.start < seg.end <= X.shape[1]):
                raise ValueError(f"segment '{seg.label}' [{seg.start}, {seg.end}) is outside [0, {X.shape[1]})")
            if seg.start < previous_end:
                raise ValueError(f"segment '{seg.label}' overlaps or precedes the previous segment")
            previous_end = seg.end

    @property
    def n(self):
        return self.X.shape[0]

    @property
    def m(self):
        return self.U.shape[0]

    @property
    def K(self):
        return self.X.shape[1]

    @property
    def time(self):
        return np.arange(self.K) * self.dt

    @property
    def labels(self):
        return tuple(seg.label for seg in self.segments)

    def effective_segments(self):
        """Segments, or a single segment spanning the whole series when none are set."""
        return self.segments or (Segment(0, self.K, "all"),)


@dataclass(frozen=True)
class RegressionMatrices:
    """
    Stacked snapshot pairs for least squares.

    Column j of ``Z`` is [u(k); x(k)] and column j of ``Uout`` is u(k+1),
    with k = ``source_index[j]`` in the originating dataset.
    """

    Z: np.ndarray
    Uout: np.ndarray
    source_index: np.ndarray
    temp_channels: Tuple[str, ...]
    power_channels: Tuple[str, ...]
    dt: float = 1.0

    @property
    def m(self):
        return self.Uout.shape[0]

    @property
    def n(self):
        return self.Z.shape[0] - self.Uout.shape[0]

    @property
    def columns(self):
        return self.Z.shape[1]


def load_segments(path):
    """
    Load a segment file with columns ``label,start_index,end_index``.

    Args:
        path (str): CSV path

    Returns:
        tuple[Segment, ...]: Segments in file order
    """
    frame = pd.read_csv(path, dtype={"label": str})
    frame.columns = [c.strip() for c in frame.columns]
    for column in SEGMENT_COLUMNS:
        if column not in frame.columns:
            raise SchemaError(f"segment file {path} is missing column '{column}'", column=column)
    segments = []
    for row, record in enumerate(frame.itertuples(index=False)):
        try:
            start, end = int(record.start_index), int(record.end_index)
        except (TypeError, ValueError):
            raise ParseError(f"segment file {path}: bad index at row {row}", row=row) from None
        segments.append(Segment(start, end, str(record.label)))
    return tuple(segments)


def load_csv(path, schema=None, segments_path=None):
    """
    Load a power/temperature CSV into a dataset.

    Args:
        path (str): CSV file with a header row
        schema (CsvSchema, optional): Column roles; prefixes are used by default
        segments_path (str, optional): Segment CSV to attach

    Returns:
        TimeSeriesDataset: Dataset with dt inferred from the time column

    Raises:
        SchemaError: A required column is missing
        ParseError: A cell is not numeric (row index reported)
        DataError: The file does not exist
        InsufficientDataError: Fewer than 2 usable rows
    """
    schema = schema or CsvSchema()
    if not os.path.isfile(path):
        logger.error(f"Dataset file not found: {path}")
        raise DataError(f"dataset file not found: {path}")

    frame = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    frame.columns = [c.strip() for c in frame.columns]
    power_cols, temp_cols = schema.resolve(frame.columns)
    logger.info(f"Loading {path}: {len(power_cols)} power and {len(temp_cols)} temperature channels")

    numeric = {column: _parse_column(frame[column], column)
               for column in [schema.time_column] + power_cols + temp_cols}

    if len(frame) < 2:
        raise InsufficientDataError(f"{path} has {len(frame)} data rows, need at least 2")

    t = numeric[schema.time_column]
    # keep rows whose time strictly exceeds every earlier time
    running_max = np.maximum.accumulate(np.concatenate(([-np.inf], t[:-1])))
    keep = t > running_max
    if not np.all(keep):
        logger.warning(f"Rejected {int(np.sum(~keep))} rows with non-monotonic time in {path}")
    t = t[keep]
    if t.size < 2:
        raise InsufficientDataError(f"{path} has fewer than 2 rows with increasing time")

    dt = infer_dt(t)
    X = np.vstack([numeric[c][keep] for c in power_cols])
    U = np.vstack([numeric[c][keep] for c in temp_cols])
    segments = load_segments(segments_path) if segments_path else ()

    dataset = TimeSeriesDataset(tuple(power_cols), tuple(temp_cols), X, U, dt, segments)
    logger.info(f"Loaded dataset with K={dataset.K} samples, dt={dt:g} s, {len(segments)} segments")
    return dataset


def _parse_column(cells, column):
    # float() is correctly rounded, so 17-digit text reads back bit for bit
    values = np.empty(len(cells))
    for row, text in enumerate(cells):
        try:
            values[row] = float(text)
        except ValueError:
            values[row] = np.nan
        if not math.isfinite(values[row]):
            raise ParseError(f"non-numeric value {text!r} in column '{column}' at row {row}",
                             row=row, column=column)
    return values


def infer_dt(t):
    """
    Median of successive time differences.

    Logs a warning when any difference deviates from the median by more than 1%.
    """
    diffs = np.diff(np.asarray(t, dtype=float))
    dt = float(np.median(diffs))
    if dt <= 0:
        raise InsufficientDataError("time column does not increase")
    if np.any(np.abs(diffs - dt) > 0.01 * dt):
        logger.warning(f"Irregular sampling: time steps range from {diffs.min():g} to {diffs.max():g} s "
                       f"around a median of {dt:g} s")
    return dt


def _with_prefix(name, prefix):
    return name if name.startswith(prefix) else prefix + name


def save_dataset(series, path, segments_path=None):
    """
    Write a dataset in the CSV layout read by ``load_csv``.

    Values are written with 17 significant digits so a reload reproduces the
    matrices bit for bit.

    Args:
        series (TimeSeriesDataset): Dataset to write
        path (str): Destination CSV
        segments_path (str, optional): Destination of the segment CSV
    """
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)

    columns = {TIME_COLUMN: series.time}
    for name, row in zip(series.power_channels, series.X):
        columns[_with_prefix(name, POWER_PREFIX)] = row
    for name, row in zip(series.temp_channels, series.U):
        columns[_with_prefix(name, TEMP_PREFIX)] = row
    pd.DataFrame(columns).to_csv(path, index=False, float_format="%.17g", encoding="utf-8")
    logger.info(f"Wrote dataset ({series.K} samples) to {path}")

    if segments_path:
        frame = pd.DataFrame(
            [(seg.label, seg.start, seg.end) for seg in series.segments],
            columns=list(SEGMENT_COLUMNS),
        )
        frame.to_csv(segments_path, index=False)
        logger.info(f"Wrote {len(series.segments)} segments to {segments_path}")


def resample_hold(series, factor):
    """
    Oversample every channel by zero-order hold.

    Args:
        series (TimeSeriesDataset): Input dataset
        factor (int): Number of copies of each sample

    Returns:
        TimeSeriesDataset: Dataset with K*factor samples and dt/factor
    """
    factor = _check_factor(factor)
    if factor == 1:
        return series
    segments = tuple(Segment(s.start * factor, s.end * factor, s.label) for s in series.segments)
    logger.debug(f"Oversampling by {factor} (dt {series.dt:g} -> {series.dt / factor:g} s)")
    return replace(
        series,
        X=np.repeat(series.X, factor, axis=1),
        U=np.repeat(series.U, factor, axis=1),
        dt=series.dt / factor,
        segments=segments,
    )


def downsample(series, factor):
    """Keep every ``factor``-th sample; the inverse of ``resample_hold``."""
    factor = _check_factor(factor)
    if factor == 1:
        return series
    segments = tuple(
        Segment(-(-s.start // factor), -(-s.end // factor), s.label) for s in series.segments
    )
    return replace(
        series,
        X=series.X[:, ::factor],
        U=series.U[:, ::factor],
        dt=series.dt * factor,
        segments=tuple(s for s in segments if s.end > s.start),
    )


def _check_factor(factor):
    if isinstance(factor, bool) or int(factor) != factor or factor < 1:
        raise ValueError(f"factor must be a positive integer, got {factor!r}")
    return int(factor)


def window_samples(window_seconds, dt):
    """
    Number of samples in a window of ``window_seconds``.

    Raises:
        ValueError: If the window is shorter than one sample
    """
    if not window_seconds >= dt * (1 - 1e-9):
        raise ValueError(f"window of {window_seconds} s is shorter than one sample ({dt} s)")
    return max(1, int(round(window_seconds / dt)))


def trailing_mean(values, window):
    """
    Causal moving average along time (axis 1) of a channel-major matrix.

    The first ``window - 1`` samples average over the available prefix.
    """
    frame = pd.DataFrame(np.asarray(values, dtype=float).T)
    return frame.rolling(window, min_periods=1).mean().to_numpy().T


def moving_average(series, window_seconds):
    """
    Apply a trailing moving average of ``window_seconds`` to every channel.

    The filter delays the signals by about (w - 1)/2 samples; see
    ``filter_delay_steps``.
    """
    window = window_samples(window_seconds, series.dt)
    if window == 1:
        return series
    logger.debug(f"Trailing moving average over {window} samples ({window_seconds:g} s)")
    return replace(series, X=trailing_mean(series.X, window), U=trailing_mean(series.U, window))


def filter_delay_steps(window_seconds, dt):
    """Group delay of the trailing average, rounded to whole samples."""
    window = window_samples(window_seconds, dt)
    return int(round((window - 1) / 2))


def baseline_ambient(series, ambient):
    """
    Express temperatures relative to ``ambient``.

    Power channels are untouched; the accumulated offset is kept in
    ``series.ambient`` so that applying ``a`` then ``-a`` restores the input.
    """
    ambient = float(ambient)
    if not math.isfinite(ambient):
        raise ValueError(f"ambient must be finite, got {ambient}")
    if ambient == 0.0:
        return series
    return replace(series, U=series.U - ambient, ambient=series.ambient + ambient)


def segment(series, label):
    """Extract the calibration step called ``label`` as its own dataset."""
    for seg in series.effective_segments():
        if seg.label == label:
            return _slice(series, [seg])
    raise KeyError(f"no segment labelled '{label}'")


def _slice(series, pieces):
    """Concatenate the given (start, end, label) pieces into a new dataset."""
    columns = np.concatenate([np.arange(p.start, p.end) for p in pieces])
    segments, offset = [], 0
    for p in pieces:
        segments.append(Segment(offset, offset + len(p), p.label))
        offset += len(p)
    return replace(series, X=series.X[:, columns], U=series.U[:, columns], segments=tuple(segments))


def split_per_segment(series, train_fraction):
    """
    Split every segment into a leading train part and a trailing test part.

    Args:
        series (TimeSeriesDataset): Dataset to split
        train_fraction (float): Share of each segment used for training, in (0, 1)

    Returns:
        tuple[TimeSeriesDataset, TimeSeriesDataset]: (train, test), both carrying
        every segment label

    Raises:
        SplitError: A segment cannot give at least 2 samples to each side
    """
    if not 0.0 < train_fraction < 1.0:
        raise ValueError(f"train_fraction must lie in (0, 1), got {train_fraction}")

    train_pieces, test_pieces = [], []
    for seg in series.effective_segments():
        length = len(seg)
        n_train = int(math.floor(train_fraction * length))
        if length * (1.0 - train_fraction) < 2.0 - 1e-9 or n_train < 2:
            raise SplitError(
                f"segment '{seg.label}' has {length} samples, too short for a "
                f"{train_fraction:g} train fraction",
                segment=seg.label,
            )
        train_pieces.append(Segment(seg.start, seg.start + n_train, seg.label))
        test_pieces.append(Segment(seg.start + n_train, seg.end, seg.label))

    train, test = _slice(series, train_pieces), _slice(series, test_pieces)
    logger.info(f"Split {len(train_pieces)} segments: {train.K} train / {test.K} test samples")
    return train, test


def build_regression(series):
    """
    Stack the dataset into regression matrices.

    Transitions that straddle a segment boundary are left out, and so are
    samples outside every segment.

    Returns:
        RegressionMatrices: Z of shape (m+n) x J and Uout of shape m x J
    """
    if series.K < 2:
        raise InsufficientDataError(f"need at least 2 samples, got {series.K}")

    index = np.concatenate([np.arange(s.start, s.end - 1) for s in series.effective_segments()])
    if index.size == 0:
        raise InsufficientDataError("no segment holds a full transition")

    Z = np.vstack([series.U[:, index], series.X[:, index]])
    Uout = series.U[:, index + 1]
    logger.debug(f"Regression matrices: Z {Z.shape}, Uout {Uout.shape}")
    return RegressionMatrices(Z, Uout, index, series.temp_channels, series.power_channels, series.dt)

