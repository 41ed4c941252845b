"""CSV loading, chronological splits, z-score normalisation and sliding windows.

Split boundaries follow the usual long-horizon forecasting convention: the
validation and test segments may reach back ``L`` rows into the previous
split for window *histories*; targets never leave their own split.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterator

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigError, DataError

log = logging.getLogger(__name__)

SPLITS = ("train", "val", "test")


@dataclass(frozen=True)
class Ratio:
    train: float = 0.7
    val: float = 0.1
    test: float = 0.2

    def bounds(self, n_rows: int) -> tuple[int, int]:
        n_train = int(n_rows * self.train)
        n_test = int(n_rows * self.test)
        return n_train, n_rows - n_test


@dataclass(frozen=True)
class EttMonths:
    """Fixed 12/4/4-month split of the ETT benchmarks (30-day months)."""

    train: int = 12
    val: int = 4
    test: int = 4
    steps_per_day: int = 24  # 24 for ETTh*, 96 for ETTm*

    def bounds(self, n_rows: int) -> tuple[int, int]:
        month = 30 * self.steps_per_day
        train_end = self.train * month
        val_end = train_end + self.val * month
        if val_end + self.test * month > n_rows:
            raise DataError(f"EttMonths split needs {val_end + self.test * month} rows, have {n_rows}")
        return train_end, val_end

    def total(self) -> int:
        return (self.train + self.val + self.test) * 30 * self.steps_per_day


SplitScheme = Ratio | EttMonths


@dataclass(frozen=True)
class TimeSeriesDataset:
    values: np.ndarray  # [T_total, C]
    variable_names: tuple[str, ...]
    timestamps: tuple[str, ...] = ()
    split_bounds: tuple[int, int] | None = None
    end: int | None = None  # exclusive end of the test split
    stats: tuple[np.ndarray, np.ndarray] | None = None  # (mean[C], std[C]) from train rows

    @property
    def n_rows(self) -> int:
        return self.values.shape[0]

    @property
    def n_vars(self) -> int:
        return self.values.shape[1]

    def segment(self, split_id: str, lookback: int = 0) -> tuple[int, int]:
        """Row range ``[lo, hi)`` of a split, extended ``lookback`` rows backwards for val/test."""
        if self.split_bounds is None:
            raise DataError("dataset has no split boundaries; call split() first")
        train_end, val_end = self.split_bounds
        end = self.n_rows if self.end is None else self.end
        if split_id == "train":
            return 0, train_end
        if split_id == "val":
            return train_end - lookback, val_end
        if split_id == "test":
            return val_end - lookback, end
        raise DataError(f"unknown split {split_id!r}; expected one of {SPLITS}")


@dataclass(frozen=True)
class WindowPair:
    history: np.ndarray  # [L, C]
    target: np.ndarray  # [O, C]
    origin_index: int


def from_array(values: np.ndarray, names: list[str] | None = None) -> TimeSeriesDataset:
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 2:
        raise DataError(f"series must be [time, variables], got shape {values.shape}")
    names = names or [f"v{i}" for i in range(values.shape[1])]
    return TimeSeriesDataset(values, tuple(names))


def load_csv(path: str | Path, min_rows: int | None = None) -> TimeSeriesDataset:
    """Read ``timestamp,var1,...,varC`` with a header row.

    Raises :class:`DataError` on blank lines, ragged rows or non-numeric cells
    (row indices are 1-based file lines), and when fewer than ``min_rows``
    data rows are present.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"{path}: no such file")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        if len(header) < 2:
            raise DataError(f"{path}: need a timestamp column and at least one variable")
        names = [h.strip() for h in header[1:]]
        stamps, rows = [], []
        for row in reader:
            line = reader.line_num
            if not row or all(not cell.strip() for cell in row):
                raise DataError(f"{path}: blank line at row {line}")
            if len(row) != len(header):
                raise DataError(f"{path}: row {line} has {len(row)} cells, header has {len(header)}")
            parsed = []
            for col, cell in enumerate(row[1:], start=2):
                try:
                    parsed.append(float(cell))
                except ValueError:
                    raise DataError(f"{path}: unparseable value {cell!r} at row {line}, column {col}") from None
            stamps.append(row[0])
            rows.append(parsed)
    if len(names) < 2:
        log.warning("%s: single-variable series; cross-variable attention has one token", path)
    if min_rows is not None and len(rows) < min_rows:
        raise DataError(f"{path}: {len(rows)} rows, need at least {min_rows}")
    if not rows:
        raise DataError(f"{path}: no data rows")
    return TimeSeriesDataset(np.array(rows, dtype=np.float64), tuple(names), tuple(stamps))


def write_csv(ds: TimeSeriesDataset, path: str | Path) -> None:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["date", *ds.variable_names])
        stamps = ds.timestamps or tuple(str(i) for i in range(ds.n_rows))
        for stamp, row in zip(stamps, ds.values):
            w.writerow([stamp, *(repr(float(v)) for v in row)])


def split(ds: TimeSeriesDataset, scheme: SplitScheme, lookback: int = 96, horizon: int = 96) -> TimeSeriesDataset:
    """Attach split boundaries, checking every split can hold one window."""
    train_end, val_end = scheme.bounds(ds.n_rows)
    end = scheme.total() if isinstance(scheme, EttMonths) else ds.n_rows
    if not 0 < train_end < val_end < end:
        raise DataError(f"degenerate split bounds ({train_end}, {val_end}) for {ds.n_rows} rows")
    out = replace(ds, split_bounds=(train_end, val_end), end=end)
    for sid in SPLITS:
        lo, hi = out.segment(sid, lookback)
        if lo < 0 or hi - lo < lookback + horizon:
            raise DataError(f"{sid} split spans {hi - lo} rows, needs at least "
                            f"L+O = {lookback + horizon}")
    return out


def fit_zscore(ds: TimeSeriesDataset) -> tuple[np.ndarray, np.ndarray]:
    """Per-variable mean and population std over the train rows."""
    if ds.split_bounds is None:
        raise DataError("fit_zscore needs split boundaries")
    train = ds.values[: ds.split_bounds[0]]
    mean = train.mean(axis=0)
    std = train.std(axis=0)
    bad = [ds.variable_names[i] for i in np.flatnonzero(~(std > 0))]
    if bad:
        raise DataError(f"zero train-split standard deviation for variable(s) {', '.join(bad)}")
    return mean, std


def zscore(ds: TimeSeriesDataset) -> TimeSeriesDataset:
    """Normalise all rows with statistics fitted on the train rows only."""
    mean, std = fit_zscore(ds)
    return replace(ds, values=(ds.values - mean) / std, stats=(mean, std))


def window_count(ds: TimeSeriesDataset, lookback: int, horizon: int, split_id: str) -> int:
    lo, hi = ds.segment(split_id, lookback)
    return hi - lo - lookback - horizon + 1


def window_arrays(ds: TimeSeriesDataset, lookback: int, horizon: int,
                  split_id: str) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """All stride-1 windows of a split as read-only views.

    Returns ``(histories[n, L, C], targets[n, O, C], origins[n])``.
    """
    if lookback < 1 or horizon < 1:
        raise ConfigError("lookback and horizon must be at least 1")
    lo, hi = ds.segment(split_id, lookback)
    n = hi - lo - lookback - horizon + 1
    if n <= 0:
        raise DataError(f"{split_id} split ({hi - lo} rows) too short for L={lookback}, O={horizon}")
    block = ds.values[lo:hi]
    # [n_windows, C, L+O] -> [n_windows, L+O, C]
    win = np.swapaxes(sliding_window_view(block, lookback + horizon, axis=0), 1, 2)
    return win[:n, :lookback], win[:n, lookback:], np.arange(lo, lo + n)


def make_windows(ds: TimeSeriesDataset, lookback: int, horizon: int, split_id: str) -> Iterator[WindowPair]:
    hist, tgt, origins = window_arrays(ds, lookback, horizon, split_id)
    for h, t, o in zip(hist, tgt, origins):
        yield WindowPair(h, t, int(o))


def history_mask(lookback: int, fraction: float, seed, contiguous: bool = False) -> np.ndarray:
    """Boolean ``[L]`` mask with exactly ``floor(fraction * L)`` True entries."""
    if not 0.0 <= fraction <= 1.0:
        raise ConfigError(f"mask fraction must lie in [0, 1], got {fraction}")
    k = math.floor(fraction * lookback)
    mask = np.zeros(lookback, dtype=bool)
    if k == 0:
        return mask
    rng = np.random.default_rng(seed)
    if contiguous:
        start = int(rng.integers(0, lookback - k + 1))
        mask[start:start + k] = True
    else:
        mask[rng.choice(lookback, size=k, replace=False)] = True
    return mask


def mask_history(w: WindowPair, fraction: float, seed, contiguous: bool = False) -> WindowPair:
    """Zero a seeded subset of whole history time steps (all variables); target untouched."""
    mask = history_mask(w.history.shape[0], fraction, seed, contiguous)
    hist = w.history.copy()
    hist[mask] = 0.0
    return WindowPair(hist, w.target, w.origin_index)


def mask_histories(histories: np.ndarray, origins: np.ndarray, fraction: float, seed: int,
                   contiguous: bool = False) -> np.ndarray:
    """Batch form of :func:`mask_history`; each window's mask is keyed on (seed, origin)."""
    out = np.array(histories, dtype=np.float64, copy=True)
    if fraction == 0:
        return out
    for i, origin in enumerate(origins):
        out[i, history_mask(out.shape[1], fraction, (seed, int(origin)), contiguous)] = 0.0
    return out
