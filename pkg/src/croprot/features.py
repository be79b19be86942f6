"""Windowed functionals over a smoothed season, plus in-season truncation.

A season on the 2-day grid is cut into 25 windows of 30 days starting every
15 days (the last two are clipped at day 365). Each window and signal is
summarised by 7 statistics, giving a 25x28 block (700 values flattened).
Feature order inside a window is signal-major: B4, B8A, LAI, FAPAR, each as
mean, std, q1, median, q3, min, max.
"""
from __future__ import annotations

import math
import struct
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from .data import N_WINDOW_FEATURES, N_WINDOWS, SIGNALS, DataError
from .prep import GRID_STEP, N_GRID, SmoothSeries

WINDOW_DAYS = 30
WINDOW_STEP = 15
SEASON_DAYS = 365
FUNCTIONALS = ("mean", "std", "q1", "median", "q3", "min", "max")
WINDOW_STARTS = tuple(WINDOW_STEP * i for i in range(N_WINDOWS))
# mid-March is ~165 days after October 1st; 365 means the full season
AUGMENT_CUTOFFS = tuple(range(165, SEASON_DAYS, WINDOW_STEP)) + (SEASON_DAYS,)


def window_slices(season_len_days: int = SEASON_DAYS) -> list[slice]:
    """Grid index ranges of the 25 windows on the 2-day grid."""
    out = []
    for start in WINDOW_STARTS:
        stop_day = min(start + WINDOW_DAYS, season_len_days)
        lo = math.ceil(start / GRID_STEP)
        hi = min((stop_day - 1) // GRID_STEP, N_GRID - 1)
        out.append(slice(lo, hi + 1))
    return out


WINDOWS = window_slices()


def functionals(values) -> np.ndarray:
    """Mean, population std, quartiles (linear at q*(n-1)), min and max.

    ``values`` is (n,) or (n, k); statistics are taken along axis 0.
    """
    x = np.asarray(values, dtype=np.float64)
    if x.shape[0] == 0:
        raise ValueError("empty window")
    q = np.quantile(x, [0.25, 0.5, 0.75], axis=0)
    # deviations from the first value keep the std of a constant window exactly 0
    std = (x - x[:1]).std(axis=0)
    return np.stack([x.mean(axis=0), std, q[0], q[1], q[2], x.min(axis=0), x.max(axis=0)])


def season_features(smooth: SmoothSeries | np.ndarray) -> np.ndarray:
    """25x28 feature block of one smoothed season."""
    vals = smooth.values if isinstance(smooth, SmoothSeries) else np.asarray(smooth, dtype=np.float64)
    if vals.shape != (N_GRID, len(SIGNALS)):
        raise ValueError(f"expected a ({N_GRID}, {len(SIGNALS)}) series, got {vals.shape}")
    out = np.empty((N_WINDOWS, len(SIGNALS), len(FUNCTIONALS)))
    # windows 0..22 all hold 15 grid points; stack them for one vectorised pass
    full = [i for i, s in enumerate(WINDOWS) if s.stop - s.start == 15]
    stacked = np.stack([vals[WINDOWS[i]] for i in full], axis=1)  # (15, n_full, 4)
    out[full] = np.moveaxis(functionals(stacked), 0, -1)
    for i in range(N_WINDOWS):
        if i not in full:
            out[i] = functionals(vals[WINDOWS[i]]).T
    return out.reshape(N_WINDOWS, N_WINDOW_FEATURES)


def truncate_at(features, cutoff_day: float) -> np.ndarray:
    """Zero every window starting on or after ``cutoff_day``.

    Works on (..., 25, 28) arrays; windows straddling the cutoff are kept.
    """
    if not 0 <= cutoff_day <= SEASON_DAYS:
        raise ValueError(f"cutoff_day must lie in [0, {SEASON_DAYS}]")
    f = np.array(features, copy=True)
    first = first_zeroed_window(cutoff_day)
    f[..., first:, :] = 0
    return f


def first_zeroed_window(cutoff_day: float) -> int:
    return sum(1 for s in WINDOW_STARTS if s < cutoff_day)


def draw_cutoff(rng: np.random.Generator) -> int:
    return int(AUGMENT_CUTOFFS[rng.integers(len(AUGMENT_CUTOFFS))])


def augment_crop(features, rng: np.random.Generator) -> np.ndarray:
    """Truncate at a cutoff drawn uniformly from :data:`AUGMENT_CUTOFFS`."""
    return truncate_at(features, draw_cutoff(rng))


def features_all(smooth: Mapping[tuple[str, int], SmoothSeries] | Iterable[SmoothSeries],
                 workers: int = 1) -> dict[tuple[str, int], np.ndarray]:
    items = list(smooth.values()) if isinstance(smooth, Mapping) else list(smooth)
    if workers <= 1 or len(items) < 2:
        blocks = [season_features(s) for s in items]
    else:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=workers) as pool:
            blocks = list(pool.map(season_features, items, chunksize=max(1, len(items) // (4 * workers))))
    return {(s.parcel_id, s.season): b for s, b in zip(items, blocks)}


# --------------------------------------------------------------------------
# binary cache

FEAT_MAGIC = b"FEAT"
FEAT_VERSION = 1
_N_VALUES = N_WINDOWS * N_WINDOW_FEATURES


def save_feature_cache(path, features: Mapping[tuple[str, int], np.ndarray]) -> None:
    """``FEAT`` + u16 version, then per block an id, an i32 season and 700 float32 (LE)."""
    with open(path, "wb") as fh:
        fh.write(FEAT_MAGIC)
        fh.write(struct.pack("<H", FEAT_VERSION))
        for (pid, season) in sorted(features):
            b = pid.encode("utf-8")
            fh.write(struct.pack("<H", len(b)))
            fh.write(b)
            fh.write(struct.pack("<i", season))
            block = np.asarray(features[(pid, season)]).reshape(_N_VALUES)
            fh.write(block.astype("<f4").tobytes())


def load_feature_cache(path) -> dict[tuple[str, int], np.ndarray]:
    data = Path(path).read_bytes()
    if data[:4] != FEAT_MAGIC:
        raise DataError(f"{path}: not a FEAT cache")
    (version,) = struct.unpack_from("<H", data, 4)
    if version != FEAT_VERSION:
        raise DataError(f"{path}: unsupported FEAT version {version}")
    out = {}
    pos = 6
    while pos < len(data):
        (n,) = struct.unpack_from("<H", data, pos)
        pid = data[pos + 2:pos + 2 + n].decode("utf-8")
        pos += 2 + n
        (season,) = struct.unpack_from("<i", data, pos)
        pos += 4
        block = np.frombuffer(data, dtype="<f4", count=_N_VALUES, offset=pos)
        pos += 4 * _N_VALUES
        out[(pid, season)] = block.astype(np.float32).reshape(N_WINDOWS, N_WINDOW_FEATURES)
    return out
