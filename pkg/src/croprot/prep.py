"""Signal conditioning for one parcel-season.

Chain: Hampel outlier flags on B4 and B8A, removal of flagged dates for all
four signals, linear resampling onto a 2-day grid, then a second-order
Whittaker smoother per signal with its penalty chosen on a V-curve.
"""
from __future__ import annotations

import functools
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np
from scipy.linalg.lapack import dpbtrf, dpbtrs

from .data import SIGNALS, DataError, RawSeries

GRID_STEP = 2
GRID_DAYS = np.arange(0, 365, GRID_STEP)
N_GRID = len(GRID_DAYS)  # 183
MAD_SCALE = 1.4826
DEFAULT_LOG10_GRID = np.arange(-2.0, 8.0 + 1e-9, 0.5)


class PrepError(DataError):
    """Raised when a parcel-season cannot be conditioned."""


@dataclass(frozen=True)
class SmoothSeries:
    values: np.ndarray  # (183, 4)
    parcel_id: str | None = None
    season: int | None = None
    lambdas: tuple[float, ...] = ()

    @property
    def grid(self) -> np.ndarray:
        return GRID_DAYS


def hampel_filter(values, dates, half_window_days: float = 10, k: float = 3.0) -> np.ndarray:
    """Boolean outlier mask from a date-windowed Hampel rule.

    Each non-missing sample is compared with the median ``m`` of the
    non-missing samples within ``half_window_days`` of it and flagged when
    ``|x - m| > k * 1.4826 * MAD``. Missing samples are never flagged.
    """
    x = np.asarray(values, dtype=np.float64)
    d = np.asarray(dates, dtype=np.float64)
    ok = np.isfinite(x)
    if not ok.any():
        raise PrepError("empty series")
    xv, dv = x[ok], d[ok]
    inside = np.abs(dv[:, None] - dv[None, :]) <= half_window_days
    win = np.where(inside, xv[None, :], np.nan)
    counts = inside.sum(axis=1)
    med = _row_median(win, counts)
    mad = _row_median(np.abs(win - med[:, None]), counts)
    flags = np.abs(xv - med) > k * MAD_SCALE * mad
    mask = np.zeros(len(x), dtype=bool)
    mask[np.flatnonzero(ok)[flags]] = True
    return mask


def _row_median(a: np.ndarray, counts: np.ndarray) -> np.ndarray:
    """Median of the finite entries of each row (NaN sorts last)."""
    s = np.sort(a, axis=1)
    rows = np.arange(a.shape[0])
    return 0.5 * (s[rows, (counts - 1) // 2] + s[rows, counts // 2])


def apply_outlier_mask(raw: RawSeries, mask_b4, mask_b8a) -> RawSeries:
    drop = np.asarray(mask_b4, dtype=bool) | np.asarray(mask_b8a, dtype=bool)
    if not drop.any():
        return raw
    values = raw.values.copy()
    values[drop] = np.nan
    return RawSeries(raw.days, values, raw.parcel_id, raw.season)


def resample_2day(raw: RawSeries) -> tuple[np.ndarray, np.ndarray]:
    """Linear interpolation of every signal onto the 183-point grid.

    Returns ``(values, weights)``, both (183, 4). Grid points outside the
    observed span of a signal repeat the nearest observation with weight 0.
    """
    values = np.empty((N_GRID, len(SIGNALS)))
    weights = np.zeros((N_GRID, len(SIGNALS)))
    for j in range(len(SIGNALS)):
        col = raw.values[:, j]
        ok = np.isfinite(col)
        if ok.sum() < 2:
            raise PrepError(f"{raw._tag()}insufficient samples for {SIGNALS[j]} ({int(ok.sum())} < 2)")
        d, v = raw.days[ok], col[ok]
        values[:, j] = np.interp(GRID_DAYS, d, v)
        weights[(GRID_DAYS >= d[0]) & (GRID_DAYS <= d[-1]), j] = 1.0
    return values, weights


@functools.lru_cache(maxsize=8)
def _penalty_bands_cached(n: int) -> np.ndarray:
    ab = _penalty_bands(n)
    ab.setflags(write=False)
    return ab


def _penalty_bands(n: int) -> np.ndarray:
    """Upper banded form (3, n) of D^T D for the second-difference D."""
    coef = (1.0, -2.0, 1.0)
    ab = np.zeros((3, n))
    rows = np.arange(n - 2)
    for a in range(3):
        for b in range(a, 3):
            # entry (i + a, i + b) lives at ab[2 - (b - a), i + b]
            np.add.at(ab[2 - (b - a)], rows + b, coef[a] * coef[b])
    return ab


def second_difference(n: int) -> np.ndarray:
    """Dense (n-2, n) second-difference operator."""
    D = np.zeros((n - 2, n))
    i = np.arange(n - 2)
    D[i, i] = 1.0
    D[i, i + 1] = -2.0
    D[i, i + 2] = 1.0
    return D


def whittaker_smooth(y, w, lam: float) -> np.ndarray:
    """Solve ``(diag(w) + lam * D'D) z = w * y`` with a refined banded Cholesky.

    ``y`` and ``w`` may be (n,) or (n, k) for k right-hand sides that share
    the weights of ``w[:, 0]``.
    """
    y = np.asarray(y, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    n = y.shape[0]
    if n < 3 or w.shape[0] != n:
        raise ValueError("need len(y) == len(w) >= 3")
    if lam < 0:
        raise ValueError("lambda must be >= 0")
    w1 = w if w.ndim == 1 else w[:, 0]
    if not np.any(w1 > 0):
        raise ValueError("all weights are zero")
    if lam == 0:
        if np.any(w1 == 0):
            raise ValueError("lambda = 0 requires strictly positive weights")
        return y.copy()
    if np.count_nonzero(w1) < 2:
        raise ValueError("at least two positive weights are needed when lambda > 0")
    ab = lam * _penalty_bands_cached(n)
    ab[2] += w1
    wcol = w1[:, None] if y.ndim == 2 else w1
    rhs = wcol * y
    # banded Cholesky (LAPACK pbtrf/pbtrs) on the upper pentadiagonal storage
    chol, info = dpbtrf(ab, lower=0)
    if info != 0:
        raise np.linalg.LinAlgError(f"smoothing system is not positive definite (info={info})")
    z, _ = dpbtrs(chol, rhs, lower=0)
    # one step of iterative refinement; the residual applies D'D through
    # differences, which keeps large-lambda systems accurate
    dz, _ = dpbtrs(chol, rhs - wcol * z - lam * _dtd(z), lower=0)
    return z + dz


def _dtd(z: np.ndarray) -> np.ndarray:
    """``D'D z`` for the second-difference operator, along axis 0."""
    d2 = z[2:] - 2 * z[1:-1] + z[:-2]
    out = np.zeros_like(z)
    out[:-2] += d2
    out[1:-1] -= 2 * d2
    out[2:] += d2
    return out


def whittaker_residual(y, w, lam: float, z) -> float:
    """Max-norm residual of the normal equations, applying D'D via D."""
    y = np.asarray(y, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    return float(np.max(np.abs(w * (z - y) + lam * _dtd(z))))


def vcurve_lambda(y, w, log10_grid=DEFAULT_LOG10_GRID) -> float:
    """Penalty chosen on the V-curve of log-fidelity versus log-roughness.

    Between consecutive grid values the distance travelled on the
    (log F, log R) curve is measured; the geometric mean of the pair with the
    shortest step is returned (first minimum, i.e. the smaller lambda, on
    ties). Constant data returns the smallest grid value.
    """
    grid = np.asarray(log10_grid, dtype=np.float64)
    if grid.size < 3:
        raise ValueError("the lambda grid needs at least 3 points")
    y = np.asarray(y, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    lams = 10.0 ** grid
    weighted = y[w > 0]
    if weighted.size == 0 or np.ptp(weighted) == 0:
        return float(lams[0])
    fid, rough = _fidelity_roughness(y, w, lams)
    return _vcurve_pick(lams, fid, rough)


def _fidelity_roughness(y, w, lams):
    # y may carry several signals as columns sharing one weight vector
    fid = np.empty((len(lams),) + y.shape[1:])
    rough = np.empty_like(fid)
    wcol = w if y.ndim == 1 else w[:, None]
    for i, lam in enumerate(lams):
        z = whittaker_smooth(y, w, lam)
        fid[i] = np.sum(wcol * (y - z) ** 2, axis=0)
        rough[i] = np.sum(np.diff(z, n=2, axis=0) ** 2, axis=0)
    return fid, rough


def _vcurve_pick(lams, fid, rough) -> float:
    tiny = np.finfo(np.float64).tiny
    lf = np.log(np.maximum(fid, tiny))
    lr = np.log(np.maximum(rough, tiny))
    v = np.hypot(np.diff(lf), np.diff(lr))
    i = int(np.argmin(v))
    return float(np.sqrt(lams[i] * lams[i + 1]))


def _vcurve_columns(values, weights, log10_grid) -> list[float]:
    """Per-column V-curve lambdas, sharing factorizations across columns with equal weights."""
    lams = 10.0 ** np.asarray(log10_grid, dtype=np.float64)
    out = [float(lams[0])] * values.shape[1]
    groups: dict[bytes, list[int]] = {}
    for j in range(values.shape[1]):
        col = values[weights[:, j] > 0, j]
        if col.size and np.ptp(col) > 0:
            groups.setdefault(weights[:, j].tobytes(), []).append(j)
    for cols in groups.values():
        w = weights[:, cols[0]]
        fid, rough = _fidelity_roughness(values[:, cols], w, lams)
        for c, j in enumerate(cols):
            out[j] = _vcurve_pick(lams, fid[:, c], rough[:, c])
    return out


def prep_season(raw: RawSeries, *, half_window_days: float = 10, k: float = 3.0,
                log10_grid=DEFAULT_LOG10_GRID) -> SmoothSeries:
    """Full conditioning chain for one parcel-season."""
    try:
        b4 = raw.signal("b4")
        b8a = raw.signal("b8a")
        m4 = hampel_filter(b4, raw.days, half_window_days, k)
        m8 = hampel_filter(b8a, raw.days, half_window_days, k)
        clean = apply_outlier_mask(raw, m4, m8)
        values, weights = resample_2day(clean)
        lams = _vcurve_columns(values, weights, log10_grid)
        smooth = np.empty_like(values)
        for j, lam in enumerate(lams):
            smooth[:, j] = whittaker_smooth(values[:, j], weights[:, j], lam)
    except (ValueError, np.linalg.LinAlgError) as exc:
        tag = raw._tag()
        if isinstance(exc, PrepError) and str(exc).startswith(tag):
            raise
        raise PrepError(f"{tag}{exc}") from exc
    return SmoothSeries(smooth, raw.parcel_id, raw.season, tuple(lams))


# --------------------------------------------------------------------------
# binary cache

RSSM_MAGIC = b"RSSM"
RSSM_VERSION = 1


def _write_id(fh, s: str):
    b = s.encode("utf-8")
    fh.write(struct.pack("<H", len(b)))
    fh.write(b)


def _read_id(fh) -> str:
    (n,) = struct.unpack("<H", fh.read(2))
    return fh.read(n).decode("utf-8")


def save_smooth_cache(path, series: Iterable[SmoothSeries]) -> None:
    """Write smoothed series as ``RSSM`` + u16 version + records.

    Each record is a u16-length-prefixed UTF-8 id, an i32 season and 4x183
    little-endian float64 values stored signal-major.
    """
    items = sorted(series, key=lambda s: (s.parcel_id, s.season))
    with open(path, "wb") as fh:
        fh.write(RSSM_MAGIC)
        fh.write(struct.pack("<H", RSSM_VERSION))
        for s in items:
            _write_id(fh, s.parcel_id)
            fh.write(struct.pack("<i", s.season))
            fh.write(np.ascontiguousarray(s.values.T, dtype="<f8").tobytes())


def load_smooth_cache(path) -> dict[tuple[str, int], SmoothSeries]:
    out = {}
    data = Path(path).read_bytes()
    if data[:4] != RSSM_MAGIC:
        raise DataError(f"{path}: not an RSSM cache")
    (version,) = struct.unpack_from("<H", data, 4)
    if version != RSSM_VERSION:
        raise DataError(f"{path}: unsupported RSSM version {version}")
    pos = 6
    nbytes = 8 * len(SIGNALS) * N_GRID
    while pos < len(data):
        (n,) = struct.unpack_from("<H", data, pos)
        pid = data[pos + 2:pos + 2 + n].decode("utf-8")
        pos += 2 + n
        (season,) = struct.unpack_from("<i", data, pos)
        pos += 4
        vals = np.frombuffer(data, dtype="<f8", count=len(SIGNALS) * N_GRID, offset=pos)
        pos += nbytes
        out[(pid, season)] = SmoothSeries(vals.reshape(len(SIGNALS), N_GRID).T.astype(np.float64), pid, season)
    return out


def prep_all(series: Iterable[RawSeries], workers: int = 1, **kwargs) -> dict[tuple[str, int], SmoothSeries]:
    """Run :func:`prep_season` over many parcel-seasons.

    Results do not depend on ``workers``; each parcel-season is independent.
    """
    items = list(series)
    if workers <= 1 or len(items) < 2:
        results = [prep_season(r, **kwargs) for r in items]
    else:
        from concurrent.futures import ProcessPoolExecutor
        from functools import partial

        chunk = max(1, len(items) // (4 * workers))
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(partial(prep_season, **kwargs), items, chunksize=chunk))
    return {(s.parcel_id, s.season): s for s in results}
