"""Parcel, crop-record and time-series ingestion.

Holds the label taxonomy with its fine -> 28 -> 12 -> 10 class aggregations,
the season calendar (October N-1 to September N is season N) and the
assembly of fixed-length per-parcel training sequences.
"""
from __future__ import annotations

import datetime as _dt
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Mapping, Sequence

import numpy as np
import pandas as pd

SIGNALS = ("b4", "b8a", "lai", "fapar")
LEVELS = ("fine", "c28", "c12", "c10")
EXCLUDED = -1
SIGNAL_RANGES = {"b4": (0.0, 1.2), "b8a": (0.0, 1.2), "lai": (0.0, np.inf), "fapar": (0.0, 1.0)}
N_WINDOWS = 25
N_WINDOW_FEATURES = 28

PARCELS_HEADER = ["parcel_id", "centroid_x_m", "centroid_y_m", "area_ha"]
CROPS_HEADER = ["parcel_id", "season_year", "crop_code"]
RS_HEADER = ["parcel_id", "date", *SIGNALS]
TAXONOMY_HEADER = ["crop_code", "name", "class28", "class12", "class10"]


class DataError(ValueError):
    """Raised for malformed or inconsistent input data."""


@dataclass(frozen=True)
class ParcelRecord:
    parcel_id: str
    centroid_x: float
    centroid_y: float
    area_ha: float

    def __post_init__(self):
        if not self.area_ha > 0:
            raise DataError(f"parcel {self.parcel_id}: area_ha must be > 0")
        if not (np.isfinite(self.centroid_x) and np.isfinite(self.centroid_y)):
            raise DataError(f"parcel {self.parcel_id}: non-finite coordinates")


@dataclass(frozen=True)
class CropRecord:
    parcel_id: str
    season_year: int
    crop_code: int


@dataclass(frozen=True)
class RawSeries:
    """Irregular samples of one parcel-season.

    ``days`` are offsets from October 1st of year N-1, ``values`` has one
    column per entry of :data:`SIGNALS` and uses NaN for missing cells.
    """

    days: np.ndarray
    values: np.ndarray
    parcel_id: str | None = None
    season: int | None = None

    def __post_init__(self):
        days = np.asarray(self.days, dtype=np.int64)
        values = np.asarray(self.values, dtype=np.float64).reshape(len(days), len(SIGNALS))
        if len(days) > 1 and np.any(np.diff(days) <= 0):
            raise DataError(f"{self._tag()}dates must be strictly ascending")
        object.__setattr__(self, "days", days)
        object.__setattr__(self, "values", values)

    def _tag(self) -> str:
        if self.parcel_id is None:
            return ""
        return f"parcel {self.parcel_id} season {self.season}: "

    def __len__(self) -> int:
        return len(self.days)

    def signal(self, name: str) -> np.ndarray:
        return self.values[:, SIGNALS.index(name)]


class LabelTaxonomy:
    """Fine crop codes and their coarse aggregations.

    ``map10`` holds :data:`EXCLUDED` for codes outside the 10-class setting.
    The constructor checks that the 12-class map factors through the
    28-class map and that exclusion and the 10-class map are functions of
    the 12-class group.
    """

    def __init__(self, map28, map12, map10, names: Sequence[str] | None = None):
        self.map28 = np.asarray(map28, dtype=np.int64)
        self.map12 = np.asarray(map12, dtype=np.int64)
        self.map10 = np.asarray(map10, dtype=np.int64)
        self.V = len(self.map28)
        if not (len(self.map12) == len(self.map10) == self.V):
            raise DataError("taxonomy maps must have equal length")
        self.names = list(names) if names is not None else [f"crop{i}" for i in range(self.V)]
        if np.any(self.map28 < 0) or np.any(self.map12 < 0):
            raise DataError("class28/class12 must be non-negative for every fine code")
        if np.any(self.map10 < EXCLUDED):
            raise DataError("class10 must be >= 0 or -1 (excluded)")
        self._check_consistency()

    def _check_consistency(self):
        c28_to_12: dict[int, int] = {}
        for code, (a, b) in enumerate(zip(self.map28, self.map12)):
            if c28_to_12.setdefault(int(a), int(b)) != b:
                raise DataError(
                    f"taxonomy inconsistent: class28 {a} maps to class12 "
                    f"{c28_to_12[int(a)]} and {b} (crop code {code})"
                )
        c12_to_10: dict[int, int] = {}
        for code, (b, c) in enumerate(zip(self.map12, self.map10)):
            if c12_to_10.setdefault(int(b), int(c)) != c:
                raise DataError(
                    f"taxonomy inconsistent: class12 {b} has mixed class10 values (crop code {code})"
                )

    @classmethod
    def identity(cls, V: int) -> "LabelTaxonomy":
        codes = np.arange(V)
        return cls(codes, codes, codes)

    def level_map(self, level: str) -> np.ndarray:
        if level == "fine":
            return np.arange(self.V)
        if level == "c28":
            return self.map28
        if level == "c12":
            return self.map12
        if level == "c10":
            return self.map10
        raise ValueError(f"unknown level {level!r}; expected one of {LEVELS}")

    def n_classes(self, level: str) -> int:
        m = self.level_map(level)
        return int(m.max()) + 1 if np.any(m >= 0) else 0

    def aggregate_label(self, crop_code: int, level: str) -> int:
        if not 0 <= crop_code < self.V:
            raise DataError(f"crop code out of range: {crop_code}")
        return int(self.level_map(level)[crop_code])

    def coarsen_28_to_12(self) -> dict[int, int]:
        return {int(a): int(b) for a, b in zip(self.map28, self.map12)}

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {
                "crop_code": np.arange(self.V),
                "name": self.names,
                "class28": self.map28,
                "class12": self.map12,
                "class10": self.map10,
            }
        )


def aggregate_label(taxonomy: LabelTaxonomy, crop_code: int, level: str) -> int:
    return taxonomy.aggregate_label(crop_code, level)


def season_of(date: _dt.date) -> int:
    """Season year N such that ``date`` lies in [Oct 1 of N-1, Sep 30 of N]."""
    return date.year + 1 if date.month >= 10 else date.year


def season_start(season: int) -> _dt.date:
    return _dt.date(season - 1, 10, 1)


def season_day(date: _dt.date) -> int:
    return (date - season_start(season_of(date))).days


@dataclass(frozen=True)
class Dataset:
    """Immutable indexed view of parcels, crop labels and raw signal samples."""

    parcels: Mapping[str, ParcelRecord]
    crops: Mapping[str, Mapping[int, int]]
    rs: Mapping[str, Mapping[int, RawSeries]]
    taxonomy: LabelTaxonomy

    @property
    def V(self) -> int:
        return self.taxonomy.V

    @property
    def parcel_ids(self) -> list[str]:
        return sorted(self.parcels)

    def seasons(self, parcel_id: str) -> list[int]:
        return sorted(self.crops.get(parcel_id, {}))

    def label(self, parcel_id: str, year: int) -> int | None:
        return self.crops.get(parcel_id, {}).get(year)

    def labels_of_year(self, year: int) -> dict[str, int]:
        return {pid: ys[year] for pid, ys in self.crops.items() if year in ys}

    def rs_seasons(self) -> list[int]:
        return sorted({s for by_season in self.rs.values() for s in by_season})

    def iter_series(self) -> Iterator[RawSeries]:
        for pid in sorted(self.rs):
            for season in sorted(self.rs[pid]):
                yield self.rs[pid][season]


# --------------------------------------------------------------------------
# CSV loading


def _read_csv(path: Path, header: list[str]) -> pd.DataFrame:
    path = Path(path)
    if not path.exists():
        raise DataError(f"{path}: file not found")
    df = pd.read_csv(path, dtype=str, keep_default_na=False, na_filter=False)
    if list(df.columns) != header:
        raise DataError(f"{path}: line 1: expected header {','.join(header)}, got {','.join(df.columns)}")
    return df


def _bad_row(path, mask: np.ndarray, column: str, df: pd.DataFrame, what: str):
    i = int(np.flatnonzero(mask)[0])
    # line 1 is the header
    raise DataError(f"{path}: line {i + 2}, column {column!r}: {what} ({df[column].iat[i]!r})")


def _parse_numeric(path, df, column, *, integer=False, allow_empty=False) -> np.ndarray:
    raw = df[column]
    empty = (raw.str.strip() == "").to_numpy()
    vals = pd.to_numeric(raw.where(~empty, None), errors="coerce").to_numpy(dtype=np.float64)
    bad = np.isnan(vals) & ~empty if allow_empty else np.isnan(vals)
    bad |= np.isinf(vals)
    if bad.any():
        _bad_row(path, bad, column, df, "not a number" if not integer else "not an integer")
    if integer:
        frac = ~np.isnan(vals) & (vals != np.round(vals))
        if frac.any():
            _bad_row(path, frac, column, df, "not an integer")
    return vals


def read_parcels(path) -> dict[str, ParcelRecord]:
    df = _read_csv(path, PARCELS_HEADER)
    x = _parse_numeric(path, df, "centroid_x_m")
    y = _parse_numeric(path, df, "centroid_y_m")
    area = _parse_numeric(path, df, "area_ha")
    if np.any(area <= 0):
        _bad_row(path, area <= 0, "area_ha", df, "area must be > 0")
    ids = df["parcel_id"].to_numpy()
    dup = pd.Series(ids).duplicated().to_numpy()
    if dup.any():
        _bad_row(path, dup, "parcel_id", df, "duplicate parcel_id")
    return {
        pid: ParcelRecord(pid, float(a), float(b), float(c))
        for pid, a, b, c in zip(ids, x, y, area)
    }


def read_taxonomy(path) -> LabelTaxonomy:
    df = _read_csv(path, TAXONOMY_HEADER)
    codes = _parse_numeric(path, df, "crop_code", integer=True).astype(np.int64)
    order = np.argsort(codes)
    if not np.array_equal(codes[order], np.arange(len(codes))):
        raise DataError(f"{path}: crop codes must be exactly 0..V-1")
    cols = {c: _parse_numeric(path, df, c, integer=True).astype(np.int64)[order] for c in TAXONOMY_HEADER[2:]}
    return LabelTaxonomy(cols["class28"], cols["class12"], cols["class10"], df["name"].to_numpy()[order])


def read_crops(path, parcels: Mapping[str, ParcelRecord], V: int) -> dict[str, dict[int, int]]:
    df = _read_csv(path, CROPS_HEADER)
    years = _parse_numeric(path, df, "season_year", integer=True).astype(np.int64)
    codes = _parse_numeric(path, df, "crop_code", integer=True).astype(np.int64)
    ids = df["parcel_id"].to_numpy()
    unknown = ~pd.Series(ids).isin(parcels.keys()).to_numpy()
    if unknown.any():
        _bad_row(path, unknown, "parcel_id", df, "unknown parcel_id")
    oob = (codes < 0) | (codes >= V)
    if oob.any():
        _bad_row(path, oob, "crop_code", df, "crop code out of range")
    dup = pd.DataFrame({"p": ids, "y": years}).duplicated().to_numpy()
    if dup.any():
        _bad_row(path, dup, "season_year", df, "duplicate (parcel_id, season_year) crop record")
    crops: dict[str, dict[int, int]] = {}
    for pid, yr, code in zip(ids, years.tolist(), codes.tolist()):
        crops.setdefault(pid, {})[yr] = code
    return crops


def read_rs(path, parcels: Mapping[str, ParcelRecord]) -> dict[str, dict[int, RawSeries]]:
    df = _read_csv(path, RS_HEADER)
    ids = df["parcel_id"].to_numpy()
    unknown = ~pd.Series(ids).isin(parcels.keys()).to_numpy()
    if unknown.any():
        _bad_row(path, unknown, "parcel_id", df, "unknown parcel_id")
    dates = pd.to_datetime(df["date"], format="%Y-%m-%d", errors="coerce")
    if dates.isna().any():
        _bad_row(path, dates.isna().to_numpy(), "date", df, "invalid date")
    values = np.column_stack([_parse_numeric(path, df, s, allow_empty=True) for s in SIGNALS])
    for j, (name, (lo, hi)) in enumerate(SIGNAL_RANGES.items()):
        col = values[:, j]
        bad = (col < lo) | (col > hi)
        if bad.any():
            _bad_row(path, bad, name, df, f"value outside [{lo}, {hi}]")

    year = dates.dt.year.to_numpy()
    season = np.where(dates.dt.month.to_numpy() >= 10, year + 1, year)
    starts = pd.to_datetime({"year": season - 1, "month": 10, "day": 1})
    day = (dates - starts).dt.days.to_numpy()

    frame = pd.DataFrame({"pid": ids, "season": season, "day": day, "row": np.arange(len(df))})
    frame = frame.sort_values(["pid", "season", "day"], kind="stable")
    dup = frame.duplicated(["pid", "season", "day"]).to_numpy()
    if dup.any():
        i = int(frame["row"].to_numpy()[np.flatnonzero(dup)[0]])
        raise DataError(f"{path}: line {i + 2}, column 'date': duplicate date for parcel {ids[i]}")

    rs: dict[str, dict[int, RawSeries]] = {}
    rows = frame["row"].to_numpy()
    pid_s = frame["pid"].to_numpy()
    season_s = frame["season"].to_numpy()
    day_s = frame["day"].to_numpy()
    if len(rows):
        key_change = np.flatnonzero((pid_s[1:] != pid_s[:-1]) | (season_s[1:] != season_s[:-1])) + 1
        bounds = np.concatenate([[0], key_change, [len(rows)]])
        for a, b in zip(bounds[:-1], bounds[1:]):
            pid, s = pid_s[a], int(season_s[a])
            rs.setdefault(pid, {})[s] = RawSeries(day_s[a:b], values[rows[a:b]], pid, s)
    return rs


def load_dataset(parcels_path, crops_path, rs_path, taxonomy_path=None, *, n_classes: int | None = None) -> Dataset:
    """Load the four CSV files into a :class:`Dataset`.

    Without a taxonomy file an identity taxonomy over ``n_classes`` fine
    codes is used.
    """
    parcels = read_parcels(parcels_path)
    if taxonomy_path is not None:
        taxonomy = read_taxonomy(taxonomy_path)
    elif n_classes is not None:
        taxonomy = LabelTaxonomy.identity(n_classes)
    else:
        raise DataError("either a taxonomy file or n_classes is required")
    crops = read_crops(crops_path, parcels, taxonomy.V)
    rs = read_rs(rs_path, parcels)
    return Dataset(parcels, crops, rs, taxonomy)


def write_dataset(dataset: Dataset, out_dir) -> dict[str, Path]:
    """Write the dataset back as parcels/crops/rs/taxonomy CSV files."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {name: out / f"{name}.csv" for name in ("parcels", "crops", "rs", "taxonomy")}
    ids = dataset.parcel_ids
    pd.DataFrame(
        {
            "parcel_id": ids,
            "centroid_x_m": [repr(dataset.parcels[p].centroid_x) for p in ids],
            "centroid_y_m": [repr(dataset.parcels[p].centroid_y) for p in ids],
            "area_ha": [repr(dataset.parcels[p].area_ha) for p in ids],
        }
    ).to_csv(paths["parcels"], index=False)
    crop_rows = [(p, y, c) for p in ids for y, c in sorted(dataset.crops.get(p, {}).items())]
    pd.DataFrame(crop_rows, columns=CROPS_HEADER).to_csv(paths["crops"], index=False)
    dataset.taxonomy.to_frame().to_csv(paths["taxonomy"], index=False)

    series = list(dataset.iter_series())
    if series:
        ids_col = np.repeat([r.parcel_id for r in series], [len(r) for r in series])
        starts = np.repeat([np.datetime64(season_start(r.season).isoformat()) for r in series],
                           [len(r) for r in series])
        days = np.concatenate([r.days for r in series]).astype("timedelta64[D]")
        rs_df = pd.DataFrame(np.concatenate([r.values for r in series]), columns=list(SIGNALS))
        rs_df.insert(0, "date", np.datetime_as_string(starts + days, unit="D"))
        rs_df.insert(0, "parcel_id", ids_col)
    else:
        rs_df = pd.DataFrame(columns=RS_HEADER)
    rs_df.to_csv(paths["rs"], index=False, float_format="%.6g", na_rep="")
    return paths


# --------------------------------------------------------------------------
# Sequences


@dataclass(frozen=True)
class Step:
    season: int
    prev_crop: int
    features: np.ndarray
    label: int


@dataclass(frozen=True)
class ParcelSequence:
    """``T`` aligned seasons for one parcel plus its crop-distribution vector.

    Step ``t`` (season ``seasons[t]``) pairs the previous season's label with
    the current season's window features and the current label. Missing
    history uses the UNKNOWN token ``V``; missing signal data an all-zero
    feature block.
    """

    parcel_id: str
    seasons: np.ndarray
    prev_crops: np.ndarray
    features: np.ndarray
    labels: np.ndarray
    dist: np.ndarray

    @property
    def T(self) -> int:
        return len(self.seasons)

    @property
    def target(self) -> int:
        return int(self.labels[-1])

    @property
    def steps(self) -> list[Step]:
        return [
            Step(int(s), int(p), f, int(lab))
            for s, p, f, lab in zip(self.seasons, self.prev_crops, self.features, self.labels)
        ]


@dataclass
class SequenceSet:
    """Columnar storage for many :class:`ParcelSequence` objects.

    Feature blocks live once in ``feature_table``; ``feature_index`` points
    into it with -1 meaning the zero placeholder.
    """

    parcel_ids: list[str]
    target_year: int
    seasons: np.ndarray
    prev_crops: np.ndarray
    labels: np.ndarray
    feature_index: np.ndarray
    feature_table: np.ndarray
    dist: np.ndarray
    V: int
    extras: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.parcel_ids)

    @property
    def T(self) -> int:
        return self.prev_crops.shape[1]

    @property
    def targets(self) -> np.ndarray:
        return self.labels[:, -1]

    def gather_features(self, rows, dtype=np.float32) -> np.ndarray:
        idx = self.feature_index[rows]
        out = np.zeros(idx.shape + self.feature_table.shape[1:], dtype=dtype)
        have = idx >= 0
        out[have] = self.feature_table[idx[have]]
        return out

    def __getitem__(self, i: int) -> ParcelSequence:
        return ParcelSequence(
            self.parcel_ids[i],
            self.seasons[i].copy(),
            self.prev_crops[i].copy(),
            self.gather_features(i, dtype=np.float64),
            self.labels[i].copy(),
            self.dist[i].copy(),
        )

    def __iter__(self) -> Iterator[ParcelSequence]:
        for i in range(len(self)):
            yield self[i]

    def subset(self, rows) -> "SequenceSet":
        rows = np.asarray(rows)
        return SequenceSet(
            [self.parcel_ids[i] for i in rows],
            self.target_year,
            self.seasons[rows],
            self.prev_crops[rows],
            self.labels[rows],
            self.feature_index[rows],
            self.feature_table,
            self.dist[rows],
            self.V,
            dict(self.extras),
        )


def build_sequences(
    dataset: Dataset,
    target_year: int,
    T: int = 10,
    features: Mapping[tuple[str, int], np.ndarray] | None = None,
    dist: Mapping[str, np.ndarray] | None = None,
) -> SequenceSet:
    """Assemble one ``T``-step sequence per parcel labelled in ``target_year``.

    ``features`` maps (parcel_id, season) to a 25x28 block; seasons without
    an entry get the zero placeholder. ``dist`` maps parcel_id to its
    crop-distribution vector (zeros when absent).
    """
    ids = [pid for pid in dataset.parcel_ids if dataset.label(pid, target_year) is not None]
    if not ids:
        raise DataError(f"empty target set: no parcel has a label for {target_year}")
    V = dataset.V
    seasons = np.arange(target_year - T + 1, target_year + 1)
    n = len(ids)
    prev = np.full((n, T), V, dtype=np.int64)
    labels = np.full((n, T), V, dtype=np.int64)
    fidx = np.full((n, T), -1, dtype=np.int64)
    table: list[np.ndarray] = []
    dvec = np.zeros((n, V), dtype=np.float64)
    for i, pid in enumerate(ids):
        history = dataset.crops.get(pid, {})
        for t, s in enumerate(seasons):
            prev[i, t] = history.get(int(s) - 1, V)
            labels[i, t] = history.get(int(s), V)
            if features is not None:
                block = features.get((pid, int(s)))
                if block is not None:
                    fidx[i, t] = len(table)
                    table.append(np.asarray(block, dtype=np.float32).reshape(N_WINDOWS, N_WINDOW_FEATURES))
        if dist is not None and pid in dist:
            dvec[i] = dist[pid]
    feature_table = np.stack(table) if table else np.zeros((0, N_WINDOWS, N_WINDOW_FEATURES), np.float32)
    return SequenceSet(ids, target_year, np.tile(seasons, (n, 1)), prev, labels, fidx, feature_table, dvec, V)
