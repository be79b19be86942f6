"""Local crop distribution around each parcel.

Parcel centroids are bucketed in a uniform grid; a radius query scans the
cells overlapping the query disc and keeps centroids at Euclidean distance
<= radius. The distribution vector is the area share of each crop among the
labelled parcels in the disc (query parcel included), rounded to 1e-4.
"""
from __future__ import annotations

import csv
import math
from collections import defaultdict
from pathlib import Path
from typing import Mapping

import numpy as np

from .data import DataError, Dataset, ParcelRecord

RADIUS_M = 10_000.0
ROUND_DECIMALS = 4


class GridIndex:
    """Uniform-grid spatial index over parcel centroids."""

    def __init__(self, parcels: Mapping[str, ParcelRecord] | list[ParcelRecord], cell_size: float = RADIUS_M):
        records = list(parcels.values()) if isinstance(parcels, Mapping) else list(parcels)
        records.sort(key=lambda p: p.parcel_id)
        self.cell_size = float(cell_size)
        self.ids = [p.parcel_id for p in records]
        self.pos = {pid: i for i, pid in enumerate(self.ids)}
        self.xy = np.array([[p.centroid_x, p.centroid_y] for p in records], dtype=np.float64).reshape(-1, 2)
        self.area = np.array([p.area_ha for p in records], dtype=np.float64)
        cells: dict[tuple[int, int], list[int]] = defaultdict(list)
        for i, (x, y) in enumerate(self.xy):
            cells[self._cell(x, y)].append(i)
        self.cells = {k: np.array(v, dtype=np.int64) for k, v in cells.items()}

    def _cell(self, x: float, y: float) -> tuple[int, int]:
        return (math.floor(x / self.cell_size), math.floor(y / self.cell_size))

    def __len__(self) -> int:
        return len(self.ids)

    def query(self, x: float, y: float, radius: float = RADIUS_M) -> np.ndarray:
        """Sorted positions of all centroids within ``radius`` of (x, y)."""
        cx, cy = self._cell(x, y)
        reach = max(1, math.ceil(radius / self.cell_size))
        found = [
            self.cells[(i, j)]
            for i in range(cx - reach, cx + reach + 1)
            for j in range(cy - reach, cy + reach + 1)
            if (i, j) in self.cells
        ]
        if not found:
            return np.zeros(0, dtype=np.int64)
        cand = np.concatenate(found)
        d2 = np.sum((self.xy[cand] - (x, y)) ** 2, axis=1)
        return np.sort(cand[d2 <= radius * radius])

    def query_ids(self, x: float, y: float, radius: float = RADIUS_M) -> set[str]:
        return {self.ids[i] for i in self.query(x, y, radius)}


def build_grid_index(parcels, cell_size: float = RADIUS_M) -> GridIndex:
    return GridIndex(parcels, cell_size)


def neighborhood_distribution(parcel: ParcelRecord | str, index: GridIndex, crops_of_year: Mapping[str, int],
                              V: int, radius: float = RADIUS_M) -> np.ndarray:
    """Area-weighted crop shares among labelled parcels within ``radius``.

    Returns an all-zero vector when no parcel in the disc (itself included)
    carries a label for the year.
    """
    pid = parcel if isinstance(parcel, str) else parcel.parcel_id
    if pid not in index.pos:
        raise DataError(f"parcel {pid} is not in the index")
    x, y = index.xy[index.pos[pid]]
    return _distribution(index, index.query(x, y, radius), crops_of_year, V)


def _distribution(index: GridIndex, members: np.ndarray, crops_of_year, V: int) -> np.ndarray:
    codes = np.array([crops_of_year.get(index.ids[i], -1) for i in members], dtype=np.int64)
    keep = codes >= 0
    probs = np.zeros(V, dtype=np.float64)
    if not keep.any():
        return probs
    sums = np.bincount(codes[keep], weights=index.area[members[keep]], minlength=V)
    probs = sums / sums.sum()
    return np.round(probs, ROUND_DECIMALS)


def distributions_for(dataset: Dataset, year: int, parcel_ids=None, radius: float = RADIUS_M,
                      index: GridIndex | None = None) -> dict[str, np.ndarray]:
    """Distribution vectors from ``year`` labels for every requested parcel."""
    index = index or GridIndex(dataset.parcels)
    crops = dataset.labels_of_year(year)
    ids = dataset.parcel_ids if parcel_ids is None else list(parcel_ids)
    out = {}
    for pid in ids:
        x, y = index.xy[index.pos[pid]]
        out[pid] = _distribution(index, index.query(x, y, radius), crops, dataset.V)
    return out


def save_distribution_csv(path, dists: Mapping[str, np.ndarray]) -> None:
    """Sparse ``parcel_id,crop_code,prob`` rows, zeros omitted."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["parcel_id", "crop_code", "prob"])
        for pid in sorted(dists):
            for code in np.flatnonzero(dists[pid]):
                w.writerow([pid, int(code), f"{dists[pid][code]:.4f}"])


def load_distribution_csv(path, V: int, parcel_ids=None) -> dict[str, np.ndarray]:
    out: dict[str, np.ndarray] = {pid: np.zeros(V) for pid in (parcel_ids or [])}
    with open(Path(path), newline="") as fh:
        rows = csv.reader(fh)
        header = next(rows, None)
        if header != ["parcel_id", "crop_code", "prob"]:
            raise DataError(f"{path}: line 1: bad header {header}")
        for lineno, row in enumerate(rows, start=2):
            try:
                pid, code, prob = row[0], int(row[1]), float(row[2])
            except (ValueError, IndexError) as exc:
                raise DataError(f"{path}: line {lineno}: {exc}") from exc
            if not 0 <= code < V:
                raise DataError(f"{path}: line {lineno}, column 'crop_code': crop code out of range")
            out.setdefault(pid, np.zeros(V))[code] = prob
    return out
