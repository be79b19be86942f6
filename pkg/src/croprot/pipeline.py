"""Glue between the stages: raw dataset -> feature blocks -> train/dev/test sequences."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cropdist import RADIUS_M, GridIndex, distributions_for
from .data import Dataset, SequenceSet, build_sequences
from .features import features_all
from .prep import prep_all

DEFAULT_YEARS = (2018, 2019, 2020)


def compute_features(dataset: Dataset, workers: int = 1) -> dict[tuple[str, int], np.ndarray]:
    """Smooth every parcel-season and reduce it to its 25x28 block."""
    smooth = prep_all(dataset.iter_series(), workers=workers)
    return features_all(smooth, workers=workers)


@dataclass
class Splits:
    train: SequenceSet
    dev: SequenceSet
    test: SequenceSet

    def __iter__(self):
        return iter((self.train, self.dev, self.test))


def make_sequences(dataset: Dataset, features, target_year: int, T: int = 10, radius: float = RADIUS_M,
                   dist_year: int | None = None, index: GridIndex | None = None) -> SequenceSet:
    """Sequences for one target year with distributions from ``dist_year`` (default: the year before)."""
    dist_year = target_year - 1 if dist_year is None else dist_year
    ids = [p for p in dataset.parcel_ids if dataset.label(p, target_year) is not None]
    dist = distributions_for(dataset, dist_year, ids, radius, index=index)
    seqs = build_sequences(dataset, target_year, T, features, dist)
    seqs.extras["dist_year"] = dist_year
    return seqs


def make_splits(dataset: Dataset, features, years=DEFAULT_YEARS, T: int = 10, radius: float = RADIUS_M) -> Splits:
    index = GridIndex(dataset.parcels)
    return Splits(*(make_sequences(dataset, features, y, T, radius, index=index) for y in years))
