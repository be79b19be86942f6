"""Synthetic parcels with Markov crop rotations and phenology-shaped signals.

Crop identity is recoverable from three partial sources:

* rotations: each region has its own sharpened random transition matrix;
  scores are shared by the two members of a phenology group, plus a bonus
  (``member_bonus``, varied per previous crop by ``bonus_spread``) for
  keeping the previous member, so only the crop history tells twins apart;
* signal shape: crops share one of ``ceil(K/2)`` double-logistic LAI
  profiles, so paired crops (``k`` and ``k + ceil(K/2)``) look almost alike;
* location: regions differ in their stationary crop mix.
"""
from __future__ import annotations

import configparser
import math
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from .data import SIGNALS, Dataset, LabelTaxonomy, ParcelRecord, RawSeries, write_dataset


@dataclass(frozen=True)
class SynthConfig:
    K: int = 10
    n_parcels: int = 5000
    first_year: int = 2011
    years: int = 10
    rs_start_year: int = 2016
    regions: int = 4
    alpha: float = 1.5
    member_bonus: float = 2.0
    bonus_spread: float = 0.5
    noise: float = 0.02
    cloud_gap_rate: float = 0.25
    spike_rate: float = 0.03
    region_spacing_m: float = 40_000.0
    region_sigma_m: float = 7_000.0
    twin_shift_days: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.K < 2:
            raise ValueError("K must be >= 2")
        if not 0 <= self.cloud_gap_rate < 1:
            raise ValueError("cloud_gap_rate must lie in [0, 1)")
        if not 0 <= self.bonus_spread <= 1:
            raise ValueError("bonus_spread must lie in [0, 1]")
        if self.years < 1 or self.n_parcels < 1 or self.regions < 1:
            raise ValueError("years, n_parcels and regions must be positive")

    @property
    def last_year(self) -> int:
        return self.first_year + self.years - 1


def synth_config_from_items(items, source: str = "[synth]", **overrides) -> SynthConfig:
    """Build a config from string ``(key, value)`` pairs; keys match case-insensitively."""
    by_lower = {f.name.lower(): f for f in fields(SynthConfig)}
    kwargs = {}
    for key, raw in items:
        f = by_lower.get(key.lower())
        if f is None:
            raise ValueError(f"{source}: unknown key {key!r}")
        kwargs[f.name] = float(raw) if f.type in ("float", float) else int(raw)
    kwargs.update({k: v for k, v in overrides.items() if v is not None})
    return SynthConfig(**kwargs)


def read_synth_config(path, section: str = "synth", **overrides) -> SynthConfig:
    """Read ``[synth]`` keys from an INI-style file; unknown keys are rejected."""
    parser = configparser.ConfigParser()
    parser.read(path)
    items = parser.items(section) if parser.has_section(section) else []
    return synth_config_from_items(items, f"{path} [{section}]", **overrides)


# ---------------------------------------------------------------- rotations

def transition_matrices(config: SynthConfig, rng: np.random.Generator | None = None) -> np.ndarray:
    """(regions, K, K) row-stochastic matrices ``softmax(alpha * S)``.

    ``S[a, b] = G[group(a), group(b)] + B[a] * [member(a) == member(b)]``
    with G ~ N(0, 1) per region, so twins share their scores and differ only
    through the member bonus. ``B[a]`` is ``member_bonus`` scaled by a factor
    drawn uniformly from ``1 -/+ bonus_spread`` per region and previous crop,
    which makes some histories far less telling than others.
    """
    rng = rng or np.random.default_rng([config.seed, 1])
    n_groups = math.ceil(config.K / 2)
    group = np.arange(config.K) % n_groups
    member = np.arange(config.K) >= n_groups
    G = rng.standard_normal((config.regions, n_groups, n_groups))
    bonus = config.member_bonus * rng.uniform(1 - config.bonus_spread, 1 + config.bonus_spread,
                                              size=(config.regions, config.K, 1))
    S = G[:, group][:, :, group] + bonus * (member[:, None] == member[None, :])
    logits = config.alpha * S
    logits -= logits.max(axis=2, keepdims=True)
    P = np.exp(logits)
    return P / P.sum(axis=2, keepdims=True)


def stationary(P: np.ndarray) -> np.ndarray:
    pi = np.full(P.shape[0], 1.0 / P.shape[0])
    for _ in range(500):
        pi = pi @ P
    return pi / pi.sum()


def sample_chain(P: np.ndarray, start: int, n: int, rng: np.random.Generator) -> np.ndarray:
    out = np.empty(n, dtype=np.int64)
    out[0] = start
    cum = np.cumsum(P, axis=1)
    for t in range(1, n):
        out[t] = min(int(np.searchsorted(cum[out[t - 1]], rng.random(), side="right")), P.shape[0] - 1)
    return out


def gen_rotations(config: SynthConfig, regions_of_parcels=None) -> dict[int, np.ndarray]:
    """Crop chains per parcel index: {parcel_index: codes for each year}."""
    P = transition_matrices(config)
    rng = np.random.default_rng([config.seed, 2])
    if regions_of_parcels is None:
        regions_of_parcels = np.arange(config.n_parcels) % config.regions
    starts = [stationary(P[r]) for r in range(config.regions)]
    out = {}
    for i, r in enumerate(regions_of_parcels):
        first = int(rng.choice(config.K, p=starts[r]))
        out[i] = sample_chain(P[r], first, config.years, rng)
    return out


# ---------------------------------------------------------------- phenology

@dataclass(frozen=True)
class Phenology:
    sos: float   # green-up inflection, days since October 1st
    eos: float   # senescence inflection
    amp: float   # LAI amplitude above the bare-soil base
    rate_up: float = 8.0
    rate_down: float = 10.0
    base: float = 0.3


def crop_phenology(config: SynthConfig) -> list[Phenology]:
    """Per-crop curve parameters; crops k and k + ceil(K/2) differ by ``twin_shift_days``."""
    n_groups = math.ceil(config.K / 2)
    rng = np.random.default_rng([config.seed, 3])
    sos = np.linspace(30, 230, n_groups) if n_groups > 1 else np.array([120.0])
    sos = rng.permutation(sos)
    length = rng.uniform(110, 170, n_groups)
    amp = rng.uniform(2.5, 6.0, n_groups)
    out = []
    for k in range(config.K):
        g = k % n_groups
        twin = k >= n_groups
        shift = config.twin_shift_days if twin else 0.0
        out.append(Phenology(sos[g] + shift, sos[g] + length[g] + shift, amp[g]))
    return out


def double_logistic(t, ph: Phenology) -> np.ndarray:
    t = np.asarray(t, dtype=np.float64)
    up = 1.0 / (1.0 + np.exp(-(t - ph.sos) / ph.rate_up))
    down = 1.0 / (1.0 + np.exp(-(t - ph.eos) / ph.rate_down))
    return np.maximum(ph.base + ph.amp * (up - down), 0.0)


def signals_from_lai(lai) -> np.ndarray:
    """(n, 4) B4, B8A, LAI, FAPAR implied by an LAI curve."""
    lai = np.asarray(lai, dtype=np.float64)
    fapar = 1.0 - np.exp(-0.5 * lai)
    b8a = 0.15 + 0.35 * fapar
    b4 = 0.12 - 0.09 * fapar
    return np.column_stack([b4, b8a, lai, fapar])


def jitter(ph: Phenology, rng: np.random.Generator) -> Phenology:
    return Phenology(ph.sos + rng.normal(0, 6), ph.eos + rng.normal(0, 6), ph.amp * (1 + rng.normal(0, 0.08)),
                     ph.rate_up, ph.rate_down, ph.base)


def sample_days(rng: np.random.Generator, season_len: int = 365) -> np.ndarray:
    days = [int(rng.integers(0, 5))]
    while True:
        nxt = days[-1] + int(rng.integers(3, 8))
        if nxt >= season_len:
            break
        days.append(nxt)
    return np.asarray(days)


def gen_signals(crop_code: int, season: int, config: SynthConfig, rng: np.random.Generator,
                phenology: list[Phenology] | None = None, parcel_id: str | None = None,
                return_truth: bool = False):
    """Noisy irregular samples of one parcel-season.

    With ``return_truth`` the noise-free curve parameters are returned too.
    """
    phenology = phenology or crop_phenology(config)
    ph = jitter(phenology[crop_code], rng)
    days = sample_days(rng)
    clean = signals_from_lai(double_logistic(days, ph))
    scale = np.array([1.0, 1.0, 5.0, 1.0])
    values = clean + rng.normal(0.0, config.noise, size=clean.shape) * scale
    keep = rng.random(len(days)) >= config.cloud_gap_rate
    spikes = rng.random(len(days)) < config.spike_rate
    values[spikes, 0] += rng.uniform(0.25, 0.45, spikes.sum())
    values[spikes, 1] += 0.15
    values[spikes, 2:] *= 0.3
    values[:, :2] = np.clip(values[:, :2], 0.0, 1.2)
    values[:, 2] = np.maximum(values[:, 2], 0.0)
    values[:, 3] = np.clip(values[:, 3], 0.0, 1.0)
    raw = RawSeries(days[keep], values[keep], parcel_id, season)
    if return_truth:
        return raw, ph
    return raw


# ---------------------------------------------------------------- dataset

def synthetic_taxonomy(K: int) -> LabelTaxonomy:
    """Pairs of fine codes per coarse class; the last coarse class is excluded at c10."""
    c28 = np.arange(K) // 2
    c12 = c28.copy()
    last = c12.max()
    c10 = np.where(c12 == last, -1, c12) if last > 0 else c12.copy()
    return LabelTaxonomy(c28, c12, c10, [f"crop{k:02d}" for k in range(K)])


def region_centers(config: SynthConfig) -> np.ndarray:
    side = math.ceil(math.sqrt(config.regions))
    idx = np.arange(config.regions)
    return np.column_stack([idx % side, idx // side]).astype(np.float64) * config.region_spacing_m + 100_000.0


def generate(config: SynthConfig) -> Dataset:
    """Build the synthetic :class:`Dataset` in memory."""
    rng = np.random.default_rng([config.seed, 4])
    regions = rng.integers(0, config.regions, size=config.n_parcels)
    centers = region_centers(config)
    xy = centers[regions] + rng.normal(0.0, config.region_sigma_m, size=(config.n_parcels, 2))
    area = np.maximum(np.exp(rng.normal(np.log(3.0), 0.6, size=config.n_parcels)), 0.5)
    width = len(str(config.n_parcels))
    ids = [f"P{i:0{width}d}" for i in range(config.n_parcels)]
    parcels = {pid: ParcelRecord(pid, float(x), float(y), float(a)) for pid, (x, y), a in zip(ids, xy, area)}

    chains = gen_rotations(config, regions)
    years = np.arange(config.first_year, config.last_year + 1)
    crops = {pid: {int(y): int(c) for y, c in zip(years, chains[i])} for i, pid in enumerate(ids)}

    phen = crop_phenology(config)
    rs: dict[str, dict[int, RawSeries]] = {}
    for i, pid in enumerate(ids):
        srng = np.random.default_rng([config.seed, 5, i])
        for y in years:
            if y >= config.rs_start_year:
                rs.setdefault(pid, {})[int(y)] = gen_signals(crops[pid][int(y)], int(y), config, srng, phen, pid)
    return Dataset(parcels, crops, rs, synthetic_taxonomy(config.K))


def gen_dataset(config: SynthConfig, out_dir) -> dict[str, Path]:
    """Write parcels.csv, crops.csv, rs.csv and taxonomy.csv to ``out_dir``."""
    return write_dataset(generate(config), out_dir)


def parcel_regions(dataset: Dataset, config: SynthConfig) -> dict[str, int]:
    centers = region_centers(config)
    out = {}
    for pid, p in dataset.parcels.items():
        out[pid] = int(np.argmin(np.sum((centers - (p.centroid_x, p.centroid_y)) ** 2, axis=1)))
    return out


__all__ = ["SynthConfig", "SIGNALS", "gen_rotations", "gen_signals", "gen_dataset", "generate"]
