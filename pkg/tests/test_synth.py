import math

import numpy as np
import pytest

from croprot.cropdist import distributions_for
from croprot.data import build_sequences, load_dataset, SIGNAL_RANGES, SIGNALS
from croprot.features import WINDOWS
from croprot.prep import GRID_DAYS, hampel_filter, prep_season
from croprot.synth import (Phenology, SynthConfig, crop_phenology, double_logistic, gen_dataset, gen_rotations,
                           gen_signals, generate, parcel_regions, read_synth_config, sample_chain,
                           signals_from_lai, synthetic_taxonomy, transition_matrices)


def test_config_validation():
    with pytest.raises(ValueError):
        SynthConfig(K=1)
    with pytest.raises(ValueError):
        SynthConfig(cloud_gap_rate=1.0)


@pytest.mark.parametrize("alpha", [0.0, 1.5, 50.0])
def test_transition_rows_sum_to_one(alpha):
    P = transition_matrices(SynthConfig(alpha=alpha))
    assert P.shape == (4, 10, 10) and np.all(P >= 0)
    np.testing.assert_allclose(P.sum(axis=2), 1, atol=1e-12)


def test_alpha_zero_uniform_transitions():
    cfg = SynthConfig(alpha=0.0, K=10)
    P = transition_matrices(cfg)[0]
    chain = sample_chain(P, 0, 100_001, np.random.default_rng(9))
    counts = np.zeros((10, 10))
    np.add.at(counts, (chain[:-1], chain[1:]), 1)
    expected = counts.sum(axis=1, keepdims=True) / 10
    chi2 = float(((counts - expected) ** 2 / expected).sum())
    df = 10 * 9
    assert abs(chi2 - df) < 3 * math.sqrt(2 * df)


def test_large_alpha_deterministic():
    cfg = SynthConfig(alpha=1e4, n_parcels=50)
    P = transition_matrices(cfg)
    nxt = P.argmax(axis=2)
    assert np.all(P.max(axis=2) > 1 - 1e-9)
    regions = np.arange(cfg.n_parcels) % cfg.regions
    for i, chain in gen_rotations(cfg, regions).items():
        np.testing.assert_array_equal(chain[1:], nxt[regions[i]][chain[:-1]])
        # a deterministic chain over K states revisits a state within K steps
        assert len(set(chain.tolist())) <= cfg.K


def test_same_seed_same_data():
    a, b = generate(SynthConfig(n_parcels=30, seed=4)), generate(SynthConfig(n_parcels=30, seed=4))
    c = generate(SynthConfig(n_parcels=30, seed=5))
    assert a.crops == b.crops and a.crops != c.crops
    for pid in a.rs:
        for s in a.rs[pid]:
            np.testing.assert_array_equal(a.rs[pid][s].values, b.rs[pid][s].values)
            np.testing.assert_array_equal(a.rs[pid][s].days, b.rs[pid][s].days)


def test_noise_free_reconstruction():
    cfg = SynthConfig(noise=0.0, cloud_gap_rate=0.0, spike_rate=0.0)
    phen = crop_phenology(cfg)
    for k in range(cfg.K):
        raw, truth = gen_signals(k, 2018, cfg, np.random.default_rng([k]), phen, "p", return_truth=True)
        smooth = prep_season(raw)
        inside = (GRID_DAYS >= raw.days[0]) & (GRID_DAYS <= raw.days[-1])
        ref = signals_from_lai(double_logistic(GRID_DAYS, truth))
        err = np.abs(smooth.values - ref)[inside].max(axis=0)
        assert err[0] < 1e-3
        assert np.all(err < 0.015 * np.ptp(ref, axis=0))


def test_injected_spike_is_flagged():
    cfg = SynthConfig(noise=0.005, cloud_gap_rate=0.0, spike_rate=0.0)
    raw = gen_signals(2, 2018, cfg, np.random.default_rng(1))
    b4 = raw.signal("b4").copy()
    mid = len(b4) // 2
    b4[mid] += 0.3
    mask = hampel_filter(b4, raw.days)
    assert mask[mid]
    assert not hampel_filter(raw.signal("b4"), raw.days)[mid]


def test_generated_spikes_are_flagged():
    cfg = SynthConfig(cloud_gap_rate=0.0, spike_rate=0.05, noise=0.01)
    hits = total = 0
    for i in range(40):
        rng = np.random.default_rng([7, i])
        raw = gen_signals(i % cfg.K, 2018, cfg, rng)
        clean = gen_signals(i % cfg.K, 2018, SynthConfig(cloud_gap_rate=0.0, spike_rate=0.0, noise=0.01),
                            np.random.default_rng([7, i]))
        spikes = raw.signal("b4") - clean.signal("b4") > 0.2
        hits += int((hampel_filter(raw.signal("b4"), raw.days) & spikes).sum())
        total += int(spikes.sum())
    assert total > 0 and hits / total > 0.9


def test_shifted_peaks_separate_windows():
    sigma = SynthConfig().noise * 5   # LAI noise scale
    a = Phenology(60.0, 180.0, 4.0)
    b = Phenology(120.0, 240.0, 4.0)
    ca, cb = double_logistic(GRID_DAYS, a), double_logistic(GRID_DAYS, b)
    diff = np.array([abs(ca[w].mean() - cb[w].mean()) for w in WINDOWS])
    assert (diff > 2 * sigma).sum() >= 5


def test_values_in_range(small_dataset):
    for per in small_dataset.rs.values():
        for raw in per.values():
            for j, name in enumerate(SIGNALS):
                lo, hi = SIGNAL_RANGES[name]
                col = raw.values[:, j]
                assert np.all((col >= lo) & (col <= hi))
            assert np.all(np.diff(raw.days) > 0) and raw.days[0] >= 0 and raw.days[-1] < 365


def test_taxonomy_shape():
    tax = synthetic_taxonomy(10)
    assert tax.n_classes("c12") == 5 and tax.n_classes("c10") == 4
    assert np.all(np.bincount(tax.map12) >= 2) and (tax.map10 == -1).sum() == 2


def test_files_round_trip(tmp_path):
    cfg = SynthConfig(K=10, n_parcels=5000, years=10, regions=4, seed=0)
    paths = gen_dataset(cfg, tmp_path)
    ds = load_dataset(paths["parcels"], paths["crops"], paths["rs"], paths["taxonomy"])
    ref = generate(cfg)
    assert len(ds.parcels) == 5000 and ds.V == 10
    assert ds.crops == ref.crops
    pid = ds.parcel_ids[17]
    np.testing.assert_allclose(ds.rs[pid][2019].values, ref.rs[pid][2019].values, atol=1e-5)  # six significant digits in the CSV


def test_regions_separate_by_distribution():
    cfg = SynthConfig(n_parcels=600, seed=2)
    ds = generate(cfg)
    region = parcel_regions(ds, cfg)
    dist = distributions_for(ds, 2019)
    ids = sorted(dist)
    X = np.stack([dist[p] for p in ids])
    r = np.array([region[p] for p in ids])
    D = np.abs(X[:, None] - X[None]).sum(axis=2)
    same = r[:, None] == r[None]
    off = ~np.eye(len(ids), dtype=bool)
    assert D[same & off].mean() < D[~same].mean()


def test_short_history_pads():
    cfg = SynthConfig(n_parcels=20, years=4, first_year=2017, rs_start_year=2017)
    ds = generate(cfg)
    seqs = build_sequences(ds, 2020, T=10)
    V = ds.V
    assert np.all(seqs.prev_crops[:, :7] == V)
    assert np.all(seqs.prev_crops[:, 7:] < V)
    assert np.all(seqs.labels[:, :6] == V) and np.all(seqs.labels[:, 6:] < V)


def test_read_config(tmp_path):
    path = tmp_path / "synth.ini"
    path.write_text("[synth]\nK = 6\nalpha = 2.5\nn_parcels = 40\n")
    cfg = read_synth_config(path, seed=8)
    assert (cfg.K, cfg.alpha, cfg.n_parcels, cfg.seed) == (6, 2.5, 40, 8)
    path.write_text("[synth]\nbogus = 1\n")
    with pytest.raises(ValueError):
        read_synth_config(path)


def test_bonus_spread_controls_row_variation():
    def stay_log_odds(spread):
        cfg = SynthConfig(bonus_spread=spread, alpha=1.0)
        P = transition_matrices(cfg)[0]
        k = np.arange(cfg.K)
        twin = (k + 5) % 10
        # same group, same member vs same group, other member: only the bonus differs
        return np.log(P[k, k] / P[k, twin])

    np.testing.assert_allclose(stay_log_odds(0.0), 2.0, atol=1e-12)
    varied = stay_log_odds(0.5)
    assert varied.min() >= 1.0 - 1e-12 and varied.max() <= 3.0 + 1e-12 and np.ptp(varied) > 0.5
    with pytest.raises(ValueError):
        SynthConfig(bonus_spread=1.5)
