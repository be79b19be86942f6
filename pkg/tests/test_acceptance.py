"""End-to-end acceptance checks; each prints one PASS/FAIL line.

The synthetic benchmark (K=10, 5000 parcels, 10 years, 4 regions) is built
once per session. Models use reduced widths so the whole suite runs on a
single laptop core.
"""
import tempfile
import time
from pathlib import Path

import numpy as np
import pytest

from croprot.cli import default_workers
from croprot.cropdist import GridIndex
from croprot.data import ParcelRecord
from croprot.evaluate import SWEEP_CUTOFFS, evaluate, evaluate_thresholded, inseason_sweep, metrics_from_labels
from croprot.features import features_all, save_feature_cache
from croprot.nn.checkpoint import dumps, load_checkpoint, save_checkpoint
from croprot.nn.gradcheck import check_all
from croprot.nn.model import Dims, batch_from_sequences, forward
from croprot.pipeline import compute_features, make_splits
from croprot.prep import prep_all, save_smooth_cache, whittaker_residual, whittaker_smooth
from croprot.synth import SynthConfig, generate
from croprot.train import TrainConfig, predict, train

from test_evaluate import brute_force_agreement
from test_prep import whittaker_exact

BENCH = SynthConfig(K=10, n_parcels=5000, years=10, regions=4, seed=0)
DIMS = Dims(V=10, d_e=16, d_rs=32, d_w=32, d_att=32, d_y=64)
TRAIN = dict(dims=DIMS, batch_size=64, max_epochs=20, patience=4, seed=1)
LEVEL = "c10"
TIME_BUDGET_S = 30 * 60


# ---------------------------------------------------------------- unit-level criteria

def test_gradient_correctness(acceptance):
    t0 = time.perf_counter()
    reports = check_all()
    elapsed = time.perf_counter() - t0
    ok = all(r.passed for r in reports) and len(reports) == 7 and elapsed < 60
    worst = max(r.max_error for r in reports)
    frac = min(r.frac_below_1e4 for r in reports)
    assert acceptance("gradient check", ok,
                      f"7 variants, min frac<1e-4 {frac:.4f}, max rel err {worst:.2e}, {elapsed:.1f}s")


def _residuals(log10_lams):
    rng = np.random.default_rng(5)
    worst = 0.0
    for lam in 10.0 ** np.asarray(log10_lams):
        y = rng.random(183)
        w = (rng.random(183) > 0.2).astype(float)
        worst = max(worst, whittaker_residual(y, w, lam, whittaker_smooth(y, w, lam)))
    return worst


def test_whittaker_solver(acceptance):
    rng = np.random.default_rng(3)
    y = rng.random(183)
    identity = np.array_equal(whittaker_smooth(y, np.ones(183), 0.0), y)
    t = np.arange(183.0)
    line = np.polyval(np.polyfit(t, y, 1), t)
    line_err = float(np.max(np.abs(whittaker_smooth(y, np.ones(183), 1e12) - line)))
    rel = 0.0
    for _ in range(40):
        n = int(rng.integers(3, 51))
        yy = rng.normal(size=n)
        w = (rng.random(n) > 0.3).astype(float)
        w[:2] = 1.0
        lam = 10.0 ** rng.uniform(-2, 6)
        ref = whittaker_exact(yy, w, lam)
        rel = max(rel, np.max(np.abs(whittaker_smooth(yy, w, lam) - ref)) / np.max(np.abs(ref)))
    res = _residuals(np.arange(-2, 7.5, 0.5))
    ok = identity and line_err < 1e-6 and rel < 1e-10 and res <= 1e-8
    assert acceptance("whittaker solver", ok,
                      f"identity exact {identity}, 1e12 vs LS line {line_err:.1e}, banded vs exact {rel:.1e}, "
                      f"residual (lambda 1e-2..1e7) {res:.1e}")


@pytest.mark.xfail(strict=True, reason="float64 rounding of the solution alone exceeds 1e-8 for lambda > ~1e7")
def test_whittaker_residual_full_grid(acceptance):
    res = _residuals(np.arange(7.5, 12.5, 0.5))
    assert acceptance("whittaker residual, lambda 10^7.5..10^12", res <= 1e-8,
                      f"max residual {res:.1e} (unattainable in float64; see notes)")


def test_metrics_oracle(acceptance):
    mismatches = brute_force_agreement(1000, seed=0)
    rep = metrics_from_labels(np.array([0, 0, 1, 1]), np.array([0, 0, 0, 1]), 2)
    worked = round(rep.macro_f1, 4) == 0.7333 and rep.accuracy == 0.75
    assert acceptance("metrics oracle", mismatches == 0 and worked,
                      f"{mismatches} mismatches over 1000 sets, worked example macro-F1 {rep.macro_f1:.4f} "
                      f"accuracy {rep.accuracy}")


def test_spatial_index(acceptance):
    rng = np.random.default_rng(0)
    xy = rng.uniform(0, 60_000, size=(1000, 2))
    idx = GridIndex([ParcelRecord(f"p{i:04d}", float(x), float(y), 1.0) for i, (x, y) in enumerate(xy)])
    bad = 0
    for i in range(1000):
        d = np.hypot(*(idx.xy - idx.xy[i]).T)
        bad += set(idx.query(*idx.xy[i], 10_000).tolist()) != set(np.flatnonzero(d <= 10_000).tolist())
    assert acceptance("spatial index", bad == 0, f"{bad} of 1000 radius queries differ from the O(n^2) scan")


# ---------------------------------------------------------------- synthetic benchmark

class Bench:
    def __init__(self):
        t0 = time.perf_counter()
        self.dataset = generate(BENCH)
        self.features = compute_features(self.dataset, workers=default_workers())
        self.splits = make_splits(self.dataset, self.features)
        self.prep_s = time.perf_counter() - t0
        self.train_eval_s = 0.0
        self.results = {}

    def run(self, variant, augment=False):
        key = (variant, augment)
        if key not in self.results:
            t0 = time.perf_counter()
            res = train(self.splits.train, self.splits.dev, TrainConfig(variant=variant, augment=augment, **TRAIN))
            probs = predict(res.params, self.splits.test)
            self.train_eval_s += time.perf_counter() - t0
            self.results[key] = (res, probs)
        return self.results[key]

    def score(self, variant, augment=False, level=LEVEL):
        _, probs = self.run(variant, augment)
        return 100 * evaluate(probs, self.splits.test.targets, self.dataset.taxonomy, level).micro_f1

    def sweep(self, variant, augment=False):
        res, _ = self.run(variant, augment)
        t0 = time.perf_counter()
        out = inseason_sweep(res.params, self.splits.test, self.dataset.taxonomy, SWEEP_CUTOFFS, LEVEL)
        self.train_eval_s += time.perf_counter() - t0
        return np.array(out.micro_f1) * 100


@pytest.fixture(scope="module")
def bench():
    return Bench()


def test_fusion_beats_single_sources(bench, acceptance):
    scores = {v: bench.score(v) for v in ("LSTM_Crop", "HierbiLSTM_RS", "LSTM_MM", "HierbiLSTM_MM", "Final")}
    a = scores["Final"] - max(scores["LSTM_Crop"], scores["HierbiLSTM_RS"])
    ok_a = a >= 5.0
    ok_b = scores["HierbiLSTM_MM"] >= scores["LSTM_MM"]
    detail = ", ".join(f"{k} {v:.1f}" for k, v in scores.items())
    acceptance("fusion margin over single sources", ok_a, f"c10 micro-F1: {detail}; margin {a:.1f} >= 5")
    acceptance("hierarchical vs flat multimodal", ok_b,
               f"HierbiLSTM_MM {scores['HierbiLSTM_MM']:.1f} >= LSTM_MM {scores['LSTM_MM']:.1f}")
    assert ok_a and ok_b


def test_confidence_filter_direction(bench, acceptance):
    _, probs = bench.run("Final")
    tax, y = bench.dataset.taxonomy, bench.splits.test.targets
    lines = []
    ok = True
    for level in ("c12", "c10"):
        full = evaluate(probs, y, tax, level)
        kept = evaluate_thresholded(probs, y, tax, level, 0.9)
        good = kept.accuracy >= full.accuracy and 0.5 < kept.coverage < 1.0
        ok &= good
        lines.append(f"{level} accuracy {100 * full.accuracy:.1f} -> {100 * kept.accuracy:.1f} "
                     f"at coverage {100 * kept.coverage:.1f}%")
    assert acceptance("confidence filter (tau 0.9)", ok, "; ".join(lines))


def test_inseason_direction(bench, acceptance):
    aug = bench.sweep("Final", augment=True)
    plain = bench.sweep("Final", augment=False)
    crop = bench.sweep("LSTM_Crop")
    end_of_season = bench.score("Final")
    cut = np.array(SWEEP_CUTOFFS)
    # first cutoff from which the augmented curve stays above the crop-only curve
    above = aug > crop
    start = next((int(c) for i, c in enumerate(cut) if above[i:].all()), None)
    ok_end = abs(aug[-1] - end_of_season) <= 1.0
    ok_mid = start is not None and start <= 365 / 2
    ok_early = plain[0] < aug[0]
    acceptance("in-season: augmented end-of-season", ok_end,
               f"augmented at 365 {aug[-1]:.1f} vs end-of-season {end_of_season:.1f}")
    acceptance("in-season: beats crop-only by mid-season", ok_mid,
               f"above flat LSTM_Crop {crop[0]:.1f} from day {start}")
    acceptance("in-season: truncation training helps early", ok_early,
               f"day {cut[0]}: without {plain[0]:.1f} < with {aug[0]:.1f}")
    table = "  ".join(f"{c}:{a:.1f}/{p:.1f}" for c, a, p in zip(cut, aug, plain))
    print(f"       cutoff: augmented/plain  {table}")
    assert ok_end and ok_mid and ok_early


def test_time_budget(bench, acceptance):
    for key in [("LSTM_Crop", False), ("HierbiLSTM_RS", False), ("LSTM_MM", False), ("HierbiLSTM_MM", False),
                ("Final", False), ("Final", True)]:
        bench.run(*key)
    total = bench.train_eval_s
    assert acceptance("train + eval time", total < TIME_BUDGET_S,
                      f"{total / 60:.1f} min for 6 trainings and evaluations "
                      f"(data + preprocessing {bench.prep_s / 60:.1f} min)")


def test_determinism(bench, acceptance):
    small = bench.splits.train.subset(np.arange(400))
    dev = bench.splits.dev.subset(np.arange(200))
    cfg = TrainConfig(variant="Final", dims=DIMS, batch_size=64, max_epochs=2, patience=2, seed=4)
    a, b = train(small, dev, cfg), train(small, dev, cfg)
    same_ckpt = dumps(a.params, a.adam) == dumps(b.params, b.adam)
    tax, test = bench.dataset.taxonomy, bench.splits.test
    rep = lambda r: evaluate(predict(r.params, test), test.targets, tax, LEVEL).to_json()  # noqa: E731
    same_report = rep(a) == rep(b)

    series = [s for s in bench.dataset.iter_series()][:300]
    blobs = []
    for workers in (1, 2):
        smooth = prep_all(series, workers=workers)
        feats = features_all(smooth, workers=workers)
        with tempfile.TemporaryDirectory() as tmp:
            save_smooth_cache(Path(tmp) / "s.rssm", smooth.values())
            save_feature_cache(Path(tmp) / "f.feat", feats)
            blobs.append(((Path(tmp) / "s.rssm").read_bytes(), (Path(tmp) / "f.feat").read_bytes()))
    same_workers = blobs[0] == blobs[1]
    ok = same_ckpt and same_report and same_workers
    assert acceptance("determinism", ok, f"checkpoints identical {same_ckpt}, reports identical {same_report}, "
                                         f"caches identical for 1 and 2 workers {same_workers}")


def test_checkpoint_round_trip(bench, acceptance, tmp_path):
    res, _ = bench.run("Final")
    save_checkpoint(tmp_path / "final.rota", res.params, res.adam)
    back, _ = load_checkpoint(tmp_path / "final.rota")
    batch = batch_from_sequences(bench.splits.test)
    same = np.array_equal(forward(back, batch).logits, forward(res.params, batch).logits)
    assert acceptance("checkpoint round trip", same, f"forward logits bit-identical on {len(batch)} test parcels")
