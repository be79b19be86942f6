import numpy as np
import pytest

from croprot.nn.checkpoint import AdamState, load_checkpoint, save_checkpoint
from croprot.nn.model import Dims, init_params
from croprot.pipeline import compute_features, make_splits
from croprot.synth import SynthConfig, generate
from croprot.train import TrainConfig, adam_step, predict, run_epoch, train

DIMS6 = Dims(V=6, d_e=4, d_rs=8, d_w=6, d_att=6, d_y=12)


@pytest.fixture(scope="module")
def splits6():
    ds = generate(SynthConfig(K=6, n_parcels=200, seed=5))
    return make_splits(ds, compute_features(ds))


def _cfg(**kw):
    base = dict(variant="Final", dims=DIMS6, batch_size=32, max_epochs=3, patience=3, seed=2)
    base.update(kw)
    return TrainConfig(**base)


# ---------------------------------------------------------------- Adam

def _params_with_grad(value):
    p = init_params("LSTM_Crop", Dims(V=3, d_e=2, d_y=2), 0, dtype=np.float64)
    for g in p.grads.values():
        g[...] = value
    return p


def test_adam_zero_gradient_is_noop():
    p = _params_with_grad(0.0)
    before = {k: t.copy() for k, t in p.tensors.items()}
    adam_step(p, AdamState.zeros_like(p), lr=0.1)
    for k, t in p.tensors.items():
        np.testing.assert_array_equal(t, before[k])


def test_adam_first_step_closed_form():
    p = _params_with_grad(0.5)
    before = {k: t.copy() for k, t in p.tensors.items()}
    lr, eps = 1e-3, 1e-8
    adam_step(p, AdamState.zeros_like(p), lr=lr, eps=eps)
    # first bias-corrected step is lr * g / (|g| + eps)
    for k, t in p.tensors.items():
        np.testing.assert_allclose(before[k] - t, lr * 0.5 / (0.5 + eps), rtol=1e-10)


def test_adam_constant_gradient_step_tends_to_lr():
    p = _params_with_grad(-2.0)
    state = AdamState.zeros_like(p)
    for _ in range(200):
        before = p.tensors["out.b"].copy()
        adam_step(p, state, lr=1e-2)
        for g in p.grads.values():
            g[...] = -2.0
    np.testing.assert_allclose(p.tensors["out.b"] - before, 1e-2, rtol=1e-6)


# ---------------------------------------------------------------- training loop

def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(variant="nope")
    with pytest.raises(ValueError):
        TrainConfig(patience=10, max_epochs=5)
    with pytest.raises(ValueError):
        TrainConfig(lr=0)


def test_patience_zero_runs_one_epoch(splits6):
    r = train(splits6.train, splits6.dev, _cfg(patience=0, max_epochs=5))
    assert len(r.log) == 1 and r.best_epoch == 1


def test_loss_decreases_early(splits6):
    r = train(splits6.train, splits6.dev, _cfg(max_epochs=3, patience=3, lr=3e-3))
    losses = [rec.train_loss for rec in r.log]
    assert len(losses) == 3 and losses[0] > losses[1] > losses[2]


def test_training_is_deterministic(splits6, tmp_path):
    a = train(splits6.train, splits6.dev, _cfg())
    b = train(splits6.train, splits6.dev, _cfg())
    strip = lambda res: [(r.epoch, r.train_loss, r.dev_acc, r.dev_macro_f1) for r in res.log]
    assert strip(a) == strip(b)
    save_checkpoint(tmp_path / "a.rota", a.params, a.adam)
    save_checkpoint(tmp_path / "b.rota", b.params, b.adam)
    assert (tmp_path / "a.rota").read_bytes() == (tmp_path / "b.rota").read_bytes()


def test_resume_matches_uninterrupted(splits6, tmp_path):
    cfg = _cfg(variant="HierbiLSTM_MM")
    p = init_params(cfg.variant, DIMS6, cfg.seed)
    s = AdamState.zeros_like(p)
    for epoch in (1, 2, 3, 4):
        run_epoch(p, s, splits6.train, cfg, epoch)

    q = init_params(cfg.variant, DIMS6, cfg.seed)
    r = AdamState.zeros_like(q)
    for epoch in (1, 2):
        run_epoch(q, r, splits6.train, cfg, epoch)
    save_checkpoint(tmp_path / "mid.rota", q, r)
    q, r = load_checkpoint(tmp_path / "mid.rota")
    for epoch in (3, 4):
        run_epoch(q, r, splits6.train, cfg, epoch)
    assert r.t == s.t
    for k in p.tensors:
        np.testing.assert_array_equal(q.tensors[k], p.tensors[k])
        np.testing.assert_array_equal(r.v[k], s.v[k])


def test_resume_through_train(splits6):
    cfg = _cfg(variant="LSTM_RS", max_epochs=4, patience=4)
    full = train(splits6.train, splits6.dev, cfg)
    p = init_params(cfg.variant, DIMS6, cfg.seed)
    s = AdamState.zeros_like(p)
    for epoch in (1, 2):
        run_epoch(p, s, splits6.train, cfg, epoch)
    rest = train(splits6.train, splits6.dev, cfg, params=p, adam=s, first_epoch=3)
    assert [r.train_loss for r in rest.log] == [r.train_loss for r in full.log[2:]]


def test_best_epoch_is_returned(splits6):
    r = train(splits6.train, splits6.dev, _cfg(max_epochs=6, patience=6, lr=2e-2))
    accs = [rec.dev_acc for rec in r.log]
    assert r.best_epoch == 1 + int(np.argmax(accs))
    probs = predict(r.params, splits6.dev)
    acc = float(np.mean(np.argmax(probs, axis=1) == splits6.dev.targets))
    assert acc == pytest.approx(max(accs))


# ---------------------------------------------------------------- prediction

def test_predict_independent_of_batch_size(splits6):
    params = init_params("Final", DIMS6, 7)
    a = predict(params, splits6.test, batch_size=1)
    b = predict(params, splits6.test, batch_size=64)
    np.testing.assert_array_equal(a, b)


def test_cutoff_365_is_full_season(splits6):
    params = init_params("HierbiLSTM_RS", DIMS6, 7)
    np.testing.assert_array_equal(predict(params, splits6.test, cutoff_day=365), predict(params, splits6.test))
    assert not np.array_equal(predict(params, splits6.test, cutoff_day=165), predict(params, splits6.test))


def test_crop_only_ignores_cutoff(splits6):
    params = init_params("LSTM_Crop", DIMS6, 7)
    np.testing.assert_array_equal(predict(params, splits6.test, cutoff_day=165), predict(params, splits6.test))


def test_predict_rejects_wrong_vocabulary(splits6):
    params = init_params("LSTM_Crop", Dims(V=4, d_e=2, d_y=2), 0)
    with pytest.raises(ValueError):
        predict(params, splits6.test)
