from pathlib import Path

import numpy as np
import pytest

from mslstm import data as D
from mslstm import losses as L
from mslstm import model as M
from mslstm import numkernel as nk
from mslstm import train as T
from mslstm.cli import read_config_file
from mslstm.errors import ConfigError
from mslstm.gradcheck import numeric_grad

CONFIGS = Path(__file__).resolve().parents[1] / "configs"
SMOKE_DATA = D.GenConfig(n_classes=2, n_samples=4, k=5, d_ctx=4, d_act=4, ambiguity_horizon=2, seed=0)
SMOKE_DIMS = M.ModelDims(4, 4, 2, hidden=8)
# recorded from one run of the smoke configuration below
SMOKE_LOSSES = [5.5872131040620445, 5.579314317273572, 5.564444173711401, 5.54353132844016, 5.51745423042674]


def tiny(seed=0, n=12, arch="multistage", d_flow=0):
    ds = D.generate(D.GenConfig(n_classes=3, n_samples=n, k=4, d_ctx=3, d_act=2, d_flow=d_flow,
                                ambiguity_horizon=2, seed=seed))
    return ds, M.init_model(M.ModelDims(3, 2, 3, hidden=4, d_flow=d_flow), arch, seed=seed)


# --- sgd_step --------------------------------------------------------------

def test_sgd_zero_gradient_fixed_point():
    p = [np.array([1.0, -2.0]), np.ones((2, 2))]
    z = [np.zeros_like(a) for a in p]
    new_p, new_v = T.sgd_step(p, z, z, T.TrainConfig())
    for a, b in zip(p, new_p):
        np.testing.assert_array_equal(a, b)
    assert all(np.all(v == 0) for v in new_v)


def test_sgd_plain_gradient_descent():
    cfg = T.TrainConfig(learning_rate=0.1, momentum=0.0)
    theta, g = np.array([1.0, 2.0]), np.array([0.5, -4.0])
    (out,), _ = T.sgd_step([theta], [g], [np.zeros(2)], cfg)
    np.testing.assert_array_equal(out, theta - 0.1 * g)


def test_sgd_two_steps_on_quadratic():
    # f(x) = 1.5 x^2, grad 3x, with weight decay
    lr, mu, wd = 0.05, 0.9, 0.01
    cfg = T.TrainConfig(learning_rate=lr, momentum=mu, weight_decay=wd)
    x, v = np.array([2.0]), np.array([0.0])
    hx, hv = 2.0, 0.0
    for _ in range(2):
        (x,), (v,) = T.sgd_step([x], [3 * x], [v], cfg)
        hv = mu * hv - lr * (3 * hx + wd * hx)
        hx = hx + hv
    assert abs(x[0] - hx) <= 1e-12 and abs(v[0] - hv) <= 1e-12
    # v1 = -0.301, x1 = 1.699, v2 = -0.5265995
    assert abs(hx - 1.1724005) <= 1e-12


def test_sgd_shape_mismatch():
    with pytest.raises(ValueError):
        T.sgd_step([np.zeros(2)], [np.zeros(3)], [np.zeros(2)], T.TrainConfig())


def test_clip_by_global_norm():
    g = [np.array([3.0]), np.array([4.0])]
    out = T.clip_by_global_norm(g, 1.0)
    np.testing.assert_allclose([out[0][0], out[1][0]], [0.6, 0.8], atol=1e-15)
    assert T.clip_by_global_norm(g, 10.0) is g and T.clip_by_global_norm(g, 0) is g


# --- config ----------------------------------------------------------------

@pytest.mark.parametrize("bad", [dict(learning_rate=0), dict(momentum=1.0), dict(batch_size=0),
                                 dict(epochs=-1), dict(threads=0)])
def test_config_validation(bad):
    with pytest.raises(ConfigError):
        T.TrainConfig(**bad)


def test_config_from_mapping():
    cfg = T.TrainConfig.from_mapping({"learning-rate": "0.5", "epochs": "3", "loss": "egl"})
    assert (cfg.learning_rate, cfg.epochs, cfg.loss) == (0.5, 3, L.LossKind.EGL)
    with pytest.raises(ConfigError):
        T.TrainConfig.from_mapping({"learning_rte": "0.5"})
    with pytest.raises(ConfigError):
        T.TrainConfig.from_mapping({"epochs": "many"})


def test_defaults_follow_published_hyperparameters():
    cfg = T.TrainConfig()
    assert (cfg.learning_rate, cfg.momentum, cfg.batch_size) == (0.01, 0.9, 32)
    assert cfg.loss is L.LossKind.PLGL and cfg.weight_decay == 0.0


# --- gradients -------------------------------------------------------------

def test_batch_gradient_matches_finite_differences():
    ds, m = tiny()
    rng = np.random.default_rng(0)
    for p in m.parameters():
        p.data += rng.uniform(-0.3, 0.3, size=p.shape)
    idx = [2, 7]
    grads, per = T.batch_gradients(m, ds, idx, "plgl")
    ctx, act, _, labels = ds.batch(idx)
    y = L.one_hot_targets(labels, 4, 3)
    f = lambda: L.loss_total(*M.forward(m, ctx, act), y, "plgl")
    assert abs(per.mean() - f().item()) <= 1e-12
    num = numeric_grad(f, m.parameters())
    for a, n in zip(grads, num):
        err = np.max(np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-6))
        assert err <= 1e-4


def test_threaded_gradients_match_single():
    ds, m = tiny(d_flow=2)
    g1, l1 = T.batch_gradients(m, ds, range(12), "egl", threads=1)
    g4, l4 = T.batch_gradients(m, ds, range(12), "egl", threads=4)
    np.testing.assert_allclose(l1, l4, rtol=0, atol=1e-12)
    for a, b in zip(g1, g4):
        np.testing.assert_allclose(a, b, rtol=0, atol=1e-12)


# --- train -----------------------------------------------------------------

def test_epochs_zero_returns_unchanged_copy():
    ds, m = tiny()
    out, hist = T.train(m, ds, T.TrainConfig(epochs=0))
    assert hist == [] and out is not m
    for a, b in zip(m.parameters(), out.parameters()):
        np.testing.assert_array_equal(a.data, b.data)


def test_train_does_not_touch_input_model():
    ds, m = tiny()
    before = [p.data.copy() for p in m.parameters()]
    T.train(m, ds, T.TrainConfig(epochs=2, batch_size=5))
    for a, b in zip(before, m.parameters()):
        np.testing.assert_array_equal(a, b.data)


def test_history_length_and_finite():
    ds, m = tiny()
    seen = []
    _, hist = T.train(m, ds, T.TrainConfig(epochs=3, batch_size=5), on_epoch=seen.append)
    assert [h.epoch for h in hist] == [1, 2, 3] and seen == hist
    assert all(np.isfinite(h.loss) and 0 <= h.train_acc <= 1 for h in hist)
    assert hist[-1].train_acc == T.accuracy(T.train(m, ds, T.TrainConfig(epochs=3, batch_size=5))[0], ds)


def test_smoke_config_files_match_recorded_run():
    d, t = read_config_file(CONFIGS / "smoke_data.cfg"), read_config_file(CONFIGS / "smoke_train.cfg")
    assert (int(d["classes"]), int(d["samples"]), int(d["frames"])) == (2, 4, 5)
    assert (int(t["hidden"]), int(t["epochs"]), float(t["lr"])) == (8, 5, 0.01)


def test_smoke_loss_decreases_over_five_epochs():
    ds = D.generate(SMOKE_DATA)
    m = M.init_model(SMOKE_DIMS, "multistage", seed=0)
    _, hist = T.train(m, ds, T.TrainConfig(epochs=5, batch_size=4, learning_rate=0.01))
    losses = [h.loss for h in hist]
    assert all(b < a for a, b in zip(losses, losses[1:]))
    np.testing.assert_allclose(losses, SMOKE_LOSSES, rtol=0, atol=1e-9)


def test_single_threaded_training_bit_reproducible():
    ds, m = tiny()
    cfg = T.TrainConfig(epochs=3, batch_size=5, seed=4)
    a, ha = T.train(m, ds, cfg)
    b, hb = T.train(m, ds, cfg)
    assert M.checkpoint_bytes(a) == M.checkpoint_bytes(b)
    assert [h.loss for h in ha] == [h.loss for h in hb]


def test_threaded_training_within_tolerance():
    ds, m = tiny(n=10)
    _, h1 = T.train(m, ds, T.TrainConfig(epochs=3, batch_size=4))
    _, h3 = T.train(m, ds, T.TrainConfig(epochs=3, batch_size=4, threads=3))
    for a, b in zip(h1, h3):
        assert abs(a.loss - b.loss) <= 1e-9


def test_shuffle_seed_changes_trajectory():
    ds, m = tiny()
    _, a = T.train(m, ds, T.TrainConfig(epochs=2, batch_size=5, seed=0))
    _, b = T.train(m, ds, T.TrainConfig(epochs=2, batch_size=5, seed=1))
    assert a[-1].loss != b[-1].loss


def test_frame_selection_applied():
    ds, m = tiny()
    _, hist = T.train(m, ds, T.TrainConfig(epochs=1, frames=2, frame_selection="random"))
    assert len(hist) == 1


def test_dims_mismatch():
    ds, _ = tiny()
    m = M.init_model(M.ModelDims(3, 3, 3, hidden=4), "multistage")
    with pytest.raises(ConfigError, match=r"\(3, 2, 0, 3\).*\(3, 3, 0, 3\)"):
        T.train(m, ds, T.TrainConfig(epochs=1))


def test_accuracy_counting_oracle():
    ds, m = tiny(seed=3)
    hits = sum(M.predict(m, s.ctx.astype(np.float64), s.act.astype(np.float64)) == s.label for s in ds)
    assert T.accuracy(m, ds, batch_size=5) == hits / len(ds)
    with nk.no_grad():
        assert T.accuracy(m, ds, "last") == sum(
            M.predict(m, s.ctx.astype(np.float64), s.act.astype(np.float64), pooling="last") == s.label
            for s in ds) / len(ds)
