import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mslstm import losses as L
from mslstm import numkernel as nk
from mslstm.errors import DimensionError
from mslstm.gradcheck import check

KINDS = list(L.LossKind)


def direct(pred, y, fn_w, fp_w):
    """Spreadsheet-style evaluation with explicit loops."""
    T, N = pred.shape
    total = 0.0
    for t in range(T):
        for k in range(N):
            p = min(max(pred[t, k], L.EPS), 1 - L.EPS)
            total += fn_w[t] * y[t, k] * math.log(p) + fp_w[t] * (1 - y[t, k]) * math.log(1 - p)
    return -total / N


def random_probs(rng, T, N):
    z = rng.normal(size=(T, N))
    e = np.exp(z - z.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def test_time_weights():
    fn, fp = L.time_weights("ce", 4)
    assert fn.tolist() == [0, 0, 0, 1] and fp.tolist() == [0, 0, 0, 1]
    fn, fp = L.time_weights("egl", 3)
    assert fn[-1] == 1.0 and abs(fn[-2] - 0.36787944117144233) < 1e-15
    fn, fp = L.time_weights("lgl", 4)
    assert fn.tolist() == [0.25, 0.5, 0.75, 1.0] == fp.tolist()
    fn, fp = L.time_weights("plgl", 4)
    assert fn.tolist() == [1, 1, 1, 1] and fp.tolist() == [0.25, 0.5, 0.75, 1.0]


def test_ce_uniform_two_classes_is_log2():
    y = L.one_hot_targets(0, 3, 2)
    assert abs(L.loss_ce(np.full((3, 2), 0.5), y).item() - math.log(2)) < 1e-12


@pytest.mark.parametrize("kind", KINDS)
def test_perfect_prediction_near_zero(kind):
    y = L.one_hot_targets(1, 5, 4)
    loss = L.sequence_loss(y.copy(), y, kind).item()
    assert 0 <= loss <= 5 * 4 * 2e-7


def test_ce_depends_only_on_last_frame():
    rng = np.random.default_rng(0)
    y = L.one_hot_targets(2, 6, 3)
    p = random_probs(rng, 6, 3)
    q = p.copy()
    q[:-1] = random_probs(rng, 5, 3)
    assert L.loss_ce(p, y).item() == L.loss_ce(q, y).item()


def test_egl_two_by_two_direct():
    p = np.array([[0.3, 0.7], [0.8, 0.2]])
    y = L.one_hot_targets(0, 2, 2)
    w = [math.exp(-1), 1.0]
    expected = -(w[0] * (math.log(0.3) + math.log(0.3)) + w[1] * (math.log(0.8) + math.log(0.8))) / 2
    assert abs(L.loss_egl(p, y).item() - expected) <= 1e-9
    assert abs(L.loss_egl(p, y).item() - direct(p, y, w, w)) <= 1e-9


def test_lgl_three_frames_direct():
    p = np.array([[0.6, 0.4], [0.25, 0.75], [0.1, 0.9]])
    y = L.one_hot_targets(1, 3, 2)
    w = [1 / 3, 2 / 3, 1.0]
    expected = -(w[0] * (math.log(0.4) + math.log(0.4))
                 + w[1] * (math.log(0.75) + math.log(0.75))
                 + w[2] * (math.log(0.9) + math.log(0.9))) / 2
    assert abs(L.loss_lgl(p, y).item() - expected) <= 1e-9


def test_plgl_false_positive_term_isolated():
    # true-class probability 1 - eps silences the false-negative term
    T, N, true = 4, 3, 1
    rng = np.random.default_rng(1)
    p = np.zeros((T, N))
    p[:, true] = 1 - 1e-12
    p[:, [0, 2]] = rng.uniform(0.05, 0.9, size=(T, 2))
    y = L.one_hot_targets(true, T, N)
    expected = -sum((t + 1) / T * sum(math.log(1 - p[t, k]) for k in (0, 2)) for t in range(T)) / N
    fn_residual = -T * math.log(1 - L.EPS) / N
    assert abs(L.loss_plgl(p, y).item() - expected - fn_residual) <= 1e-9


@pytest.mark.parametrize("kind", KINDS)
def test_matches_direct_evaluation(kind):
    rng = np.random.default_rng(7)
    p = random_probs(rng, 5, 4)
    y = L.one_hot_targets(3, 5, 4)
    fn, fp = L.time_weights(kind, 5)
    assert abs(L.sequence_loss(p, y, kind).item() - direct(p, y, fn, fp)) <= 1e-9


def test_single_frame_all_losses_equal_exactly():
    rng = np.random.default_rng(3)
    p = random_probs(rng, 1, 5)
    y = L.one_hot_targets(2, 1, 5)
    vals = {k: L.sequence_loss(p, y, k).item() for k in KINDS}
    assert len(set(vals.values())) == 1


def test_total_is_sum_of_stages():
    rng = np.random.default_rng(4)
    pc, pa = random_probs(rng, 4, 3), random_probs(rng, 4, 3)
    y = L.one_hot_targets(0, 4, 3)
    for k in KINDS:
        tot = L.loss_total(pc, pa, y, k).item()
        assert tot - L.sequence_loss(pc, y, k).item() - L.sequence_loss(pa, y, k).item() == pytest.approx(0, abs=1e-12)
        assert L.loss_total(pc, pc, y, k).item() == 2 * L.sequence_loss(pc, y, k).item()


def test_batch_reduction_is_mean_of_samples():
    rng = np.random.default_rng(5)
    preds = [random_probs(rng, 4, 3) for _ in range(3)]
    labels = [0, 2, 1]
    batch = np.stack(preds, axis=1)
    y = L.one_hot_targets(labels, 4, 3)
    for k in KINDS:
        each = [L.sequence_loss(p, L.one_hot_targets(c, 4, 3), k).item() for p, c in zip(preds, labels)]
        per = L.sequence_loss(batch, y, k, reduce="none").data
        np.testing.assert_allclose(per, each, rtol=0, atol=1e-12)
        assert abs(L.sequence_loss(batch, y, k).item() - np.mean(each)) <= 1e-12


def test_shape_mismatch():
    with pytest.raises(DimensionError):
        L.loss_ce(np.full((3, 2), 0.5), L.one_hot_targets(0, 4, 2))
    with pytest.raises(DimensionError):
        L.loss_total(np.full((3, 2), 0.5), np.full((4, 2), 0.5), L.one_hot_targets(0, 3, 2), "ce")


@pytest.mark.parametrize("kind", KINDS)
def test_gradient_through_softmax(kind):
    rng = np.random.default_rng(11)
    logits = nk.Tensor(rng.uniform(-2, 2, size=(5, 2, 4)), requires_grad=True)
    y = L.one_hot_targets([1, 3], 5, 4)
    f = lambda: L.sequence_loss(nk.softmax(logits), y, kind)
    assert check(f, [logits]) <= 1e-4


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 8), st.integers(2, 6), st.integers(0, 2**32 - 1), st.sampled_from(KINDS))
def test_losses_non_negative(T, N, seed, kind):
    rng = np.random.default_rng(seed)
    p = random_probs(rng, T, N) if seed % 2 else rng.uniform(0, 1, size=(T, N))
    y = L.one_hot_targets(int(rng.integers(N)), T, N)
    assert L.sequence_loss(p, y, kind).item() >= 0
