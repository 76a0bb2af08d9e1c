import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import _reference as ref
from conftest import make_manifest
from repscope import cam, net
from repscope.cam import GapHead, TrainConfig, TrainMeta
from repscope.errors import (
    BadClass,
    DegenerateLabels,
    Diverged,
    MissingHead,
    NonFiniteInput,
    ShapeMismatch,
)
from repscope.net import ForwardTrace


def two_blobs(n_per=100, seed=13):
    rng = np.random.default_rng(seed)
    a = rng.normal(loc=+1.5, scale=0.4, size=(n_per, 4))
    b = rng.normal(loc=-1.5, scale=0.4, size=(n_per, 4))
    x = np.vstack([a, b])
    y = np.array([0] * n_per + [1] * n_per)
    return x, y


def accuracy(head, x, y):
    hits = sum(cam.predict(head, xi, k=1)[0][0] == yi for xi, yi in zip(x, y))
    return hits / len(y)


def test_train_separable_blobs():
    x, y = two_blobs()
    head = cam.train_gap_head(x, y, TrainConfig(max_iters=2000))
    assert accuracy(head, x, y) == 1.0
    assert head.train_meta.iterations <= 2000
    assert np.isfinite(head.w).all()


def test_train_loss_non_increasing():
    x, y = two_blobs()
    head = cam.train_gap_head(x, y, TrainConfig(max_iters=2000))
    h = head.loss_history
    assert h is not None and len(h) == head.train_meta.iterations + 1
    assert (np.diff(h) <= 1e-12).all()


def test_train_zero_features_balanced():
    x = np.zeros((40, 3))
    y = np.array([0, 1] * 20)
    head = cam.train_gap_head(x, y)
    assert not head.w.any()
    preds = cam.predict(head, np.zeros(3), k=2)
    assert preds[0][1] == pytest.approx(0.5)
    assert preds[1][1] == pytest.approx(0.5)
    assert head.train_meta.iterations == 0


def test_train_gradient_vs_finite_differences():
    rng = np.random.default_rng(19)
    x = rng.standard_normal((20, 5))
    y = rng.integers(0, 3, size=20)
    y[:3] = [0, 1, 2]  # make sure all classes appear
    w = rng.standard_normal((3, 5)) * 0.3
    b = rng.standard_normal(3) * 0.1
    l2 = 1e-4
    _, gw, gb = cam._loss_and_grads(w, b, x, y, l2)

    h = 1e-4
    for arr, grad in ((w, gw), (b, gb)):
        it = np.nditer(arr, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            orig = arr[idx]
            arr[idx] = orig + h
            up = ref.softmax_ce_loss(w, b, x, y, l2)
            arr[idx] = orig - h
            dn = ref.softmax_ce_loss(w, b, x, y, l2)
            arr[idx] = orig
            numeric = (up - dn) / (2 * h)
            denom = max(1.0, abs(numeric))
            assert abs(grad[idx] - numeric) / denom < 1e-4, idx


def test_train_errors():
    with pytest.raises(DegenerateLabels):
        cam.train_gap_head(np.ones((4, 2)), np.zeros(4, dtype=int))
    with pytest.raises(NonFiniteInput):
        cam.train_gap_head(np.array([[np.nan, 1.0], [0.0, 1.0]]), np.array([0, 1]))
    x, y = two_blobs(20)
    with pytest.raises(Diverged):
        cam.train_gap_head(x, y, TrainConfig(learning_rate=1e6, max_iters=3000))


def head_of(w, b, layer="l"):
    w = np.asarray(w, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return GapHead(layer, w, b, TrainMeta(0, 0.0, 0.0))


def test_predict_tie_break():
    head = head_of([[1.0, 2.0], [1.0, 2.0]], [0.0, 0.0])
    preds = cam.predict(head, np.array([0.5, 0.5]), k=2)
    assert preds[0] == (0, pytest.approx(0.5))
    assert preds[1] == (1, pytest.approx(0.5))


def test_predict_softmax_values():
    head = head_of([[1.0], [0.0]], [0.0, 0.0])
    preds = cam.predict(head, np.array([2.0]), k=2)  # logits [2, 0]
    e2 = math.exp(2.0)
    assert preds[0] == (0, pytest.approx(e2 / (e2 + 1), abs=1e-9))
    assert preds[1] == (1, pytest.approx(1 / (e2 + 1), abs=1e-9))
    assert preds[0][1] == pytest.approx(0.8808, abs=1e-4)


def test_predict_shift_invariance():
    head_a = head_of([[1.0, 0.5], [0.2, -1.0]], [0.0, 0.0])
    head_b = head_of([[1.0, 0.5], [0.2, -1.0]], [7.0, 7.0])  # constant logit shift
    f = np.array([0.3, -0.8])
    pa = cam.predict(head_a, f, k=2)
    pb = cam.predict(head_b, f, k=2)
    for (ca, va), (cb, vb) in zip(pa, pb):
        assert ca == cb
        assert abs(va - vb) < 1e-12


def test_predict_k_clamped_and_shape_checked():
    head = head_of([[1.0], [0.0], [2.0]], [0.0, 0.0, 0.0])
    assert len(cam.predict(head, np.array([1.0]), k=10)) == 3
    with pytest.raises(ShapeMismatch):
        cam.predict(head, np.array([1.0, 2.0]), k=1)


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 10**6))
def test_softmax_simplex(seed):
    rng = np.random.default_rng(seed)
    p = cam.softmax(rng.standard_normal(8) * 10)
    assert abs(p.sum() - 1.0) < 1e-12
    assert (p > 0).all()


# cam_map


def test_cam_map_linear_combination():
    f = np.array([[[1.0, 0.0], [0.0, 0.0]], [[0.0, 0.0], [0.0, 1.0]]])
    head = head_of([[1.0, -1.0]], [0.0])
    m = cam.cam_map(f, head, 0)
    np.testing.assert_array_equal(m.grid, [[1.0, 0.0], [0.0, -1.0]])
    # GAP-linearity: spatial mean equals the weighted GAP combination
    assert m.grid.mean() == pytest.approx(1 * f[0].mean() - 1 * f[1].mean())
    assert m.grid.mean() == pytest.approx(0.0)


def test_cam_map_identity_vs_logit_seeded():
    rng = np.random.default_rng(29)
    for _ in range(100):
        c, hgt, wid, k = 6, 5, 4, 3
        fmap = rng.standard_normal((c, hgt, wid)).astype(np.float32)
        head = head_of(rng.standard_normal((k, c)), rng.standard_normal(k))
        cls = int(rng.integers(0, k))
        grid = cam.cam_map(fmap, head, cls).grid
        logit = float(head.w[cls] @ net.gap(fmap).astype(np.float64) + head.b[cls])
        err = abs(grid.mean() + head.b[cls] - logit) / max(1.0, abs(logit))
        assert err < 1e-4


def test_cam_map_linearity():
    rng = np.random.default_rng(35)
    f1 = rng.standard_normal((3, 4, 4))
    f2 = rng.standard_normal((3, 4, 4))
    head = head_of(rng.standard_normal((2, 3)), np.zeros(2))
    lhs = cam.cam_map(2.0 * f1 + 0.5 * f2, head, 1).grid
    rhs = 2.0 * cam.cam_map(f1, head, 1).grid + 0.5 * cam.cam_map(f2, head, 1).grid
    np.testing.assert_allclose(lhs, rhs, atol=1e-12)


def test_cam_map_errors():
    head = head_of(np.ones((2, 3)), np.zeros(2))
    with pytest.raises(BadClass):
        cam.cam_map(np.zeros((3, 2, 2)), head, 5)
    with pytest.raises(ShapeMismatch):
        cam.cam_map(np.zeros((4, 2, 2)), head, 0)


# upsampling


def test_upsample_constant():
    out = cam.upsample_bilinear(np.full((2, 3), 0.7), 5, 9)
    np.testing.assert_allclose(out, 0.7)


def test_upsample_1x2_to_1x3():
    out = cam.upsample_bilinear(np.array([[0.0, 1.0]]), 1, 3)
    np.testing.assert_allclose(out, [[0.0, 0.5, 1.0]])


def test_upsample_2x2_to_5x5_vs_reference():
    rng = np.random.default_rng(41)
    grid = rng.standard_normal((2, 2))
    got = cam.upsample_bilinear(grid, 5, 5)
    want = ref.bilinear_ref(grid, 5, 5)
    assert np.abs(got - want).max() < 1e-6


def test_upsample_singleton_axes():
    grid = np.array([[1.0], [3.0]])
    out = cam.upsample_bilinear(grid, 3, 4)
    np.testing.assert_allclose(out[:, 0], [1.0, 2.0, 3.0])
    for col in range(4):
        np.testing.assert_allclose(out[:, col], out[:, 0])  # single column replicated
    down = cam.upsample_bilinear(np.array([[0.0, 4.0]]), 1, 1)
    assert down[0, 0] == 0.0  # singleton output samples the first row/col


@settings(max_examples=50, deadline=None)
@given(
    seed=st.integers(0, 10**6),
    out_h=st.integers(1, 9),
    out_w=st.integers(1, 9),
)
def test_upsample_bounds(seed, out_h, out_w):
    rng = np.random.default_rng(seed)
    grid = rng.standard_normal((int(rng.integers(1, 5)), int(rng.integers(1, 5))))
    out = cam.upsample_bilinear(grid, out_h, out_w)
    assert out.min() >= grid.min()
    assert out.max() <= grid.max()


# per-layer predictions


def trace_with(image_id, taps):
    return ForwardTrace(image_id=image_id, taps={k: np.asarray(v, dtype=np.float32) for k, v in taps.items()})


def test_per_layer_predictions_single():
    manifest = make_manifest({0: ["img"], 1: ["other"]})
    head = head_of([[1.0], [0.0]], [0.0, 0.0], layer="l1")
    t = trace_with("img", {"l1": np.full((1, 2, 2), 2.0)})
    rows = cam.per_layer_predictions([t], {"l1": head}, manifest, k=2)
    assert len(rows) == 2
    assert rows[0].rank == 1 and rows[0].class_id == 0 and rows[0].correct
    assert rows[1].rank == 2 and rows[1].class_id == 1 and not rows[1].correct
    assert rows[0].probability == pytest.approx(math.exp(2) / (math.exp(2) + 1), abs=1e-9)


def test_per_layer_predictions_identical_layers():
    manifest = make_manifest({0: ["img"], 1: ["o"]})
    head = head_of([[0.5], [-0.5]], [0.1, -0.1], layer="x")
    fmap = np.full((1, 2, 2), 1.3)
    t = trace_with("img", {"l1": fmap, "l2": fmap})
    heads = {
        "l1": head_of(head.w, head.b, layer="l1"),
        "l2": head_of(head.w, head.b, layer="l2"),
    }
    rows = cam.per_layer_predictions([t], heads, manifest, k=2)
    l1 = [(r.rank, r.class_id, r.probability) for r in rows if r.layer_name == "l1"]
    l2 = [(r.rank, r.class_id, r.probability) for r in rows if r.layer_name == "l2"]
    assert l1 == l2


def test_per_layer_predictions_missing_head():
    manifest = make_manifest({0: ["img"], 1: ["o"]})
    t = trace_with("img", {"l1": np.ones((1, 2, 2))})
    with pytest.raises(MissingHead):
        cam.per_layer_predictions([t], {}, manifest)


def test_layer_accuracy_ordering(toy_artifacts):
    # relu1 GAP features are position-blind, relu2 features carry the class
    manifest = toy_artifacts["manifest"]
    traces = toy_artifacts["traces"]
    labels = np.array([manifest.class_of(t.image_id) for t in traces])
    heads = {}
    for layer in ("relu1", "relu2"):
        feats = np.stack([net.gap(t.taps[layer]) for t in traces]).astype(np.float64)
        heads[layer] = cam.train_gap_head(feats, labels, TrainConfig(max_iters=1500), layer_name=layer)
    sliced = [ForwardTrace(t.image_id, {l: t.taps[l] for l in ("relu1", "relu2")}) for t in traces]
    rows = cam.per_layer_predictions(sliced, heads, manifest, k=1)
    acc = {}
    for layer in ("relu1", "relu2"):
        top1 = [r.correct for r in rows if r.layer_name == layer and r.rank == 1]
        acc[layer] = np.mean(top1)
    assert acc["relu1"] < acc["relu2"]
    assert acc["relu2"] == 1.0


def test_top1_confidences(toy_artifacts):
    manifest = toy_artifacts["manifest"]
    traces = toy_artifacts["traces"][:6]
    labels = np.array([manifest.class_of(t.image_id) for t in toy_artifacts["traces"]])
    feats = np.stack([net.gap(t.taps["relu2"]) for t in toy_artifacts["traces"]]).astype(np.float64)
    head = cam.train_gap_head(feats, labels, TrainConfig(max_iters=500), layer_name="relu2")
    conf = cam.top1_confidences(traces, head, "relu2", manifest)
    assert set(conf) == {t.image_id for t in traces}
    assert all(0.0 < v < 1.0 for v in conf.values())


def test_head_save_load_round_trip(tmp_path):
    x, y = two_blobs(30)
    head = cam.train_gap_head(x, y, TrainConfig(max_iters=200), layer_name="conv3")
    cam.save_head(head, tmp_path)
    again = cam.load_head(tmp_path, "conv3")
    assert again.layer_name == "conv3"
    assert np.abs(again.w - head.w).max() < 1e-6  # f32 storage
    assert again.train_meta.iterations == head.train_meta.iterations
    assert again.train_meta.final_loss == pytest.approx(head.train_meta.final_loss)
    with pytest.raises(MissingHead):
        cam.load_head(tmp_path, "nope")
