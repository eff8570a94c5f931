import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from islris.cnn import (
    PARAM_ORDER, AdamState, ModelFormatError, ModelVersionError, TrainConfig, adam_step, forward,
    infer_interferers, init_model, load_model, logits, loss_and_gradients, per_class_accuracy,
    save_model, to_input, train,
)
from islris.waveform import DatasetConfig, build_dataset, synthesize_window


def tiny(window=8, seed=0, dtype=np.float64, **kw):
    kw = dict(conv1=2, conv2=2, hidden=5) | kw
    return init_model(window, 2, seed=seed, dtype=dtype, **kw)


def finite_difference_check(model, x, y, eps=1e-4, probes=None, rng=None):
    _, g = loss_and_gradients(model, x, y)
    worst = 0.0
    entries = [(k, idx) for k in PARAM_ORDER for idx in np.ndindex(model.params[k].shape)]
    if probes is not None:
        pick = rng.choice(len(entries), size=min(probes, len(entries)), replace=False)
        entries = [entries[i] for i in pick]
    for k, idx in entries:
        p = model.params[k]
        old = p[idx]
        p[idx] = old + eps
        lp, _ = loss_and_gradients(model, x, y)
        p[idx] = old - eps
        lm, _ = loss_and_gradients(model, x, y)
        p[idx] = old
        fd = (lp - lm) / (2 * eps)
        worst = max(worst, abs(fd - g[k][idx]) / max(abs(fd), abs(g[k][idx]), 1e-7))
    return worst, len(entries)


@given(st.integers(0, 2 ** 31), st.floats(0.01, 100.0))
def test_softmax_sums_to_one(seed, scale):
    m = tiny(seed=seed % 1000)
    x = np.random.default_rng(seed).standard_normal((3, 2, 8)) * scale
    p = forward(m, x)
    assert p.shape == (3, 4)
    np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-6)
    assert np.all(p >= 0)


def test_zero_model_gives_uniform():
    m = tiny()
    for k in m.params:
        m.params[k][...] = 0
    p = forward(m, np.ones((2, 8)))
    np.testing.assert_allclose(p, 0.25, rtol=1e-12)


def test_hand_computed_logits():
    # one filter per conv layer, w=5: conv1 -> length 3, conv2 -> length 1
    m = init_model(5, 2, conv1=1, conv2=1, hidden=1, seed=0, dtype=np.float64)
    m.params["conv1_w"][...] = np.array([[[1.0, 0.0, -1.0], [0.5, 0.5, 0.5]]])
    m.params["conv1_b"][...] = [0.1]
    m.params["conv2_w"][...] = np.array([[[1.0, 2.0, 3.0]]])
    m.params["conv2_b"][...] = [-0.5]
    m.params["fc1_w"][...] = [[2.0]]
    m.params["fc1_b"][...] = [0.0]
    m.params["out_w"][...] = [[1.0, -1.0, 0.0, 0.5]]
    m.params["out_b"][...] = [0.0, 0.0, 1.0, 0.0]
    i = [1.0, 2.0, 3.0, 4.0, 5.0]
    q = [0.0, 1.0, 0.0, 1.0, 0.0]
    # conv1 at t: (i[t] - i[t+2]) + 0.5*(q[t]+q[t+1]+q[t+2]) + 0.1
    c1 = [max(0.0, (i[t] - i[t + 2]) + 0.5 * (q[t] + q[t + 1] + q[t + 2]) + 0.1) for t in range(3)]
    c2 = max(0.0, 1 * c1[0] + 2 * c1[1] + 3 * c1[2] - 0.5)
    h = max(0.0, 2.0 * c2)
    expected = [h, -h, 1.0, 0.5 * h]
    np.testing.assert_allclose(logits(m, np.array([[i, q]])), [expected], atol=1e-12)


def test_forward_rejects_wrong_window():
    m = tiny(window=8)
    with pytest.raises(ValueError):
        forward(m, np.zeros((2, 9)))
    with pytest.raises(ValueError):
        forward(m, np.zeros((3, 8)))


def test_forward_accepts_window_types():
    m = tiny(window=8)
    w = synthesize_window((1, 0), (1.0, 1.0), 10.0, 8, seed=0)
    a = forward(m, w)
    np.testing.assert_allclose(a, forward(m, w.samples), rtol=1e-12)
    np.testing.assert_allclose(a, forward(m, to_input(w.samples)[0]), rtol=1e-12)
    assert a.shape == (4,)


def test_uniform_loss_is_log_c():
    m = tiny()
    for k in m.params:
        m.params[k][...] = 0
    loss, _ = loss_and_gradients(m, np.ones((5, 2, 8)), np.array([0, 1, 2, 3, 0]))
    assert loss == pytest.approx(math.log(4), abs=1e-12)


def test_confident_prediction_loss_vanishes():
    m = tiny()
    for k in m.params:
        m.params[k][...] = 0
    m.params["out_b"][2] = 60.0
    loss, _ = loss_and_gradients(m, np.ones((2, 2, 8)), np.array([2, 2]))
    assert loss < 1e-20


def test_loss_rejects_bad_labels():
    m = tiny()
    with pytest.raises(ValueError):
        loss_and_gradients(m, np.ones((1, 2, 8)), np.array([4]))
    with pytest.raises(ValueError):
        loss_and_gradients(m, np.ones((0, 2, 8)), np.array([], dtype=int))


def test_gradients_match_finite_differences_everywhere():
    rng = np.random.default_rng(3)
    m = tiny(seed=3)
    x = rng.standard_normal((6, 2, 8))
    y = rng.integers(0, 4, 6)
    worst, n = finite_difference_check(m, x, y)
    assert n == 97
    assert worst <= 1e-4


def test_adam_zero_gradient_is_fixed_point():
    params = {"w": np.array([1.0, -2.0])}
    adam_step(params, {"w": np.zeros(2)}, AdamState(), TrainConfig())
    np.testing.assert_array_equal(params["w"], [1.0, -2.0])


def test_adam_first_step_magnitude():
    params = {"w": np.array([0.0])}
    cfg = TrainConfig()
    adam_step(params, {"w": np.array([1.0])}, AdamState(), cfg)
    # m_hat = g, v_hat = g^2 -> step = lr * g / (|g| + eps)
    assert -params["w"][0] == pytest.approx(cfg.learning_rate * 1.0 / (1.0 + cfg.epsilon), rel=1e-12)


@pytest.mark.parametrize("bad", [dict(learning_rate=0.0), dict(beta1=1.0), dict(beta2=0.0)])
def test_train_config_validation(bad):
    with pytest.raises(ValueError):
        TrainConfig(**bad)


def _small_dataset(per_class=40, window=16, seed=0):
    return build_dataset(DatasetConfig(per_class=per_class, window=window), seed=seed)


def test_training_is_deterministic():
    ds = _small_dataset()
    cfg = TrainConfig(epochs=2, batch_size=16)
    a, ra = train(ds, cfg, conv1=4, conv2=4, hidden=8)
    b, rb = train(ds, cfg, conv1=4, conv2=4, hidden=8)
    for k in PARAM_ORDER:
        assert np.array_equal(a.params[k], b.params[k])
    assert ra.epoch_losses == rb.epoch_losses


def test_training_memorises_tiny_set():
    ds = _small_dataset(per_class=5, window=16)
    model, report = train(ds, TrainConfig(epochs=150, batch_size=8, learning_rate=3e-3), conv1=8, conv2=8, hidden=32)
    acc, overall = per_class_accuracy(model, ds.subset(ds.split_indices(0)[0]))
    assert overall == 1.0
    assert report.epoch_losses[-1] < report.epoch_losses[0]


def test_train_rejects_missing_class():
    ds = build_dataset(DatasetConfig(per_class=10, window=8, classes=(0, 1, 2)), seed=0)
    with pytest.raises(ValueError, match="lacks classes"):
        train(ds, TrainConfig(epochs=1), conv1=2, conv2=2, hidden=4)


def test_accuracy_rejects_window_mismatch():
    with pytest.raises(ValueError):
        per_class_accuracy(tiny(window=8), _small_dataset(per_class=2, window=16))


def _forced(cls):
    m = tiny()
    for k in m.params:
        m.params[k][...] = 0
    m.params["out_b"][cls] = 5.0
    return m


@pytest.mark.parametrize("cls,expected", [(0, set()), (1, set()), (2, {1}), (3, {1})])
def test_infer_interferers_decoding(cls, expected):
    inferred, count = infer_interferers(_forced(cls), np.zeros((2, 8)), desired=0)
    assert inferred == frozenset(expected)
    assert count == len(expected)


def test_infer_interferers_other_desired_user():
    inferred, count = infer_interferers(_forced(3), np.zeros((2, 8)), desired=1)
    assert inferred == frozenset({0}) and count == 1


def test_model_round_trip(tmp_path):
    m = init_model(16, 2, conv1=3, conv2=5, hidden=7, seed=9)
    p = tmp_path / "m.islm"
    save_model(m, p)
    back = load_model(p)
    assert back.window == 16 and back.n_users == 2 and back.dims == m.dims
    for k in PARAM_ORDER:
        assert back.params[k].dtype == np.float32
        assert np.array_equal(back.params[k], m.params[k])
    assert p.read_bytes()[:4] == b"ISLM"


@pytest.mark.parametrize("corrupt,err", [
    ("magic", ModelFormatError), ("version", ModelVersionError),
    ("truncated", ModelFormatError), ("header", ModelFormatError), ("extra", ModelFormatError),
])
def test_model_corruption_rejected(tmp_path, corrupt, err):
    p = tmp_path / "m.islm"
    save_model(init_model(8, 2, conv1=2, conv2=2, hidden=3), p)
    raw = bytearray(p.read_bytes())
    if corrupt == "magic":
        raw[:4] = b"ISLD"
    elif corrupt == "version":
        raw[4:8] = (2).to_bytes(4, "little")
    elif corrupt == "truncated":
        raw = raw[:-5]
    elif corrupt == "header":
        raw = raw[:12]
    else:
        raw += b"\0\0\0\0"
    p.write_bytes(bytes(raw))
    with pytest.raises(err):
        load_model(p)
    if err is ModelFormatError and corrupt != "version":
        with pytest.raises(ModelFormatError):
            load_model(p)
