import numpy as np
import pytest

from fddcsi.nn import (
    AdamState,
    GraphBuilder,
    ModelSpec,
    Schedule,
    TrainingDivergedError,
    adam_step,
    backward,
    extract,
    forward,
    gradient_check,
    init_model,
    layer_check_specs,
    load_model,
    mse_loss,
    n_params,
    predict,
    save_model,
    train,
)


def _model(spec, **params):
    m = init_model(spec, dtype=np.float64)
    for k, v in params.items():
        m.params[k] = np.asarray(v, dtype=np.float64)
    return m


# -- forward -------------------------------------------------------------------------


def test_reshape_only_is_identity():
    g = GraphBuilder({"x": (2, 3)})
    spec = g.build(g.reshape("x", (2, 3)))
    x = np.arange(12.0).reshape(2, 2, 3)
    out, _ = forward(init_model(spec, np.float64), x)
    assert np.array_equal(out, x)


def test_dense_dot_product():
    g = GraphBuilder({"x": (2,)})
    spec = g.build(g.dense("x", 2, 1, name="fc"))
    m = _model(spec, **{"fc.W": [[1.0], [1.0]], "fc.b": [0.0]})
    out, _ = forward(m, np.array([[3.0, 4.0]]))
    assert out[0, 0] == 7.0


def test_conv_all_ones_kernel_on_one_hot():
    g = GraphBuilder({"x": (1, 3, 3)})
    spec = g.build(g.conv2d("x", 1, 1, name="c"))
    m = _model(spec, **{"c.W": np.ones((1, 1, 3, 3)), "c.b": [0.0]})
    x = np.zeros((1, 1, 3, 3))
    x[0, 0, 1, 1] = 1.0
    out, _ = forward(m, x)
    assert np.array_equal(out, np.ones((1, 1, 3, 3)))


def test_conv_matches_direct_loop():
    rng = np.random.default_rng(0)
    for cin, cout in ((2, 5), (5, 2)):
        g = GraphBuilder({"x": (cin, 4, 5)})
        spec = g.build(g.conv2d("x", cin, cout, name="c"))
        m = init_model(spec, np.float64)
        m.params["c.b"] = rng.standard_normal(cout)
        x = rng.standard_normal((2, cin, 4, 5))
        out, _ = forward(m, x)
        xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
        W = m.params["c.W"]
        ref = np.zeros((2, cout, 4, 5))
        for b in range(2):
            for o in range(cout):
                for i in range(4):
                    for j in range(5):
                        ref[b, o, i, j] = np.sum(W[o] * xp[b, :, i : i + 3, j : j + 3]) + m.params["c.b"][o]
        assert np.allclose(out, ref)


def test_batch_norm_modes():
    g = GraphBuilder({"x": (2, 3, 3)})
    spec = g.build(g.batch_norm("x", 2, name="bn"))
    m = init_model(spec, np.float64)
    x = np.random.default_rng(1).standard_normal((8, 2, 3, 3)) * 3 + 1
    y, _ = forward(m, x, training=True)
    assert np.allclose(y.mean(axis=(0, 2, 3)), 0, atol=1e-12)
    assert np.allclose(y.var(axis=(0, 2, 3)), 1, atol=1e-3)
    # running stats moved 10% toward the batch statistics
    assert np.allclose(m.buffers["bn.running_mean"], 0.1 * x.mean(axis=(0, 2, 3)))
    y_eval, _ = forward(m, x, training=False)
    assert not np.allclose(y_eval, y)


def test_shape_mismatch_rejected():
    g = GraphBuilder({"x": (2, 3, 3)})
    with pytest.raises(ValueError):
        g.conv2d("x", 3, 4)
        g.build("conv2d_0")
    g = GraphBuilder({"x": (4,)})
    spec = g.build(g.dense("x", 4, 2))
    with pytest.raises(ValueError):
        forward(init_model(spec), np.zeros((2, 5)))


# -- backward ---------------------------------------------------------------------------


def test_perfect_prediction_has_zero_gradients():
    g = GraphBuilder({"x": (3,)})
    spec = g.build(g.dense("x", 3, 2))
    m = init_model(spec, np.float64)
    x = np.random.default_rng(0).standard_normal((4, 3))
    y, cache = forward(m, x, training=True)
    _, grad = mse_loss(y, y.copy())
    pg, _ = backward(m, cache, grad)
    assert all(np.all(v == 0) for v in pg.values())


def test_hand_derivative():
    g = GraphBuilder({"x": (1,)})
    spec = g.build(g.dense("x", 1, 1, name="fc"))
    m = _model(spec, **{"fc.W": [[2.0]], "fc.b": [0.0]})
    y, cache = forward(m, np.array([[3.0]]), training=True)
    loss, grad = mse_loss(y, np.zeros_like(y))
    assert loss == 36.0
    pg, _ = backward(m, cache, grad)
    assert pg["fc.W"][0, 0] == pytest.approx(36.0)


def test_backward_requires_cache():
    g = GraphBuilder({"x": (1,)})
    spec = g.build(g.dense("x", 1, 1))
    with pytest.raises(ValueError):
        backward(init_model(spec), None, np.ones((1, 1)))


@pytest.mark.parametrize("name", sorted(layer_check_specs()))
def test_gradient_check(name):
    spec, training = layer_check_specs()[name]
    assert gradient_check(spec, training) < 1e-4


def test_gradient_check_through_codec_block():
    g = GraphBuilder({"x": (2, 4, 4)}, seed=3)
    h = g.conv2d("x", 2, 8)
    h = g.batch_norm(h, 8)
    h = g.leaky_relu(h)
    h = g.conv2d(h, 8, 2)
    h = g.residual_add([h, "x"])
    h = g.reshape(h, (32,))
    h = g.dense(h, 32, 5)
    assert gradient_check(g.build(h)) < 1e-4


# -- parameter counting ------------------------------------------------------------------


def test_param_counts():
    assert n_params("conv2d", {"in_ch": 2, "out_ch": 8}) == 3 * 3 * 2 * 8 + 8
    assert n_params("dense", {"n_in": 10, "n_out": 3}) == 33
    assert n_params("batch_norm", {"channels": 4}) == 8
    g = GraphBuilder({"x": (2, 4, 4)})
    h = g.conv2d("x", 2, 8)
    h = g.conv2d(h, 8, 2)
    h2 = g.conv2d(h, 2, 8, tie="conv2d0")
    spec = g.build(h2)
    assert spec.n_params() == init_model(spec).n_params() == (9 * 16 + 8) + (9 * 16 + 2)


# -- optimizer ----------------------------------------------------------------------------


def test_adam_zero_gradient_keeps_params():
    p = {"w": np.array([1.0, -2.0])}
    adam_step(p, {"w": np.zeros(2)}, AdamState(), lr=1e-3)
    assert np.array_equal(p["w"], [1.0, -2.0])


def test_adam_first_step_size():
    p = {"w": np.array([0.0])}
    eps = 1e-8
    adam_step(p, {"w": np.array([1.0])}, AdamState(), lr=1e-3, eps=eps)
    assert p["w"][0] == pytest.approx(-1e-3 / (1 + eps), rel=1e-12)


def test_adam_deterministic():
    def run():
        rng = np.random.default_rng(0)
        p, st = {"w": np.zeros(3)}, AdamState()
        for _ in range(10):
            adam_step(p, {"w": rng.standard_normal(3)}, st)
        return p["w"]

    assert np.array_equal(run(), run())


# -- training ------------------------------------------------------------------------------


def _identity_spec():
    g = GraphBuilder({"x": (4,)}, seed=2)
    return g.build(g.dense("x", 4, 4))


def test_learns_identity():
    x = np.random.default_rng(0).standard_normal((256, 4)).astype(np.float32)
    m = train(_identity_spec(), (x, x), schedule=Schedule(epochs=200, batch_size=32, lr=1e-2), seed=0)
    assert m.metadata["final_loss"] < 1e-3
    assert len(m.metadata["loss_curve"]) == 200


def test_zero_epochs_returns_initial_model():
    spec = _identity_spec()
    x = np.zeros((8, 4), np.float32)
    m = train(spec, (x, x), schedule=Schedule(epochs=0))
    ref = init_model(spec)
    assert all(np.array_equal(m.params[k], ref.params[k]) for k in ref.params)


def test_training_reproducible():
    x = np.random.default_rng(1).standard_normal((64, 4)).astype(np.float32)
    s = Schedule(epochs=5, batch_size=16)
    a = train(_identity_spec(), (x, x), schedule=s, seed=4)
    b = train(_identity_spec(), (x, x), schedule=s, seed=4)
    assert abs(a.metadata["final_loss"] - b.metadata["final_loss"]) < 1e-12
    assert all(np.array_equal(a.params[k], b.params[k]) for k in a.params)


def test_early_stopping_keeps_best_epoch():
    rng = np.random.default_rng(2)
    x = rng.standard_normal((64, 4)).astype(np.float32)
    noise = rng.standard_normal((64, 4)).astype(np.float32)
    m = train(_identity_spec(), (x, x), (x, noise), Schedule(epochs=50, batch_size=16, lr=1e-2, patience=3), seed=0)
    assert m.metadata["epochs"] < 50
    assert m.metadata["best_epoch"] == int(np.argmin(m.metadata["val_curve"])) + 1


def test_divergence_reported():
    x = np.full((16, 4), 1e30, np.float32)
    with pytest.raises(TrainingDivergedError) as info, np.errstate(over="ignore", invalid="ignore"):
        train(_identity_spec(), (x, np.full((16, 4), np.inf, np.float32)), schedule=Schedule(epochs=3, batch_size=8))
    assert info.value.epoch == 1


def test_empty_dataset_rejected():
    with pytest.raises(ValueError):
        train(_identity_spec(), (np.zeros((0, 4)), np.zeros((0, 4))), schedule=Schedule(epochs=1))


# -- graph utilities ------------------------------------------------------------------------


def test_checkpoint_round_trip_bitwise(tmp_path):
    g = GraphBuilder({"x": (2, 4, 4)}, seed=5)
    h = g.conv2d("x", 2, 4)
    h = g.batch_norm(h, 4)
    h = g.recurrent_cell(h, None, 4, 2)
    h2 = g.recurrent_cell(g.channel_slice(h, 0, 4), h, 4, 2, tie=h)
    spec = g.build([h, h2])
    m = init_model(spec)
    x = np.random.default_rng(0).standard_normal((3, 2, 4, 4)).astype(np.float32)
    forward(m, x, training=True)  # move running stats
    save_model(m, tmp_path / "m.ckpt")
    back = load_model(tmp_path / "m.ckpt")
    assert back.spec == spec
    a, b = predict(m, x), predict(back, x)
    assert all(np.array_equal(a[k], b[k]) for k in a)


def test_bad_checkpoint_rejected(tmp_path):
    (tmp_path / "x.ckpt").write_bytes(b"nope")
    with pytest.raises(ValueError):
        load_model(tmp_path / "x.ckpt")


def test_extract_reproduces_subgraph():
    g = GraphBuilder({"x": (3,)}, seed=1)
    a = g.dense("x", 3, 3, name="a")
    b = g.dense(a, 3, 2, name="b")
    c = g.dense(b, 2, 2, name="c")
    m = init_model(g.build(c), np.float64)
    x = np.random.default_rng(0).standard_normal((5, 3))
    full, _ = forward(m, x)
    enc = extract(m, [b], ["x"])
    dec = extract(m, [c], [b])
    mid, _ = forward(enc, x)
    out, _ = forward(dec, mid)
    assert np.allclose(out, full)


def test_extract_reroots_ties():
    g = GraphBuilder({"x": (3,), "y": (3,)}, seed=1)
    a = g.dense("x", 3, 3, name="a")
    b = g.dense("y", 3, 3, name="b", tie="a")
    m = init_model(g.build([a, b]), np.float64)
    sub = extract(m, [b], ["y"])
    assert sub.spec.layer("b").tie is None
    assert np.array_equal(sub.params["b.W"], m.params["a.W"])


def test_spec_json_round_trip():
    spec = _identity_spec()
    assert ModelSpec.from_dict(spec.to_dict()) == spec
