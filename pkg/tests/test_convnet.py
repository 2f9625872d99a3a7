import numpy as np
import pytest

from wavemorph import convnet
from wavemorph.convnet import (
    PARAM_NAMES,
    ModelConfig,
    backward,
    bce_loss,
    forward,
    init_model,
    reduce_input_channels,
)
from wavemorph.errors import ConfigError, InputError, InternalError, SelectionError

TOY = ModelConfig(in_channels=4, image_size=8, conv_channels=(3, 4, 5))


def rel_err(a, b, floor=1e-8):
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


def numeric_grad(f, params, name, eps=1e-4):
    p = params[name]
    g = np.zeros_like(p)
    for i in np.ndindex(p.shape):
        old = p[i]
        p[i] = old + eps
        fp = f()
        p[i] = old - eps
        fm = f()
        p[i] = old
        g[i] = (fp - fm) / (2 * eps)
    return g


def test_first_layer_shape():
    params = init_model(ModelConfig(), seed=0)
    assert params["conv1.w"].shape == (32, 48, 3, 3)
    assert params["conv1.w"].dtype == np.float32


def test_init_deterministic_and_scaled():
    a = init_model(ModelConfig(), 5)
    b = init_model(ModelConfig(), 5)
    for k in PARAM_NAMES:
        np.testing.assert_array_equal(a[k], b[k])
    assert not np.array_equal(a["conv1.w"], init_model(ModelConfig(), 6)["conv1.w"])
    std = a["conv1.w"].std()
    assert abs(std / np.sqrt(2 / (48 * 9)) - 1) < 0.2
    assert all(not a[k].any() for k in PARAM_NAMES if k.endswith(".b"))


def test_bad_config():
    with pytest.raises(ConfigError):
        ModelConfig(image_size=30)
    with pytest.raises(ConfigError):
        ModelConfig(kernel=2)


def test_zero_network():
    params = {k: np.zeros_like(v) for k, v in init_model(TOY, 0).items()}
    logits, _ = forward(params, np.random.default_rng(0).random((3, 4, 8, 8)))
    np.testing.assert_array_equal(logits, 0)
    np.testing.assert_array_equal(convnet.sigmoid(logits), 0.5)


def test_duplicate_sample(rng):
    params = init_model(TOY, 1, np.float64)
    x = rng.standard_normal((1, 4, 8, 8))
    logits, _ = forward(params, np.concatenate([x, x, x]))
    assert logits[0] == logits[1] == logits[2]


def test_shape_mismatch():
    params = init_model(TOY, 1)
    with pytest.raises(InputError):
        forward(params, np.zeros((2, 3, 8, 8)))


def test_hand_computed_logit(kernel_backend):
    cfg = ModelConfig(in_channels=1, image_size=4, conv_channels=(1, 1, 1))
    p = {k: np.zeros(s) for k, s in cfg.param_shapes().items()}
    p["conv1.w"][0, 0] = 1.0  # 3x3 box sum
    p["conv1.b"][0] = -1.0
    p["conv2.w"][0, 0, 1, 1] = 0.5
    p["conv2.b"][0] = -1.0
    p["conv3.w"][0, 0, 1, 1] = 3.0
    p["fc.w"][0] = 0.25
    p["fc.b"][0] = -1.0
    x = np.array([[1, 0, 2, 0], [0, 1, 0, 0], [3, 0, 0, 1], [0, 0, 1, 0]], dtype=float)
    # conv1 -> [[1,3,2,1],[4,6,3,2],[3,4,2,1],[2,3,1,1]]; pool -> [[6,3],[4,2]]
    # conv2 -> [[2,.5],[1,0]]; pool -> 2; conv3 -> 6; gap -> 6; fc -> 0.5
    logits, cache = forward(p, x[None, None])
    np.testing.assert_allclose(cache.z1[0, 0], [[1, 3, 2, 1], [4, 6, 3, 2], [3, 4, 2, 1], [2, 3, 1, 1]])
    assert logits[0] == pytest.approx(0.5, abs=1e-12)


def test_bce_values():
    assert bce_loss(np.array([0.0]), np.array([1])) == pytest.approx(np.log(2), abs=1e-12)
    assert bce_loss(np.array([0.0]), np.array([0])) == pytest.approx(0.6931471805599453, abs=1e-12)
    assert bce_loss(np.array([20.0]), np.array([1])) < 1e-8
    # softplus(-0.3), softplus(-1.2) evaluated with mpmath at 30 digits
    import mpmath

    mpmath.mp.dps = 30
    want = (mpmath.log(1 + mpmath.e ** mpmath.mpf("-0.3")) + mpmath.log(1 + mpmath.e ** mpmath.mpf("-1.2"))) / 2
    assert bce_loss(np.array([0.3, -1.2]), np.array([1, 0])) == pytest.approx(float(want), rel=1e-14)
    assert bce_loss(np.array([-800.0, 800.0]), np.array([1, 0])) == pytest.approx(800.0)
    with pytest.raises(InputError):
        bce_loss(np.array([]), np.array([]))
    with pytest.raises(InputError):
        bce_loss(np.array([1.0]), np.array([2]))


def test_zero_input_gives_zero_conv_weight_grads():
    params = init_model(TOY, 2, np.float64)
    params["conv1.b"][:] = 0.1  # keep some units alive
    _, cache = forward(params, np.zeros((2, 4, 8, 8)))
    g = backward(params, cache, np.array([1, 0]))
    assert not g["conv1.w"].any()


def test_duplicated_batch_gradient(rng):
    params = init_model(TOY, 3, np.float64)
    x = rng.standard_normal((1, 4, 8, 8))
    _, c1 = forward(params, x)
    g1 = backward(params, c1, np.array([1]))
    _, c2 = forward(params, np.concatenate([x, x]))
    g2 = backward(params, c2, np.array([1, 1]))
    for k in PARAM_NAMES:
        np.testing.assert_allclose(g1[k], g2[k], atol=1e-14)


def test_stale_cache():
    params = init_model(TOY, 3, np.float64)
    _, cache = forward(params, np.zeros((1, 4, 8, 8)))
    other = init_model(TOY, 4, np.float64)
    with pytest.raises(InternalError):
        backward(other, cache, np.array([1]))
    with pytest.raises(InternalError):
        backward(params, cache, np.array([1, 0]))


def test_gradient_check_all_params(rng, kernel_backend):
    assert TOY.n_params() <= 1e4
    params = init_model(TOY, 11, np.float64)
    params["fc.b"][:] = 0.2
    x = rng.standard_normal((3, 4, 8, 8))
    y = np.array([1, 0, 1])

    def loss():
        return bce_loss(forward(params, x)[0], y)

    _, cache = forward(params, x)
    grads = backward(params, cache, y)
    for name in PARAM_NAMES:
        num = numeric_grad(loss, params, name)
        assert rel_err(grads[name], num).max() < 1e-4, name


def test_zero_group_is_irrelevant(rng):
    params = init_model(TOY, 5, np.float64)
    params["conv1.w"][:, 2] = 0.0
    x = rng.standard_normal((2, 4, 8, 8))
    full, _ = forward(params, x)
    reduced_params = dict(params)
    reduced_params["conv1.w"] = np.ascontiguousarray(params["conv1.w"][:, [0, 1, 3]])
    reduced, _ = forward(reduced_params, x[:, [0, 1, 3]])
    np.testing.assert_allclose(full, reduced, atol=1e-12)


def test_forward_deterministic(rng):
    params = init_model(ModelConfig(in_channels=6, image_size=16), 0)
    x = rng.standard_normal((4, 6, 16, 16)).astype(np.float32)
    a, _ = forward(params, x)
    b, _ = forward(params, x)
    assert a.tobytes() == b.tobytes()


def test_reduce_input_channels():
    cfg = ModelConfig()
    same = reduce_input_channels(cfg, range(48))
    assert same.in_channels == 48 and same.bands == cfg.bands
    twenty = reduce_input_channels(cfg, list(range(0, 40, 2)))
    assert init_model(twenty, 0)["conv1.w"].shape == (32, 20, 3, 3)
    one = reduce_input_channels(cfg, [0])
    logits, _ = forward(init_model(one, 0), np.zeros((2, 1, 64, 64), np.float32))
    assert logits.shape == (2,)
    nested = reduce_input_channels(twenty, [1, 3])
    assert nested.bands == (2, 6)
    for bad in ([], [3, 1], [48], [2, 2]):
        with pytest.raises(SelectionError):
            reduce_input_channels(cfg, bad)


def test_checkpoint_roundtrip(tmp_path):
    cfg = reduce_input_channels(ModelConfig(image_size=16), [1, 5, 9])
    params = init_model(cfg, 3)
    convnet.save_checkpoint(tmp_path / "m.ckpt", params, cfg, {"lambda": 0.01})
    raw = (tmp_path / "m.ckpt").read_bytes()
    assert raw.startswith(b"CKPT1\n") and b"in_channels=3\n" in raw
    back, cfg2, meta = convnet.load_checkpoint(tmp_path / "m.ckpt")
    assert cfg2.bands == (1, 5, 9) and cfg2.in_channels == 3
    assert meta["lambda"] == "0.01"
    for k in PARAM_NAMES:
        np.testing.assert_array_equal(back[k], params[k])
