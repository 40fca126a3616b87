import numpy as np
import pytest

from rls import tensor as T
from rls.gradcheck import grad_check
from rls.latent import roll_integer
from rls.networks import (CheckpointError, NetConfig, Posterior, baseline_forward, classify, decode,
                          encode, init_weights, load_weights, predict, reparameterize, save_weights,
                          weights_from_bytes, weights_to_bytes)
from rls.tensor import ShapeError, Tensor

SMALL = NetConfig(K=2, N=4, channels=(2, 3, 2), n_classes=5, hidden=6, dec_hidden=5, image=8, kernel=5)
DEFAULT = NetConfig(channels=(4, 4, 4))


@pytest.fixture(scope="module")
def nets():
    rng = np.random.default_rng(0)
    return {k: init_weights(k, DEFAULT, rng) for k in ("encoder", "decoder", "classifier", "baseline")}


def chips(n, size=64, seed=0):
    return np.random.default_rng(seed).random((n, size, size))


def test_encode_shapes_and_determinism(nets):
    x = chips(2)
    p = encode(nets["encoder"], x)
    assert p.mean.shape == p.logvar.shape == (2, 288)
    same = encode(nets["encoder"], np.stack([x[0], x[0]]))
    assert np.array_equal(same.mean.data[0], same.mean.data[1])
    assert np.array_equal(encode(nets["encoder"], x).mean.data, p.mean.data)


def test_trunk_shape_chain(nets):
    h = Tensor(chips(1)[:, None])
    sizes = []
    for i in (1, 2, 3):
        h = T.conv2d(h, nets["encoder"][f"conv{i}.w"], nets["encoder"][f"conv{i}.b"], 2, 2)
        sizes.append(h.shape[-1])
    assert sizes == [32, 16, 8]


def test_wrong_chip_size_rejected(nets):
    with pytest.raises(ShapeError):
        encode(nets["encoder"], chips(1, 32))
    with pytest.raises(ShapeError):
        baseline_forward(nets["baseline"], chips(1, 63))


def test_reparameterize_vanishing_noise_and_seed():
    mean = Tensor(np.random.default_rng(1).standard_normal((2, 8)))
    p = Posterior(mean, Tensor(np.full((2, 8), -60.0)))
    z = reparameterize(p, np.random.default_rng(0), 2, 4)
    np.testing.assert_allclose(z.data.reshape(2, 8), mean.data, rtol=0, atol=1e-12)
    q = Posterior(mean, Tensor(np.zeros((2, 8))))
    a = reparameterize(q, np.random.default_rng(5), 2, 4).data
    b = reparameterize(q, np.random.default_rng(5), 2, 4).data
    assert a.tobytes() == b.tobytes() and a.shape == (2, 2, 4)


def test_reparameterize_monte_carlo_mean():
    n = 100_000
    mean = np.array([0.3, -1.2])
    logvar = np.array([0.0, np.log(4.0)])
    p = Posterior(Tensor(np.tile(mean, (n, 1))), Tensor(np.tile(logvar, (n, 1))))
    z = reparameterize(p, np.random.default_rng(2), 1, 2).data.reshape(n, 2)
    sigma = np.exp(0.5 * logvar)
    assert np.all(np.abs(z.mean(axis=0) - mean) < 5 * sigma / np.sqrt(n))


def test_decode_shape_range_and_extent(nets):
    out = decode(nets["decoder"], np.random.default_rng(3).standard_normal((3, 8, 36)))
    assert out.shape == (3, 1, 64, 64)
    assert np.all((out.data > 0) & (out.data < 1))
    with pytest.raises(ShapeError):
        decode(nets["decoder"], np.zeros((1, 287)))


def test_classify_contract(nets):
    z = np.random.default_rng(4).standard_normal((6, 8, 36))
    logits = classify(nets["classifier"], z)
    assert logits.shape == (6, 5)
    np.testing.assert_allclose(T.softmax(logits.data).sum(axis=1), 1.0, atol=1e-12)
    assert classify(nets["classifier"], roll_integer(z, 0)).data.tobytes() == logits.data.tobytes()
    with pytest.raises(ShapeError):
        classify(nets["classifier"], np.zeros((1, 10)))


def test_zero_weights_give_uniform_logits_and_lowest_index(nets):
    w = nets["classifier"].copy()
    for t in w.tensors():
        t.data = np.zeros_like(t.data)
    logits = classify(w, np.ones((2, 288)))
    assert np.all(logits.data == 0.0)
    assert predict(logits).tolist() == [0, 0]
    assert predict(np.array([[0.0, 2.0, 2.0, 1.0]])).tolist() == [1]


def test_baseline_forward_contract(nets):
    x = chips(2, seed=7)
    a = baseline_forward(nets["baseline"], x)
    assert a.shape == (2, 5)
    assert baseline_forward(nets["baseline"], x).data.tobytes() == a.data.tobytes()


def test_init_scheme():
    a = init_weights("encoder", DEFAULT, np.random.default_rng(9))
    b = init_weights("encoder", DEFAULT, np.random.default_rng(9))
    assert a.digest() == b.digest()
    for name, t in a.params.items():
        if name.endswith(".b"):
            assert np.all(t.data == 0.0)
        else:
            fan_in = int(np.prod(t.shape[1:])) if t.data.ndim == 4 else t.shape[0]
            assert np.abs(t.data).max() <= np.sqrt(6.0 / fan_in)


def test_checkpoint_roundtrip(tmp_path, nets):
    for kind, w in nets.items():
        digest = save_weights(tmp_path / f"{kind}.rlsw", w)
        back = load_weights(tmp_path / f"{kind}.rlsw")
        assert back.kind == kind and back.cfg == w.cfg and back.digest() == w.digest()
        assert len(digest) == 64


def test_checkpoint_errors(nets):
    buf = weights_to_bytes(nets["classifier"])
    assert buf[:4] == b"RLSW"
    with pytest.raises(CheckpointError, match="magic"):
        weights_from_bytes(b"NOPE" + buf[4:])
    with pytest.raises(CheckpointError, match="version"):
        weights_from_bytes(buf[:4] + (9).to_bytes(4, "little") + buf[8:])
    with pytest.raises(CheckpointError, match="truncated"):
        weights_from_bytes(buf[:-3])


# ---------------------------------------------------------------- downsized surrogate graphs

def _jitter_biases(w, rng):
    # zero biases put pre-activations exactly on the ReLU kink, where
    # central differences straddle the corner
    for name, t in w.params.items():
        if name.endswith(".b"):
            t.data = rng.uniform(-0.3, 0.3, t.shape)
    return w


def _param_check(w, name, loss_fn, seed=0):
    base = w.params[name]

    def f(t):
        w.params[name] = t
        try:
            return loss_fn()
        finally:
            w.params[name] = base

    return grad_check(f, base.data, max_coords=12, seed=seed)


@pytest.mark.parametrize("seed", range(5))
def test_encode_roll_decode_graph_gradients(seed):
    """encoder -> sample -> roll -> decoder -> mse + KL on an 8x8 surrogate."""
    rng = np.random.default_rng(seed)
    enc = _jitter_biases(init_weights("encoder", SMALL, rng), rng)
    dec = _jitter_biases(init_weights("decoder", SMALL, rng), rng)
    x = rng.random((2, 8, 8))
    target = rng.random((2, 1, 8, 8))
    shifts = [1, 3]

    def loss():
        p = encode(enc, x)
        z = reparameterize(p, np.random.default_rng(99), SMALL.K, SMALL.N)
        rec = T.mse(decode(dec, T.roll_bins(z, shifts)), target)
        return T.add(rec, T.scale(T.gaussian_kl(p.mean, p.logvar), 0.01))

    for w in (enc, dec):
        for name in sorted(w.params):
            rep = _param_check(w, name, loss, seed)
            assert rep.passed, f"{w.kind}.{name}: {rep.max_rel_error:.3g}"
    rep = grad_check(lambda t: T.mse(decode(dec, T.roll_bins(reparameterize(encode(enc, t), np.random.default_rng(99), 2, 4), shifts)), target), x)
    assert rep.passed


@pytest.mark.parametrize("seed", range(5))
def test_classifier_and_baseline_graph_gradients(seed):
    rng = np.random.default_rng(seed)
    cls = _jitter_biases(init_weights("classifier", SMALL, rng), rng)
    base = _jitter_biases(init_weights("baseline", SMALL, rng), rng)
    z = rng.standard_normal((4, SMALL.latent_dim))
    x = rng.random((4, 8, 8))
    labels = rng.integers(0, 5, 4)
    for w, fn in ((cls, lambda: T.softmax_cross_entropy(classify(cls, z), labels)),
                  (base, lambda: T.softmax_cross_entropy(baseline_forward(base, x), labels))):
        for name in sorted(w.params):
            rep = _param_check(w, name, fn, seed)
            assert rep.passed, f"{w.kind}.{name}: {rep.max_rel_error:.3g}"
