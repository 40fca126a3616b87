import math

import numpy as np
import pytest

from rls import tensor as T
from rls.data import ChipSet, generate_dataset, make_class_templates
from rls.latent import roll_integer
from rls.networks import NetConfig, classify, decode, encode, init_weights, predict
from rls.tensor import Tensor
from rls.training import (AdamState, NumericalError, PairBatch, PairSampler, TrainConfig, adam_update,
                          beta_at, classifier_train_step, latent_consistency, max_offset_at,
                          pair_similarity, rls_loss, rls_train_step, train_baseline, train_classifier,
                          train_rls)

TINY = NetConfig(K=2, N=8, channels=(4, 4, 4), dec_hidden=32, hidden=16)


def chi2_critical(df: int, z: float = 2.3263) -> float:
    """Upper 1% point of chi-square via the Wilson-Hilferty cube approximation."""
    a = 2.0 / (9.0 * df)
    return df * (1.0 - a + z * math.sqrt(a)) ** 3


def views(n_objects, azimuths, seed=0, size=64):
    """Random chips for ``n_objects`` objects, one chip per listed azimuth."""
    rng = np.random.default_rng(seed)
    n = n_objects * len(azimuths)
    return ChipSet(rng.random((n, size, size)), np.repeat(np.arange(n_objects), len(azimuths)),
                   np.zeros(n, np.int64), np.tile(np.asarray(azimuths, float), n_objects))


# ---------------------------------------------------------------- config / schedules

def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(epochs=0)
    with pytest.raises(ValueError):
        TrainConfig(lr=0.0)
    with pytest.raises(ValueError):
        TrainConfig(warmup_frac=1.5)


def test_beta_warmup_and_curriculum():
    cfg = TrainConfig(beta=2.0, warmup_frac=0.1, curriculum_frac=0.5)
    assert beta_at(0, 100, cfg) == 0.0 and beta_at(5, 100, cfg) == 1.0 and beta_at(50, 100, cfg) == 2.0
    assert max_offset_at(0, 100, cfg, 36) == 1
    assert max_offset_at(25, 100, cfg, 36) == 9
    assert max_offset_at(50, 100, cfg, 36) is None


# ---------------------------------------------------------------- adam

def test_adam_zero_gradient_leaves_params():
    p = Tensor(np.array([1.0, -2.0]), requires_grad=True)
    adam_update([p], [np.zeros(2)], AdamState())
    assert p.data.tolist() == [1.0, -2.0]


@pytest.mark.parametrize("g", [1e-3, 0.5, 7.0, -300.0])
def test_adam_first_step_is_lr_times_sign(g):
    p = Tensor(np.array([0.0]), requires_grad=True)
    adam_update([p], [np.array([g])], AdamState(lr=1e-3))
    assert p.data[0] == pytest.approx(-1e-3 * np.sign(g), rel=1e-4)


def test_adam_descends_quadratic_bowl():
    target = np.array([3.0, -1.0, 0.5])
    p = Tensor(np.zeros(3), requires_grad=True)
    st = AdamState(lr=0.05)
    start = np.linalg.norm(p.data - target)
    for _ in range(100):
        adam_update([p], [2 * (p.data - target)], st)
    assert np.linalg.norm(p.data - target) < start and st.step == 100


# ---------------------------------------------------------------- pairs

def test_pairs_come_from_one_object_with_binned_shift():
    azs = [0, 50, 100, 200, 310]
    cs = views(3, azs)
    b = PairSampler(cs, 36).sample(200, np.random.default_rng(0))
    assert np.array_equal(cs.class_ids[b.src_index], cs.class_ids[b.tgt_index])
    bins = np.floor(cs.azimuths * 36 / 360 + 0.5).astype(int) % 36
    assert np.array_equal(b.shifts, (bins[b.tgt_index] - bins[b.src_index]) % 36)
    assert np.all(b.src_index != b.tgt_index) and np.all(b.shifts != 0)


def test_two_views_give_plus_minus_d():
    b = PairSampler(views(4, [0, 70]), 36).sample(100, np.random.default_rng(1))
    assert set(b.shifts.tolist()) == {7, 29}


def test_objects_with_one_bin_are_excluded():
    cs = views(2, [10, 90])
    lone = views(1, [45], seed=3)
    lone.class_ids[:] = 9
    both = ChipSet(*[np.concatenate([getattr(cs, f), getattr(lone, f)]) for f in ("pixels", "class_ids", "instance_ids", "azimuths")])
    sampler = PairSampler(both, 36)
    assert sampler.excluded == 1
    assert 9 not in both.class_ids[sampler.sample(50, np.random.default_rng(0)).src_index]


def test_shift_distribution_is_uniform():
    n = 12
    sampler = PairSampler(views(3, np.arange(n) * 30.0, size=1), n)  # pixels irrelevant here
    shifts = sampler.sample(100_000, np.random.default_rng(7)).shifts
    counts = np.bincount(shifts, minlength=n)[1:]
    expected = len(shifts) / (n - 1)
    chi2 = float(np.sum((counts - expected) ** 2 / expected))
    assert counts.sum() == len(shifts)
    assert chi2 < chi2_critical(n - 2)


def test_curriculum_limits_offset():
    b = PairSampler(views(2, np.arange(36) * 10.0), 36).sample(300, np.random.default_rng(2), max_offset=3)
    d = np.minimum(b.shifts, 36 - b.shifts)
    assert d.max() <= 3 and d.min() >= 1


# ---------------------------------------------------------------- rls step

def test_zero_shift_identical_pair_is_plain_vae_step():
    rng = np.random.default_rng(0)
    enc, dec = init_weights("encoder", TINY, rng), init_weights("decoder", TINY, rng)
    x = rng.random((3, 64, 64))
    batch = PairBatch(x, x, np.zeros(3, np.int64), np.zeros(3), np.arange(3), np.arange(3))
    total, _, _ = rls_loss(enc, dec, batch, 0.5, np.random.default_rng(4))
    p = encode(enc, x)
    z = T.reshape(T.add(p.mean, T.mul(T.exp(T.scale(p.logvar, 0.5)), Tensor(np.random.default_rng(4).standard_normal(p.mean.shape)))), (3, -1))
    plain = T.mse(decode(dec, z), x[:, None]).item() + 0.5 * T.gaussian_kl(p.mean, p.logvar).item() / 3
    assert total.item() == pytest.approx(plain, rel=1e-12)


def test_rls_loss_decreases_on_toy_set():
    tpl = make_class_templates(2, seed=4)
    chips, _ = generate_dataset(tpl, 40, (0, 360), "rls-train", seed=5, n_instances=1)
    rng = np.random.default_rng(0)
    enc, dec = init_weights("encoder", TINY, rng), init_weights("decoder", TINY, rng)
    sampler = PairSampler(chips, TINY.N)
    opt = AdamState(lr=2e-3)
    losses = [rls_train_step(enc, dec, sampler.sample(8, rng), opt, 0.0, rng).total for _ in range(200)]
    assert all(l >= 0 for l in losses)
    assert np.median(losses[-20:]) < np.median(losses[:20])


def test_non_finite_loss_aborts_with_step_and_seed():
    rng = np.random.default_rng(0)
    enc, dec = init_weights("encoder", TINY, rng), init_weights("decoder", TINY, rng)
    cs = views(1, [0, 90])
    cs.pixels[:] = np.nan
    with pytest.raises(NumericalError) as exc:
        rls_train_step(enc, dec, PairSampler(cs, 8).sample(2, rng), AdamState(step=4), 0.0, rng, seed=17)
    assert exc.value.step == 4 and exc.value.seed == 17


def test_train_rls_is_bitwise_reproducible():
    cs = views(2, [0, 45, 90, 180], seed=2)
    cfg = TrainConfig(epochs=2, batch_size=4, seed=3, K=TINY.K, N=TINY.N, beta=1e-3)
    a = train_rls(cs, cfg, TINY)
    b = train_rls(cs, cfg, TINY)
    assert a[0].digest() == b[0].digest() and a[1].digest() == b[1].digest() and a[2] == b[2]
    c = train_rls(cs, TrainConfig(epochs=2, batch_size=4, seed=4, K=TINY.K, N=TINY.N), TINY)
    assert c[0].digest() != a[0].digest()
    assert all(row["kl"] >= 0 for row in a[2])


# ---------------------------------------------------------------- classifier

def test_label_out_of_range_rejected():
    cls = init_weights("classifier", TINY, np.random.default_rng(0))
    with pytest.raises(ValueError):
        classifier_train_step(cls, np.zeros((2, 16)), np.array([0, 5]), AdamState(), False, np.random.default_rng(0))


def test_encoder_stays_frozen_and_noaug_is_deterministic():
    enc = init_weights("encoder", TINY, np.random.default_rng(0))
    before = enc.digest()
    cs = views(5, [0, 20], seed=1)
    cfg = TrainConfig(epochs=3, batch_size=4, seed=2, K=TINY.K, N=TINY.N, augmentation=False)
    a, _ = train_classifier(enc, cs, cfg)
    b, _ = train_classifier(enc, cs, cfg)
    assert enc.digest() == before
    assert a.digest() == b.digest()
    assert all(t.grad is None or not np.any(t.grad) for t in enc.tensors())


def test_single_bin_augmentation_is_a_no_op():
    net = NetConfig(K=6, N=1, channels=(4, 4, 4))
    enc = init_weights("encoder", net, np.random.default_rng(0))
    cs = views(5, [0, 20], seed=1)
    aug, _ = train_classifier(enc, cs, TrainConfig(epochs=2, batch_size=4, seed=1, K=6, N=1, augmentation=True))
    plain, _ = train_classifier(enc, cs, TrainConfig(epochs=2, batch_size=4, seed=1, K=6, N=1, augmentation=False))
    assert aug.digest() == plain.digest()


def test_augmentation_recovers_unseen_rolls_on_rollable_oracle():
    """Class is a roll-invariant property; train shifts and test shifts never overlap."""
    K, N, C = 3, 12, 5
    net = NetConfig(K=K, N=N, n_classes=C, hidden=32)
    rng = np.random.default_rng(0)
    protos = rng.standard_normal((C, K, N))

    def make(shift_range, per_class):
        z, y = [], []
        for c in range(C):
            for s in rng.integers(*shift_range, per_class):
                z.append(roll_integer(protos[c] + 0.05 * rng.standard_normal((K, N)), s))
                y.append(c)
        return np.array(z).reshape(len(z), -1), np.array(y)

    ztr, ytr = make((-1, 2), 40)
    zte, yte = make((5, 8), 40)
    accs = {}
    for aug in (True, False):
        cls = init_weights("classifier", net, np.random.default_rng(1))
        opt = AdamState(lr=3e-3)
        arng = np.random.default_rng(2)
        for _ in range(60):
            order = arng.permutation(len(ytr))
            for i in range(0, len(order), 20):
                b = order[i:i + 20]
                classifier_train_step(cls, ztr[b], ytr[b], opt, aug, arng)
        accs[aug] = float(np.mean(predict(classify(cls, zte)) == yte))
    assert accs[True] == 1.0
    assert accs[False] < accs[True]


def test_baseline_training_runs_and_is_reproducible():
    cs = views(5, [0], seed=3)
    cfg = TrainConfig(epochs=2, batch_size=5, seed=0)
    a, h = train_baseline(cs, cfg, TINY)
    b, _ = train_baseline(cs, cfg, TINY)
    assert a.digest() == b.digest() and len(h) == 2


# ---------------------------------------------------------------- consistency

def test_identical_pair_similarity_is_one():
    z = np.random.default_rng(0).standard_normal((4, 2 * 5))
    rolled, unrolled = pair_similarity(z, z, np.zeros(4, int), 2, 5)
    np.testing.assert_allclose(rolled, 1.0, rtol=0, atol=1e-15)
    np.testing.assert_allclose(unrolled, 1.0, rtol=0, atol=1e-15)


def test_rolled_pair_similarity_detects_exact_roll():
    z = np.random.default_rng(1).standard_normal((3, 2, 6))
    shifts = np.array([1, 2, 5])
    target = np.stack([roll_integer(a, s) for a, s in zip(z, shifts)])
    rolled, unrolled = pair_similarity(z.reshape(3, -1), target.reshape(3, -1), shifts, 2, 6)
    np.testing.assert_allclose(rolled, 1.0, atol=1e-15)
    assert np.all(unrolled < 1.0)


@pytest.fixture(scope="module")
def omni_chips():
    tpl = make_class_templates(3, seed=0)
    return generate_dataset(tpl, 60, (0, 360), "rls-train", seed=1)[0]


def test_untrained_encoder_null_centered(omni_chips):
    enc = init_weights("encoder", NetConfig(channels=(8, 16, 32)), np.random.default_rng([0, 1]))
    rep = latent_consistency(enc, omni_chips, 500, center=True)
    assert rep.n_pairs == 500 and abs(rep.delta) < 0.05


@pytest.mark.xfail(strict=True, reason="untrained ReLU encoders share a large common latent component; "
                                       "rolling it away lowers the uncentered cosine (see README)")
def test_untrained_encoder_null_uncentered(omni_chips):
    enc = init_weights("encoder", NetConfig(channels=(8, 16, 32)), np.random.default_rng([0, 1]))
    rep = latent_consistency(enc, omni_chips, 500)
    assert abs(rep.delta) < 0.05
