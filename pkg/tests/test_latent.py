import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from rls import tensor as T
from rls.latent import (LatentCode, azimuth_to_shift, latent_flatten, latent_unflatten,
                        permutation_matrix, roll_integer, roll_interpolative)
from rls.tensor import Tensor

from oracles import roll_by_loop

finite = st.floats(-1e6, 1e6, allow_nan=False, allow_infinity=False)


@st.composite
def latents(draw, max_k=4, max_n=16):
    k = draw(st.integers(1, max_k))
    n = draw(st.integers(2, max_n))
    return LatentCode(draw(arrays(np.float64, (k, n), elements=finite)))


def _sub(vals):
    return LatentCode(np.array([vals], dtype=float))


@pytest.mark.parametrize("s, expected", [(0, [1, 2, 3, 4]), (1, [4, 1, 2, 3]), (4, [1, 2, 3, 4]), (-1, [2, 3, 4, 1])])
def test_roll_integer_examples(s, expected):
    assert roll_integer(_sub([1, 2, 3, 4]), s).values[0].tolist() == expected


def test_roll_interpolative_examples():
    assert roll_interpolative(_sub([1, 0, 0, 0]), 0.5).values[0].tolist() == [0.5, 0.5, 0, 0]
    z = _sub([1, 2, 3, 4])
    assert roll_interpolative(z, 3.0) == roll_integer(z, 3)


def test_interpolative_roll_does_not_compose():
    z = _sub([1, 0, 0, 0])
    two_step = roll_interpolative(roll_interpolative(z, 0.25), 0.75)
    assert not np.allclose(two_step.values, roll_interpolative(z, 1.0).values)


def test_azimuth_to_shift_examples():
    assert azimuth_to_shift(0, 36) == 0
    assert azimuth_to_shift(90, 36) == 9
    assert azimuth_to_shift(370, 36, "nearest") == 1
    assert azimuth_to_shift(355, 36, "nearest") == 0  # 35.5 rounds up and wraps
    assert azimuth_to_shift(95, 36, "continuous") == pytest.approx(9.5)


@given(theta=st.floats(-1e4, 1e4), n=st.integers(2, 72))
def test_azimuth_mapping_is_periodic(theta, n):
    assert azimuth_to_shift(theta, n) == azimuth_to_shift(theta + 360.0, n)


def test_permutation_matrix_examples():
    assert permutation_matrix(2, 1).tolist() == [[0, 1], [1, 0]]
    assert np.array_equal(permutation_matrix(3, 3), np.eye(3))


@given(n=st.integers(2, 16), s=st.integers(-40, 40))
def test_permutation_matrix_is_orthogonal_permutation(n, s):
    R = permutation_matrix(n, s)
    assert np.all((R == 0) | (R == 1))
    assert np.all(R.sum(axis=0) == 1) and np.all(R.sum(axis=1) == 1)
    assert np.array_equal(R.T @ R, np.eye(n))
    assert np.array_equal(np.linalg.matrix_power(permutation_matrix(n, 1), n), np.eye(n))


@settings(max_examples=200)
@given(z=latents(), s=st.integers(-100, 100))
def test_roll_equals_permutation_matrix_and_loop(z, s):
    out = roll_integer(z, s).values
    R = permutation_matrix(z.N, s)
    for k in range(z.K):
        assert np.array_equal(out[k], R @ z.values[k])
        assert np.array_equal(out[k], roll_by_loop(z.values[k], s))


@settings(max_examples=200)
@given(z=latents(), a=st.integers(-100, 100), b=st.integers(-100, 100))
def test_roll_group_action(z, a, b):
    assert roll_integer(roll_integer(z, a), b) == roll_integer(z, a + b)
    assert roll_integer(z, z.N) == z
    assert np.isclose(np.linalg.norm(roll_integer(z, a).values), np.linalg.norm(z.values), rtol=1e-12)


@settings(max_examples=200)
@given(z=latents(), s=st.floats(-50, 50, allow_nan=False))
def test_interpolative_roll_contracts_norm(z, s):
    out = roll_interpolative(z, s)
    assert np.linalg.norm(out.values) <= np.linalg.norm(z.values) * (1 + 1e-12)


@given(z=latents(), s=st.integers(-30, 30))
def test_interpolative_equals_integer_at_integers(z, s):
    assert roll_interpolative(z, float(s)) == roll_integer(z, s)


def test_flatten_layout():
    z = latent_unflatten(np.arange(6.0), 2, 3)
    assert z.values.tolist() == [[0, 1, 2], [3, 4, 5]]
    one = LatentCode(np.arange(5.0)[None])
    assert np.array_equal(latent_flatten(one), np.arange(5.0))
    with pytest.raises(ValueError):
        latent_unflatten(np.arange(7.0), 2, 3)


@given(z=latents(), s=st.integers(-20, 20))
def test_flatten_roundtrip_and_blockwise_roll(z, s):
    assert latent_unflatten(latent_flatten(z), z.K, z.N) == z
    flat = latent_flatten(z)
    blockwise = np.concatenate([np.roll(flat[k * z.N:(k + 1) * z.N], s) for k in range(z.K)])
    assert np.array_equal(latent_flatten(roll_integer(z, s)), blockwise)


@settings(max_examples=100)
@given(z=latents(max_k=3, max_n=12), s=st.integers(-30, 30), seed=st.integers(0, 2**32 - 1))
def test_kl_is_roll_invariant(z, s, seed):
    logvar = np.random.default_rng(seed).uniform(-3, 3, z.values.shape)
    mu = np.clip(z.values, -10, 10)
    kl = T.gaussian_kl(Tensor(mu), Tensor(logvar)).item()
    kl_rolled = T.gaussian_kl(Tensor(roll_integer(mu, s)), Tensor(roll_integer(logvar, s))).item()
    assert abs(kl - kl_rolled) <= 1e-12 * max(1.0, abs(kl))


def test_latent_code_validates_extents():
    with pytest.raises(ValueError):
        LatentCode(np.zeros((2, 1)))
    with pytest.raises(ValueError):
        LatentCode(np.zeros(4))


def test_tensor_roll_matches_latent_roll():
    rng = np.random.default_rng(0)
    z = rng.standard_normal((3, 2, 7))
    shifts = [0, 3, -5]
    out = T.roll_bins(Tensor(z), shifts).data
    for b, s in enumerate(shifts):
        assert np.array_equal(out[b], roll_integer(z[b], s))
    frac = T.roll_bins(Tensor(z), shifts, frac=[0.0, 0.5, 0.25]).data
    for b, (s, f) in enumerate(zip(shifts, [0.0, 0.5, 0.25])):
        np.testing.assert_allclose(frac[b], roll_interpolative(z[b], s + f), atol=1e-15)
