import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import batchnorm_eval, batchnorm_train, conv_loops, temporal_attend_loops

from dgatnet import autodiff as ad
from dgatnet.autodiff import ParamStore, Tensor, gradcheck
from dgatnet.temporal import (init_temporal_attention, init_temporal_conv, temporal_attend,
                              temporal_conv)


def test_conv_matches_nested_loop_oracle():
    rng = np.random.default_rng(0)
    params = init_temporal_conv(ParamStore(0), "c", 64, 96)
    params.bias.value = rng.standard_normal(96)
    Z = rng.standard_normal((10, 64))
    out = ad.conv1d(Tensor(Z[None]), params.kernel, params.bias).value[0]
    ref = conv_loops(Z, params.kernel.value, params.bias.value)
    assert np.max(np.abs(out - ref)) <= 1e-10


def test_conv_gradient_on_small_input():
    rng = np.random.default_rng(1)
    params = init_temporal_conv(ParamStore(1), "c", 4, 5)
    Z = Tensor(rng.standard_normal((2, 6, 4)), requires_grad=True)
    d = rng.standard_normal((2, 6, 5))
    build = lambda: ad.sum(ad.mul(ad.conv1d(Z, params.kernel, params.bias), d))  # noqa: E731
    assert gradcheck(build, [Z, params.kernel, params.bias]) <= 1e-4


def test_identity_kernel_with_bypassed_norm():
    rng = np.random.default_rng(2)
    params = init_temporal_conv(ParamStore(2), "c", 4, 4)
    k = np.zeros((3, 4, 4))
    k[1] = np.eye(4)
    params.kernel.value = k
    params.bn.eps = 0.0
    Z = rng.standard_normal((1, 7, 4))
    out = temporal_conv(Tensor(Z), params, train=False).value
    np.testing.assert_allclose(out, np.maximum(Z, 0), atol=1e-15)


def test_single_window_sees_zero_padding():
    rng = np.random.default_rng(3)
    params = init_temporal_conv(ParamStore(3), "c", 5, 96)
    Z = rng.standard_normal((1, 1, 5))
    out = temporal_conv(Tensor(Z), params, train=False)
    assert out.shape == (1, 1, 96)
    centre = Z[0, 0] @ params.kernel.value[1] + params.bias.value
    np.testing.assert_allclose(out.value[0, 0], np.maximum(batchnorm_eval(
        centre, 1.0, 0.0, params.bn.running_mean, params.bn.running_var), 0), atol=1e-14)


@pytest.mark.parametrize("scope,axes", [("batch", (0, 1)), ("subject", (1,))])
def test_train_mode_normalization(scope, axes):
    rng = np.random.default_rng(4)
    params = init_temporal_conv(ParamStore(4), "c", 3, 4, bn_scope=scope)
    params.gamma.value = rng.uniform(0.5, 2.0, 4)
    params.beta.value = rng.standard_normal(4)
    Z = rng.standard_normal((3, 6, 3))
    out = temporal_conv(Tensor(Z), params, train=True).value
    conv = np.stack([conv_loops(z, params.kernel.value, params.bias.value) for z in Z])
    ref = np.maximum(batchnorm_train(conv, params.gamma.value, params.beta.value, axes), 0)
    np.testing.assert_allclose(out, ref, atol=1e-12)


def test_subject_scope_falls_back_for_one_window():
    params = init_temporal_conv(ParamStore(5), "c", 3, 4, bn_scope="subject")
    Z = np.random.default_rng(5).standard_normal((4, 1, 3))
    out = temporal_conv(Tensor(Z), params, train=True).value
    assert out.shape == (4, 1, 4) and np.isfinite(out).all()
    assert np.any(out > 0)


def test_bad_bn_scope():
    with pytest.raises(ValueError):
        init_temporal_conv(ParamStore(0), "c", 3, 4, bn_scope="layer")


def test_attend_matches_oracle():
    rng = np.random.default_rng(6)
    params = init_temporal_attention(ParamStore(6), "a", 96, 48)
    params.b1.value = rng.standard_normal(48) * 0.1
    u = rng.standard_normal((10, 96))
    v, beta = temporal_attend(Tensor(u[None]), params)
    ref_v, ref_beta = temporal_attend_loops(u, params.W1.value, params.b1.value, params.w2.value)
    assert np.max(np.abs(v.value[0] - ref_v)) <= 1e-12
    assert np.max(np.abs(beta.value[0] - ref_beta)) <= 1e-12
    assert abs(beta.value.sum() - 1) <= 1e-9


def test_attend_single_window_and_identical_rows():
    params = init_temporal_attention(ParamStore(7), "a", 4, 3)
    u = np.array([[[0.1, 0.2, -0.3, 0.4]]])
    v, beta = temporal_attend(Tensor(u), params)
    np.testing.assert_allclose(beta.value, [[1.0]])
    np.testing.assert_allclose(v.value, u[:, 0])
    v, beta = temporal_attend(Tensor(np.tile(u, (1, 5, 1))), params)
    np.testing.assert_allclose(beta.value, np.full((1, 5), 0.2), atol=1e-15)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 12), st.floats(0.1, 20.0))
def test_beta_is_a_distribution(seed, T, scale):
    rng = np.random.default_rng(seed)
    params = init_temporal_attention(ParamStore(seed), "a", 6, 4)
    _, beta = temporal_attend(Tensor(scale * rng.standard_normal((3, T, 6))), params)
    assert np.all(beta.value >= 0)
    assert np.all(np.abs(beta.value.sum(axis=-1) - 1) <= 1e-6)


def test_attention_is_order_equivariant():
    rng = np.random.default_rng(8)
    params = init_temporal_attention(ParamStore(8), "a", 6, 4)
    u = rng.standard_normal((1, 7, 6))
    perm = rng.permutation(7)
    v, beta = temporal_attend(Tensor(u), params)
    v_p, beta_p = temporal_attend(Tensor(u[:, perm]), params)
    np.testing.assert_allclose(v_p.value, v.value, atol=1e-13)
    np.testing.assert_allclose(beta_p.value[0], beta.value[0, perm], atol=1e-15)
