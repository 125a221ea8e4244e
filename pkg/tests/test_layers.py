import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import gradcheck_fn
from gradcases import (
    LAYER_CASES,
    run_bn_inference_gradcheck,
    run_dropout_gradcheck,
    run_layer_gradcheck,
)
from oracles import naive_conv1d, random_conv_configs
from imunet import ops
from imunet.errors import ContractError, DimensionError
from imunet.layers import (
    BatchNorm1d,
    Conv1d,
    Dense,
    Dropout,
    MobileResNetBlock,
    ResidualBlock,
)
from imunet.tensor import Tensor, no_grad

SEEDS = range(5)


def _t(a):
    return Tensor(np.asarray(a, dtype=float))


def _conv(x, w, b=None, stride=1, padding=0, groups=1):
    return ops.conv1d(_t(x), _t(w), None if b is None else _t(b), stride, padding, groups).data


# -- convolution --------------------------------------------------------------


def test_conv_identity_kernel():
    x = np.arange(5.0).reshape(1, 1, 5)
    np.testing.assert_array_equal(_conv(x, [[[1.0]]], [0.0]), x)


def test_conv_adjacent_sums():
    assert _conv([[[1.0, 2.0, 3.0]]], [[[1.0, 1.0]]]).tolist() == [[[3.0, 5.0]]]


def test_conv_matches_naive_loop_on_stem_shape(backend):
    rng = np.random.default_rng(0)
    x, w, b = rng.normal(size=(2, 6, 200)), rng.normal(size=(8, 6, 3)), rng.normal(size=8)
    got = _conv(x, w, b, stride=2, padding=1)
    assert got.shape == (2, 8, 100)
    assert np.max(np.abs(got - naive_conv1d(x, w, b, 2, 1, 1))) < 1e-10


def test_conv_random_configs_match_naive_loop(backend):
    for x, w, b, s, p, g in random_conv_configs(30, seed=11):
        assert np.max(np.abs(_conv(x, w, b, s, p, g) - naive_conv1d(x, w, b, s, p, g))) < 1e-10


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 3), st.integers(1, 3), st.integers(1, 3), st.integers(1, 4),
       st.integers(1, 2), st.integers(0, 1000))
def test_grouped_conv_is_concatenation_of_slices(groups, cg, og, K, stride, seed):
    rng = np.random.default_rng(seed)
    C, O = groups * cg, groups * og
    x, w = rng.normal(size=(2, C, 11)), rng.normal(size=(O, cg, K))
    whole = _conv(x, w, stride=stride, padding=K // 2, groups=groups)
    parts = [
        _conv(x[:, i * cg : (i + 1) * cg], w[i * og : (i + 1) * og], stride=stride, padding=K // 2)
        for i in range(groups)
    ]
    assert np.max(np.abs(whole - np.concatenate(parts, axis=1))) < 1e-10


def test_depthwise_then_pointwise_identity():
    x = np.random.default_rng(1).normal(size=(2, 4, 9))
    h = _conv(x, np.ones((4, 1, 1)), groups=4)
    np.testing.assert_array_equal(_conv(h, np.eye(4)[:, :, None]), x)


def test_depthwise_separable_equals_composed_dense_kernel():
    rng = np.random.default_rng(2)
    C, O, K = 5, 7, 3
    x = rng.normal(size=(3, C, 20))
    dw, pw = rng.normal(size=(C, 1, K)), rng.normal(size=(O, C, 1))
    factored = _conv(_conv(x, dw, stride=2, padding=1, groups=C), pw)
    dense_kernel = pw[:, :, 0][:, :, None] * dw[:, 0, :][None, :, :]
    direct = _conv(x, dense_kernel, stride=2, padding=1)
    assert np.max(np.abs(factored - direct)) < 1e-10


def test_conv_channel_mismatch_and_short_input():
    layer = Conv1d(3, 4, 3)
    with pytest.raises(DimensionError):
        layer(_t(np.ones((1, 2, 10))))
    with pytest.raises(ContractError):
        ops.conv1d(_t(np.ones((1, 1, 2))), _t(np.ones((1, 1, 5))))


def test_depthwise_never_mixes_channels():
    layer = Conv1d(4, 4, 3, padding=1, groups=4, bias=False)
    x = np.zeros((1, 4, 10))
    x[0, 2] = np.random.default_rng(0).normal(size=10)
    with no_grad():
        y = layer(_t(x)).data
    assert np.all(y[0, [0, 1, 3]] == 0) and np.any(y[0, 2] != 0)


# -- normalization and activations --------------------------------------------


def test_batchnorm_inference_identity():
    bn = BatchNorm1d(3, eps=1e-12).eval()
    x = np.random.default_rng(0).normal(size=(2, 3, 5))
    assert np.max(np.abs(bn(_t(x)).data - x)) < 1e-6


def test_batchnorm_two_point_standardization():
    bn = BatchNorm1d(1, eps=1e-12)
    np.testing.assert_allclose(bn(_t([[[1.0, 3.0]]])).data, [[[-1.0, 1.0]]], atol=1e-9)
    with pytest.raises(ContractError):
        bn(_t([[[1.0]]]))


def test_batchnorm_running_stats_use_unbiased_variance():
    bn = BatchNorm1d(1)
    bn(_t([[[1.0, 3.0]]]))
    assert bn.running_mean.tolist() == pytest.approx([0.2])
    # unbiased variance of {1, 3} is 2
    assert bn.running_var.tolist() == pytest.approx([0.9 + 0.1 * 2.0])


def test_batchnorm_inference_is_affine():
    bn = BatchNorm1d(2)
    bn.running_mean[:] = [0.3, -1.0]
    bn.running_var[:] = [2.0, 0.5]
    bn.gamma.data[:] = [1.5, -0.7]
    bn.beta.data[:] = [0.1, 0.2]
    bn.eval()
    outs = [bn(_t(np.full((1, 2, 3), a))).data[0, :, 0] for a in (-1.0, 0.5, 4.0)]
    slope1 = (outs[1] - outs[0]) / 1.5
    slope2 = (outs[2] - outs[1]) / 3.5
    np.testing.assert_allclose(slope1, slope2, rtol=1e-12)


def test_elu_values():
    y = ops.elu(_t([0.0, 2.0, -1.0])).data
    assert y[0] == 0.0 and y[1] == 2.0
    assert abs(y[2] - (-0.6321205588)) < 1e-10


def test_elu_is_c1_at_zero():
    h = 1e-4
    y = ops.elu(_t([h, -h])).data
    assert abs(y[0] - h) <= h * h
    assert abs(y[1] + h) <= h * h


def test_relu_maxpool_dense_examples():
    assert ops.relu(_t([-1.0, 2.0])).data.tolist() == [0.0, 2.0]
    assert ops.maxpool1d(_t([[[1.0, 3.0, 2.0, 5.0]]]), 2, 2).data.tolist() == [[[3.0, 5.0]]]
    x = np.random.default_rng(0).normal(size=(3, 4))
    np.testing.assert_array_equal(ops.dense(_t(x), _t(np.eye(4)), _t(np.zeros(4))).data, x)
    with pytest.raises(ContractError):
        ops.maxpool1d(_t(np.ones((1, 1, 2))), 5)


def test_maxpool_tie_takes_first_index(backend):
    x = Tensor([[[2.0, 2.0, 1.0, 1.0]]], requires_grad=True)
    out = ops.maxpool1d(x, 2, 2)
    out.sum().backward()
    assert x.grad.tolist() == [[[1.0, 0.0, 1.0, 0.0]]]


def test_dropout_inverted_scaling_and_inference_identity():
    layer = Dropout(0.5, seed=3)
    x = np.ones((200, 50))
    y = layer(_t(x)).data
    assert set(np.unique(y)) <= {0.0, 2.0}
    assert abs(y.mean() - 1.0) < 0.05
    layer.eval()
    np.testing.assert_array_equal(layer(_t(x)).data, x)
    with pytest.raises(ContractError):
        ops.dropout(_t(x), 1.0, True, np.random.default_rng(0))


# -- blocks --------------------------------------------------------------------


def _zero_params(module):
    for _, p in module.named_parameters():
        p.data[:] = 0.0


def test_mobile_block_dead_branch_is_identity():
    block = MobileResNetBlock(4, 4)
    _zero_params(block)
    block.eval()
    x = np.abs(np.random.default_rng(0).normal(size=(2, 4, 10)))
    # ELU(0 + x) == x for x >= 0
    np.testing.assert_array_equal(block(_t(x)).data, x)


@pytest.mark.parametrize("cls", [MobileResNetBlock, ResidualBlock])
def test_stride_two_block_halves_length(cls):
    block = cls(6, 8, stride=2)
    assert block.shortcut is not None
    with no_grad():
        assert block(_t(np.ones((2, 6, 200)))).shape == (2, 8, 100)
    assert block.output_shape((6, 200)) == (8, 100)


def test_identity_shortcut_when_shapes_match():
    assert MobileResNetBlock(8, 8).shortcut is None
    assert ResidualBlock(8, 8).shortcut is None


def test_residual_mismatch_raises():
    block = MobileResNetBlock(4, 4)
    with pytest.raises(DimensionError):
        block._merge(_t(np.ones((1, 4, 5))), _t(np.ones((1, 4, 6))))


def test_resnet_block_param_formula():
    block = ResidualBlock(64, 64)
    n = sum(p.data.size for p in block.parameters())
    assert n == 2 * (3 * 64 * 64) + 2 * (2 * 64)


# -- finite-difference gradient checks ----------------------------------------


@pytest.mark.parametrize("seed", SEEDS)
@pytest.mark.parametrize("name", sorted(LAYER_CASES))
def test_layer_gradcheck(name, seed):
    assert run_layer_gradcheck(name, seed) < 1e-6


@pytest.mark.parametrize("seed", SEEDS)
def test_batchnorm_inference_gradcheck(seed):
    assert run_bn_inference_gradcheck(seed) < 1e-6


@pytest.mark.parametrize("seed", SEEDS)
def test_dropout_gradcheck_with_fixed_mask(seed):
    assert run_dropout_gradcheck(seed) < 1e-6


@pytest.mark.parametrize("seed", SEEDS)
def test_functional_conv_gradcheck_all_inputs(seed):
    rng = np.random.default_rng(seed)
    x, w, b = rng.normal(size=(2, 4, 7)), rng.normal(size=(2, 2, 3)), rng.normal(size=2)

    def fn(xt, wt, bt):
        return ops.conv1d(xt, wt, bt, stride=2, padding=1, groups=2)

    assert gradcheck_fn(fn, [x, w, b], seed) < 1e-6


def test_cost_rows_examples():
    stem = Conv1d(6, 64, 7, stride=2, padding=3, bias=False)
    (row,) = stem.cost_rows((6, 200), "stem.")
    assert row.macs == 7 * 6 * 64 * 100 == 268_800
    assert row.flops == 2 * row.macs
    (row,) = Dense(128, 512).cost_rows((128,), "fc.")
    assert row.params == 66_048
