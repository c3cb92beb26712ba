import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from divcolor import functional as F
from divcolor.autograd import Tensor, concat, first_nonfinite, no_grad
from divcolor.errors import DegenerateBatchError, DimensionError, UsageError
from divcolor.gradcheck import check_gradients
from divcolor.optim import Adam, AdamState, adam_step

from oracles import conv2d_loops, upsample_scalar


# -- tape ----------------------------------------------------------------------


def test_topological_order_puts_inputs_first():
    a = Tensor(np.ones(3), True)
    b = a * 2.0
    c = b + a
    d = (c * b).sum()
    order = d.topological_order()
    pos = {id(t): i for i, t in enumerate(order)}
    for t in order:
        for p in t._parents:
            assert pos[id(p)] < pos[id(t)]
    assert len(order) == len({id(t) for t in order})


def test_shared_subexpression_gradient_accumulates():
    x = Tensor(np.array([1.5, -2.0]), True)
    y = x * x + x * 3.0
    y.sum().backward()
    np.testing.assert_allclose(x.grad, 2 * x.data + 3.0)


def test_backward_of_sum_is_sum_of_backwards():
    rng = np.random.default_rng(0)
    data = rng.standard_normal((3, 4))

    def f1(t):
        return (t.exp() * 0.5).sum()

    def f2(t):
        return (t.square() @ np.ones((4, 1))).sum()

    grads = []
    for fn in (f1, f2, lambda t: f1(t) + f2(t)):
        t = Tensor(data, True)
        fn(t).backward()
        grads.append(t.grad)
    np.testing.assert_allclose(grads[2], grads[0] + grads[1], rtol=1e-13)


def test_no_grad_records_nothing():
    x = Tensor(np.ones(2), True)
    with no_grad():
        y = x * 2
    assert not y.requires_grad


def test_broadcast_gradients_reduce_to_operand_shape():
    a = Tensor(np.ones((3, 4)), True)
    b = Tensor(np.arange(4.0), True)
    (a * b).sum().backward()
    assert b.grad.shape == (4,)
    np.testing.assert_allclose(b.grad, 3.0)


def test_fancy_index_gradient_scatters_with_repeats():
    x = Tensor(np.arange(5.0), True)
    x[np.array([0, 0, 3])].sum().backward()
    np.testing.assert_array_equal(x.grad, [2, 0, 0, 1, 0])


def test_first_nonfinite_names_the_producing_op():
    x = Tensor(np.array([0.0, 1.0]), True)
    with np.errstate(divide="ignore"):
        y = (x.log() * 2.0).sum()
    bad = first_nonfinite(y)
    assert bad is not None and bad.op == "log"


def test_concat_routes_gradient():
    a, b = Tensor(np.ones((1, 2)), True), Tensor(np.ones((2, 2)), True)
    (concat([a, b], 0) * np.arange(6.0).reshape(3, 2)).sum().backward()
    np.testing.assert_array_equal(a.grad, [[0, 1]])
    np.testing.assert_array_equal(b.grad, [[2, 3], [4, 5]])


def test_forward_is_bit_identical_when_repeated():
    rng = np.random.default_rng(3)
    x, w = rng.standard_normal((2, 3, 6, 6)), rng.standard_normal((4, 3, 3, 3))
    a = F.conv2d(x, w, 2, 1).data
    b = F.conv2d(x, w, 2, 1).data
    assert a.tobytes() == b.tobytes()


# -- conv2d --------------------------------------------------------------------


@pytest.mark.parametrize("method", ["im2col", "loops"])
def test_conv_identity_kernel(method):
    x = np.arange(9.0).reshape(1, 1, 3, 3)
    out = F.conv2d(x, np.ones((1, 1, 1, 1)), 1, 0, method=method)
    np.testing.assert_array_equal(out.data, x)


@pytest.mark.parametrize("method", ["im2col", "loops"])
def test_conv_counts_overlap(method):
    out = F.conv2d(np.ones((1, 1, 4, 4)), np.ones((1, 1, 3, 3)), 1, 0, method=method)
    np.testing.assert_array_equal(out.data, np.full((1, 1, 2, 2), 9.0))


@pytest.mark.parametrize("method", ["im2col", "loops"])
def test_conv_matches_loop_oracle_stride2_pad1(method):
    rng = np.random.default_rng(11)
    x, w = rng.standard_normal((1, 2, 5, 5)), rng.standard_normal((3, 2, 3, 3))
    got = F.conv2d(x, w, 2, 1, method=method).data
    assert got.shape == (1, 3, 3, 3)
    assert np.abs(got - conv2d_loops(x, w, 2, 1)).max() < 1e-12


@settings(max_examples=30, deadline=None)
@given(
    n=st.integers(1, 2), c=st.integers(1, 3), o=st.integers(1, 3), k=st.integers(1, 4),
    extra=st.integers(0, 4), stride=st.integers(1, 3), pad=st.tuples(st.integers(0, 2), st.integers(0, 2)),
    seed=st.integers(0, 2**16),
)
def test_conv_paths_agree_with_oracle(n, c, o, k, extra, stride, pad, seed):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, c, k + extra, k + extra))
    w = rng.standard_normal((o, c, k, k))
    b = rng.standard_normal(o)
    expected = conv2d_loops(x, w, stride, pad, b)
    for method in ("im2col", "loops"):
        got = F.conv2d(x, w, stride, pad, bias=b, method=method).data
        assert np.abs(got - expected).max() < 1e-12


def test_conv_output_extent_formula():
    for h, k, s, p in [(16, 5, 2, 2), (7, 3, 1, 0), (9, 4, 3, 1)]:
        out = F.conv2d(np.zeros((1, 1, h, h)), np.zeros((1, 1, k, k)), s, p)
        assert out.shape[2] == (h + 2 * p - k) // s + 1


def test_conv_channel_mismatch_is_dimension_error():
    with pytest.raises(DimensionError):
        F.conv2d(np.zeros((1, 2, 4, 4)), np.zeros((1, 3, 3, 3)))


def test_same_padding_keeps_ceil_extent():
    for size in (1, 2, 4, 8, 16, 64):
        for k, s in ((5, 2), (4, 2), (4, 1), (5, 1)):
            pad = F.same_padding(size, k, s)
            assert F.conv_output_size(size, k, s, pad) == -(-size // s)


# -- bilinear ------------------------------------------------------------------


def test_upsample_factor_one_is_identity():
    x = np.random.default_rng(0).standard_normal((2, 3, 4, 5))
    np.testing.assert_array_equal(F.bilinear_upsample(x, 1).data, x)


def test_upsample_hand_row():
    out = F.bilinear_upsample(np.array([[[[0.0, 1.0]]]]), 2).data
    np.testing.assert_allclose(out[0, 0], [[0, 0.25, 0.75, 1]] * 2, atol=1e-15)


@settings(max_examples=25, deadline=None)
@given(h=st.integers(1, 5), w=st.integers(1, 5), factor=st.integers(1, 4), seed=st.integers(0, 2**16))
def test_upsample_matches_scalar_oracle(h, w, factor, seed):
    x = np.random.default_rng(seed).standard_normal((1, 2, h, w))
    np.testing.assert_allclose(F.bilinear_upsample(x, factor).data, upsample_scalar(x, factor), atol=1e-12)


def test_upsample_preserves_constants():
    out = F.bilinear_upsample(np.full((1, 1, 3, 2), 0.7), 4).data
    np.testing.assert_allclose(out, 0.7, atol=1e-15)
    assert out.shape == (1, 1, 12, 8)


def test_upsample_rejects_factor_zero():
    with pytest.raises(ValueError):
        F.bilinear_upsample(np.zeros((1, 1, 2, 2)), 0)


# -- batchnorm -----------------------------------------------------------------


def test_batchnorm_train_normalises_each_channel():
    x = np.random.default_rng(2).standard_normal((4, 3, 2, 2)) * 5 + 2
    out = F.batchnorm(x, np.ones(3), np.zeros(3), "train").data
    assert np.abs(out.mean(axis=(0, 2, 3))).max() < 1e-10
    assert np.abs(out.var(axis=(0, 2, 3)) - 1).max() < 1e-4  # eps shrinks the variance slightly
    assert np.abs(out.var(axis=(0, 2, 3)) * (1 + 1e-5 / x.var(axis=(0, 2, 3))) - 1).max() < 1e-8


def test_batchnorm_passes_standardised_input_through():
    rng = np.random.default_rng(5)
    x = rng.standard_normal((64, 2))
    x = (x - x.mean(0)) / x.std(0)
    out = F.batchnorm(x, np.ones(2), np.zeros(2), "train").data
    np.testing.assert_allclose(out, x, rtol=1e-5)  # scale error is eps / 2


def test_batchnorm_running_stats_momentum():
    x = np.random.default_rng(1).standard_normal((5, 2)) + 3
    stats = F.RunningStats(2)
    F.batchnorm(x, np.ones(2), np.zeros(2), "train", stats)
    np.testing.assert_allclose(stats.mean, 0.1 * x.mean(0))
    np.testing.assert_allclose(stats.var, 0.9 + 0.1 * x.var(0, ddof=1))


def test_batchnorm_eval_uses_running_stats():
    stats = F.RunningStats(1)
    stats.mean, stats.var = np.array([2.0]), np.array([4.0])
    out = F.batchnorm(np.array([[4.0], [0.0]]), np.ones(1), np.zeros(1), "eval", stats).data
    np.testing.assert_allclose(out.ravel(), [2 / np.sqrt(4 + 1e-5), -2 / np.sqrt(4 + 1e-5)])


def test_batchnorm_single_item_batch_is_degenerate():
    with pytest.raises(DegenerateBatchError):
        F.batchnorm(np.ones((1, 3, 2, 2)), np.ones(3), np.zeros(3), "train")


def test_batchnorm_backward_on_4x3x2x2():
    rng = np.random.default_rng(9)
    err = check_gradients(lambda x, g, b: F.batchnorm(x, g, b, "train"),
                          [rng.standard_normal((4, 3, 2, 2)), rng.standard_normal(3), rng.standard_normal(3)])
    assert err < 1e-5


# -- dense layers and activations --------------------------------------------


def test_fully_connected_identity_and_hand_sum():
    x = np.array([[1.0, 2.0]])
    np.testing.assert_array_equal(F.fully_connected(x, np.eye(2), np.zeros(2)).data, x)
    w = np.array([[1.0, 0.0, 2.0], [0.0, 1.0, 1.0]])
    np.testing.assert_array_equal(F.fully_connected(x, w, np.ones(3)).data, [[2.0, 3.0, 5.0]])


def test_fully_connected_inner_mismatch():
    with pytest.raises(DimensionError):
        F.fully_connected(np.ones((1, 3)), np.ones((2, 2)))


def test_fully_connected_gradient():
    rng = np.random.default_rng(4)
    err = check_gradients(F.fully_connected, [rng.standard_normal((3, 5)), rng.standard_normal((5, 2)),
                                              rng.standard_normal(2)])
    assert err < 1e-5


def test_relu_values():
    np.testing.assert_array_equal(F.relu(np.array([-1.0, 2.0])).data, [0.0, 2.0])


def test_softmax_uniform_and_normalised():
    np.testing.assert_allclose(F.softmax(np.zeros((1, 8)), axis=1).data, 0.125, atol=1e-15)
    big = np.random.default_rng(0).standard_normal((5, 7)) * 300
    s = F.softmax(big, axis=1).data
    assert np.isfinite(s).all()
    assert np.abs(s.sum(axis=1) - 1).max() < 1e-12


@pytest.mark.parametrize("op", [lambda x: F.softmax(x, axis=1), F.tanh])
def test_activation_gradients(op):
    err = check_gradients(op, [np.random.default_rng(8).standard_normal((3, 6))])
    assert err < 1e-6


def test_logsumexp_stable_for_large_inputs():
    x = np.array([[1000.0, 1000.0]])
    np.testing.assert_allclose(F.logsumexp(x, axis=1).data, 1000 + np.log(2))


# -- Adam ----------------------------------------------------------------------


def test_adam_zero_gradient_leaves_parameter():
    state = AdamState(lr=0.1)
    (p,) = adam_step([np.array([1.5])], [np.zeros(1)], state)
    assert p[0] == 1.5


def test_adam_first_step_magnitude_is_lr():
    state = AdamState(lr=0.1)
    (p,) = adam_step([np.array([0.0])], [np.array([1.0])], state)
    # bias-corrected m = v = 1, so the step is lr / (1 + eps)
    assert p[0] == pytest.approx(-0.1 / (1 + 1e-8), abs=1e-15)


def test_adam_minimises_quadratic_bowl():
    x = Tensor(np.array([3.0]), True)
    opt = Adam([x], lr=0.1)
    for _ in range(200):
        opt.zero_grad()
        (x * x).sum().backward()
        opt.step()
    assert abs(x.data[0]) < 1e-2


def test_adam_defaults():
    s = AdamState()
    assert (s.lr, s.beta1, s.beta2, s.eps) == (2e-4, 0.5, 0.999, 1e-8)


def test_adam_rejects_mismatched_lists():
    with pytest.raises((UsageError, ValueError)):
        adam_step([np.zeros(1)], [], AdamState())
