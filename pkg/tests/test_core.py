import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from popgraph.core import (
    AdamState,
    NondeterminismError,
    ParamStore,
    PolynomialDecay,
    TapeError,
    Tensor,
    adam_step,
    apply_primitive,
    backward,
    finite_difference_check,
    load_checkpoint,
    save_checkpoint,
)
from popgraph.core import tensor as T


def leaf(x):
    return Tensor(np.asarray(x, dtype=np.float64), requires_grad=True)


def numeric_grad(f, x, eps=1e-6):
    g = np.zeros_like(x)
    for i in np.ndindex(x.shape):
        old = x[i]
        x[i] = old + eps
        up = f(x)
        x[i] = old - eps
        down = f(x)
        x[i] = old
        g[i] = (up - down) / (2 * eps)
    return g


# ------------------------------------------------------------------ primitives


def test_softmax_of_equal_logits_is_uniform():
    np.testing.assert_allclose(T.softmax(Tensor([0.0, 0.0])).data, [0.5, 0.5])


def test_matmul_identity(rng):
    a = rng.normal(size=(3, 3))
    np.testing.assert_array_equal(T.matmul(np.eye(3), a).data, a)


def test_layer_norm_of_constant_row_is_zero():
    out = T.layer_norm(Tensor([5.0, 5.0, 5.0]), np.ones(3), np.zeros(3))
    np.testing.assert_array_equal(out.data, [0.0, 0.0, 0.0])


def test_apply_primitive_dispatch_and_unknown():
    out = apply_primitive("add", [Tensor([1.0]), Tensor([2.0])])
    assert out.data.tolist() == [3.0]
    with pytest.raises(ValueError, match="unknown primitive"):
        apply_primitive("nope", [])


def test_shape_mismatch_names_primitive_and_shapes():
    with pytest.raises(ValueError, match=r"matmul.*\(2, 3\).*\(2, 3\)"):
        T.matmul(np.ones((2, 3)), np.ones((2, 3)))


def test_embedding_index_out_of_range_names_index_and_size():
    with pytest.raises(IndexError, match=r"5.*4"):
        T.embedding(np.zeros((4, 2)), np.array([0, 5]))


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 4), st.integers(1, 6)), elements=st.floats(-30, 30)))
def test_softmax_rows_are_distributions(x):
    p = T.softmax(Tensor(x)).data
    assert (p >= 0).all()
    np.testing.assert_allclose(p.sum(axis=-1), 1.0, atol=1e-9)


# ------------------------------------------------------------------ backward


def test_grad_of_sum_of_squares():
    x = leaf([1.0, 2.0, 3.0])
    backward(T.sum_(x * x))
    np.testing.assert_array_equal(x.grad, [2.0, 4.0, 6.0])


def test_grad_of_mean():
    x = leaf(np.ones(4))
    backward(T.mean(x))
    np.testing.assert_array_equal(x.grad, [0.25] * 4)


def test_grad_of_softmax_cross_entropy_at_equal_logits():
    z = leaf([[0.0, 0.0]])
    backward(T.cross_entropy(z, np.array([0])))
    np.testing.assert_allclose(z.grad, [[-0.5, 0.5]], atol=1e-15)


def test_gradients_accumulate_over_multiple_uses():
    x = leaf([3.0])
    backward(T.sum_(x * x + x))
    np.testing.assert_allclose(x.grad, [7.0])


def test_leaf_gradients_accumulate_across_backward_calls():
    x = leaf([1.0, -1.0])
    backward(T.sum_(x * 2.0))
    backward(T.sum_(x * 3.0))
    np.testing.assert_array_equal(x.grad, [5.0, 5.0])


def test_second_backward_on_same_tape_is_rejected():
    x = leaf([1.0])
    loss = T.sum_(x * x)
    backward(loss)
    with pytest.raises(TapeError):
        backward(loss)


def test_non_scalar_loss_rejected():
    with pytest.raises(ValueError, match="scalar"):
        backward(leaf([1.0, 2.0]) * 2.0)


UNARY = ["exp", "square", "gelu", "sigmoid", "relu", "neg"]


@pytest.mark.parametrize("kind", UNARY)
def test_unary_gradients_match_central_differences(kind, rng):
    x0 = rng.normal(size=(3, 4))
    x0[np.abs(x0) < 1e-3] = 0.5  # keep relu off its kink
    w = rng.normal(size=(3, 4))

    def f(v):
        return float((apply_primitive(kind, [Tensor(v)]).data * w).sum())

    x = leaf(x0.copy())
    backward(T.sum_(apply_primitive(kind, [x]) * w))
    np.testing.assert_allclose(x.grad, numeric_grad(f, x0.copy()), rtol=1e-6, atol=1e-8)


def test_log_gradient(rng):
    x0 = rng.uniform(0.5, 2.0, size=5)
    x = leaf(x0.copy())
    backward(T.sum_(T.log(x)))
    np.testing.assert_allclose(x.grad, 1 / x0, rtol=1e-12)


@pytest.mark.parametrize(
    "build",
    [
        lambda a, b: T.matmul(a, b),
        lambda a, b: T.linear(a, b, None),
        lambda a, b: T.div(T.mul(a, 2.0), T.add(T.square(a), 1.0)) @ b,
        lambda a, b: T.layer_norm(a, np.linspace(0.5, 1.5, 4), np.zeros(4)) @ b,
        lambda a, b: T.softmax(a, axis=-1) @ b,
        lambda a, b: T.log_softmax(a, axis=0) @ b,
        lambda a, b: T.concat([a, T.transpose(b)], axis=0).sum(axis=1, keepdims=True) * 1.0,
        lambda a, b: T.stack([a[:, :2], a[:, 2:]], axis=0).mean(axis=0) @ b[:2],
        lambda a, b: T.reshape(a, (4, 3))[:, :2] @ T.reshape(b, (2, 4)),
    ],
)
def test_composite_gradients_match_central_differences(build, rng):
    a0, b0 = rng.normal(size=(3, 4)), rng.normal(size=(4, 2))

    def f_a(v):
        return float(build(Tensor(v), Tensor(b0)).data.sum())

    def f_b(v):
        return float(build(Tensor(a0), Tensor(v)).data.sum())

    a, b = leaf(a0.copy()), leaf(b0.copy())
    backward(T.sum_(build(a, b)))
    np.testing.assert_allclose(a.grad, numeric_grad(f_a, a0.copy()), rtol=1e-5, atol=1e-8)
    np.testing.assert_allclose(b.grad, numeric_grad(f_b, b0.copy()), rtol=1e-5, atol=1e-8)


def test_embedding_gradient_scatters_with_repeats():
    table = leaf(np.zeros((4, 2)))
    backward(T.sum_(T.embedding(table, np.array([1, 1, 3]))))
    np.testing.assert_array_equal(table.grad, [[0, 0], [2, 2], [0, 0], [1, 1]])


def test_masked_losses_ignore_zero_weight_positions(rng):
    pred = leaf(rng.normal(size=5))
    target = rng.normal(size=5)
    w = np.array([1, 0, 1, 0, 0], dtype=float)
    loss = T.masked_mse(pred, target, w)
    expected = ((pred.data - target) ** 2 * w).sum() / w.sum()
    assert loss.item() == pytest.approx(expected, rel=1e-12)
    backward(loss)
    assert (pred.grad[w == 0] == 0).all()


def test_bce_with_logits_matches_formula():
    z = np.array([-2.0, 0.0, 3.0])
    y = np.array([0.0, 1.0, 1.0])
    p = 1 / (1 + np.exp(-z))
    expected = -(y * np.log(p) + (1 - y) * np.log(1 - p)).mean()
    assert T.bce_with_logits(Tensor(z), y).item() == pytest.approx(expected, rel=1e-12)


# ------------------------------------------------------------------ adam


def _scalar_store(value=0.0, grad=None):
    ps = ParamStore()
    p = ps.add("w", np.array([value]))
    if grad is not None:
        p.grad = np.array([grad])
    return ps


def test_adam_zero_lr_leaves_params_unchanged():
    ps = _scalar_store(1.5, grad=3.0)
    adam_step(ps, AdamState(lr=0.0))
    assert ps["w"].data[0] == 1.5


def test_adam_first_step_closed_form():
    ps = _scalar_store(0.0, grad=1.0)
    state = AdamState()
    adam_step(ps, state)
    # m_hat = v_hat = 1 after bias correction, so the step is lr / (1 + eps)
    assert ps["w"].data[0] == pytest.approx(-1e-3 / (1 + 1e-8), rel=1e-12)
    assert state.step == 1
    assert ps["w"].grad is None


def test_polynomial_decay_reaches_end_lr():
    state = AdamState(lr=1e-3, lr_schedule=PolynomialDecay(1e-3, 1e-4, 100))
    assert state.current_lr(100) == pytest.approx(1e-4, rel=1e-12)
    assert state.current_lr(0) == pytest.approx(1e-3)
    assert state.current_lr(50) == pytest.approx(5.5e-4)


def test_adam_missing_grad_is_an_error_naming_the_parameter():
    with pytest.raises(ValueError, match="'w'"):
        adam_step(_scalar_store(), AdamState())


def test_adam_zero_grad_after_warm_steps_barely_moves():
    ps = _scalar_store(0.0)
    state = AdamState()
    for _ in range(5):
        ps["w"].grad = np.array([1.0])
        adam_step(ps, state)
    before = ps["w"].data[0]
    ps["w"].grad = np.array([0.0])
    adam_step(ps, state)
    # the first moment still carries momentum; the move stays below lr
    assert abs(ps["w"].data[0] - before) < state.lr


def test_adam_zero_grad_from_start_is_a_no_op():
    ps = _scalar_store(2.0)
    state = AdamState()
    for _ in range(3):
        ps["w"].grad = np.array([0.0])
        adam_step(ps, state)
    assert ps["w"].data[0] == 2.0


# ------------------------------------------------------------------ finite differences


def _quadratic_store(rng):
    ps = ParamStore()
    ps.add("a", rng.normal(size=(3, 2)))
    ps.add("b", rng.normal(size=4))
    return ps


def test_fd_check_on_quadratic(rng):
    ps = _quadratic_store(rng)

    def fn(p):
        return T.sum_(T.square(p["a"])) + T.sum_(p["b"] * p["b"] * 0.5)

    assert finite_difference_check(fn, ps, eps=1e-5, samples=10) < 1e-6


def test_fd_check_detects_doubled_gradient(rng):
    """A gradient off by 2x gives |2g - g| / max(2g, g) = 0.5 per coordinate."""
    ps = _quadratic_store(rng)

    def fn(p):
        return T.sum_(T.square(p["a"])) + T.sum_(T.square(p["b"]))

    def doubled(p):
        loss = fn(p)
        # scale only the tape path, not the value
        return loss + (loss - Tensor(loss.data.copy()))

    err = finite_difference_check(doubled, ps, eps=1e-6, samples=10)
    assert err == pytest.approx(0.5, abs=1e-6)


def test_fd_check_rejects_nondeterministic_fn(rng):
    ps = _quadratic_store(rng)
    noise = iter(range(100))

    def fn(p):
        return T.sum_(p["a"]) + float(next(noise))

    with pytest.raises(NondeterminismError):
        finite_difference_check(fn, ps)


def test_fd_check_rejects_eps_outside_range(rng):
    with pytest.raises(ValueError, match="eps"):
        finite_difference_check(lambda p: T.sum_(p["a"]), _quadratic_store(rng), eps=1e-2)


# ------------------------------------------------------------------ params and checkpoints


def test_param_store_order_and_duplicates(rng):
    ps = ParamStore()
    ps.add("z.w", rng.normal(size=2))
    ps.add("a.w", rng.normal(size=2))
    assert ps.names() == ["z.w", "a.w"]
    with pytest.raises(KeyError):
        ps.add("z.w", np.zeros(2))


def test_checkpoint_roundtrip_is_bit_exact(tmp_path, rng):
    ps = ParamStore()
    ps.add("x", rng.normal(size=(3, 5)))
    ps.add("y", np.array([np.nextafter(1.0, 2.0), -0.0, 1e-300]))
    p1 = tmp_path / "a.ckpt"
    save_checkpoint(p1, ps, {"config": {"k": 1}})
    arrays, meta = load_checkpoint(p1)
    assert meta["config"] == {"k": 1}
    for name in ps.names():
        assert arrays[name].tobytes() == ps[name].data.tobytes()
    p2 = tmp_path / "b.ckpt"
    save_checkpoint(p2, arrays, meta)
    assert p1.read_bytes() == p2.read_bytes()
