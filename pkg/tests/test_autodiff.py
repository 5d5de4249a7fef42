import numpy as np
import pytest

from gcnext.autodiff import (
    OPS,
    Adam,
    Node,
    NumericError,
    Parameter,
    StepSchedule,
    Tape,
    UnsupportedOperationError,
    finite_diff_check,
    gumbel_softmax_st,
)
from gcnext.verify import dynamic_layer_gradient, full_model_gradient, op_gradient_cases

CASES = op_gradient_cases()


def test_unknown_op():
    with pytest.raises(UnsupportedOperationError):
        Tape().record("conv_transpose", np.ones(2))


def test_add_backward(rng):
    a, b = Parameter(rng.normal(size=3), "a"), Parameter(rng.normal(size=3), "b")
    tape = Tape()
    out = tape.add(a, b)
    upstream = rng.normal(size=3)
    tape.backward(tape.sum(tape.elemwise_mul(out, upstream)), [a, b])
    assert np.array_equal(a.grad, upstream)
    assert np.array_equal(b.grad, upstream)


def test_reshape_backward(rng):
    x = Parameter(rng.normal(size=(2, 3)), "x")
    tape = Tape()
    up = rng.normal(size=(3, 2))
    tape.backward(tape.sum(tape.elemwise_mul(tape.reshape(x, shape=(3, 2)), up)), [x])
    assert np.array_equal(x.grad, up.reshape(2, 3))


def test_matmul_backward(rng):
    A, x = Parameter(rng.normal(size=(3, 4)), "A"), Node(rng.normal(size=(4, 2)))
    up = rng.normal(size=(3, 2))
    tape = Tape()
    tape.backward(tape.sum(tape.elemwise_mul(tape.matmul(A, x), up)), [A])
    assert np.allclose(A.grad, up @ x.value.T, atol=1e-14)


def test_sum_grad_is_ones(rng):
    x = Parameter(rng.normal(size=(2, 3)), "x")
    tape = Tape()
    tape.backward(tape.sum(x), [x])
    assert np.array_equal(x.grad, np.ones((2, 3)))


def test_half_squared_residual():
    A = Parameter([[1.0]], "A")
    x, b = np.array([[2.0]]), np.array([[0.0]])
    tape = Tape()
    r = tape.add(tape.matmul(A, x), tape.scale(b, alpha=-1.0))
    loss = tape.scale(tape.sum(tape.elemwise_mul(r, r)), alpha=0.5)
    tape.backward(loss, [A])
    assert A.grad[0, 0] == 4.0


def test_accumulation_over_consumers(rng):
    x = Parameter(rng.normal(size=3), "x")
    tape = Tape()
    loss = tape.sum(tape.add(tape.elemwise_mul(x, x), x))
    tape.backward(loss, [x])
    assert np.allclose(x.grad, 2 * x.value + 1, atol=1e-14)


def test_unreachable_parameter_gets_zero(rng):
    x, unused = Parameter(rng.normal(size=3), "x"), Parameter(rng.normal(size=3), "u")
    unused.grad = np.ones(3)
    tape = Tape()
    tape.backward(tape.sum(x), [x, unused])
    assert not unused.grad.any()


def test_non_scalar_loss():
    x = Parameter(np.ones(3), "x")
    tape = Tape()
    with pytest.raises(ValueError):
        tape.backward(tape.scale(x, alpha=2.0), [x])


def test_every_op_has_a_gradient_case():
    assert set(OPS) <= {k.split("[")[0] for k in CASES}


@pytest.mark.parametrize("name", sorted(CASES))
def test_op_gradients(name):
    assert CASES[name]() < 1e-5


def test_quadratic_finite_difference_exact(rng):
    x = Parameter(rng.normal(size=5), "x")
    err = finite_diff_check(lambda t: t.sum(t.elemwise_mul(x, x)), [x])
    assert err < 1e-9


def test_dynamic_layer_gradient():
    assert dynamic_layer_gradient() < 1e-5


def test_full_model_gradient():
    assert full_model_gradient() < 1e-5


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_finite_difference_rejects_non_finite():
    x = Parameter(np.array([0.0]), "x")
    with pytest.raises(NumericError):
        finite_diff_check(lambda t: t.sum(t.elemwise_mul(x, np.array([np.inf]))), [x])


def test_gumbel_hard_one_hot(rng):
    tape = Tape()
    v = gumbel_softmax_st(tape, Parameter(rng.normal(size=(50, 4)), "l"), 1.0, rng, hard=True)
    assert np.array_equal(v.value.sum(axis=1), np.ones(50))
    assert set(np.unique(v.value)) == {0.0, 1.0}


def test_gumbel_soft_sums_to_one(rng):
    v = gumbel_softmax_st(Tape(), np.zeros((20, 3)), 0.5, rng, hard=False)
    assert np.allclose(v.value.sum(axis=1), 1.0, atol=1e-12)


def test_gumbel_rejects_bad_temperature(rng):
    with pytest.raises(ValueError):
        gumbel_softmax_st(Tape(), np.zeros((1, 3)), 0.0, rng)


def _frequencies(logits, tau, n=10_000, seed=0):
    rng = np.random.default_rng(seed)
    v = gumbel_softmax_st(Tape(), np.tile(logits, (n, 1)), tau, rng, hard=True)
    return v.value.mean(axis=0)


def test_gumbel_peaked_logits():
    assert _frequencies([10.0, 0, 0, 0], 0.1)[0] > 0.99


def test_gumbel_uniform_logits():
    freq = _frequencies([0.0, 0, 0, 0], 1.0)
    assert np.all(np.abs(freq - 0.25) <= 0.02)


def test_straight_through_uses_soft_jacobian(rng):
    logits_value = rng.normal(size=(6, 4))
    noise = rng.gumbel(size=(6, 4))
    up = rng.normal(size=(6, 4))
    grads = []
    for hard in (True, False):
        logits = Parameter(logits_value.copy(), "logits")
        tape = Tape()
        v = tape.gumbel_softmax_st(logits, noise, tau=0.8, hard=hard)
        if hard:
            assert set(np.unique(v.value)) == {0.0, 1.0}
        tape.backward(tape.sum(tape.elemwise_mul(v, up)), [logits])
        grads.append(logits.grad)
    assert np.array_equal(grads[0], grads[1])


def test_schedule_drop():
    sched = StepSchedule(6e-4, 5e-6, 75_000)
    assert sched(74_999) == 6e-4
    assert sched(75_000) == 5e-6


def test_adam_zero_gradient_keeps_values(rng):
    p = Parameter(rng.normal(size=4), "p")
    before = p.value.copy()
    Adam([p]).step(0)
    assert np.array_equal(p.value, before)


def test_adam_first_step_magnitude():
    p = Parameter(np.array([1.0]), "p")
    p.grad = np.array([1.0])
    Adam([p], StepSchedule(0.1, 0.1, 10)).step(0)
    assert abs((p.value[0] - 1.0) - (-0.1)) < 1e-6


def test_adam_frozen_parameter_untouched(rng):
    p = Parameter(rng.normal(size=3), "p")
    p.freeze()
    p.grad = np.ones(3)
    before = p.value.copy()
    Adam([p]).step(0)
    assert np.array_equal(p.value, before)


def test_adam_clipping_bounds_update():
    p = Parameter(np.zeros(2), "p")
    p.grad = np.array([300.0, 400.0])
    opt = Adam([p], StepSchedule(1.0, 1.0, 1), clip_norm=1.0)
    opt.step(0)
    assert np.allclose(opt.m["p"], 0.1 * np.array([0.6, 0.8]))
