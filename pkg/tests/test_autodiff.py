import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from uascorrect import autodiff as ad
from uascorrect.autodiff import Optimizer, Tensor
from uascorrect.errors import ShapeError, StateError


def test_add_values():
    assert ad.add(Tensor([1.0, 2.0]), Tensor([3.0, 4.0])).data.tolist() == [4.0, 6.0]


def test_shape_mismatch():
    with pytest.raises(ShapeError):
        ad.add(Tensor([1.0, 2.0]), Tensor([1.0, 2.0, 3.0]))


def test_log_at_one():
    x = Tensor(np.array(1.0), requires_grad=True)
    y = ad.log(x)
    assert float(y.data) == 0.0
    y.backward()
    assert float(x.grad) == 1.0


def test_div_by_zero_is_clamped():
    out = ad.div(Tensor([3.0], dtype=np.float64), Tensor([0.0], dtype=np.float64))
    assert np.isfinite(out.data).all()
    assert out.data[0] == pytest.approx(3.0 / 1e-7, rel=1e-12)


def test_div_keeps_sign_of_small_negative():
    out = ad.div(Tensor([1.0], dtype=np.float64), Tensor([-1e-9], dtype=np.float64))
    assert out.data[0] == pytest.approx(-1e7)


def test_log_clamps_argument():
    out = ad.log(Tensor([0.0, 2.0], dtype=np.float64))
    assert out.data[0] == pytest.approx(np.log(1e-7))
    assert out.data[1] == 0.0


def test_mean_and_sum():
    assert float(ad.mean(Tensor([2.0, 4.0])).data) == 3.0
    x = Tensor(np.arange(6.0).reshape(2, 3), requires_grad=True)
    ad.sum(x).backward()
    assert np.array_equal(x.grad, np.ones((2, 3)))


def test_mean_of_patch_of_ones_is_exact():
    x = Tensor(np.ones((128, 128, 5), np.float32))
    assert float(ad.mean(x).data) == 1.0


def test_mean_gradient_is_one_over_n():
    x = Tensor(np.zeros(8), requires_grad=True)
    ad.mean(x).backward()
    assert np.allclose(x.grad, 1 / 8)


def test_empty_reduction():
    with pytest.raises(ShapeError):
        ad.mean(Tensor(np.zeros(0)))


def test_mse_at_minimum_has_zero_grad():
    x = Tensor(np.array([0.3, 0.7]), requires_grad=True)
    d = x - np.array([0.3, 0.7])
    ad.mean(d * d).backward()
    assert np.array_equal(x.grad, np.zeros(2))


def test_backward_rejects_non_scalar_and_repeat():
    x = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ShapeError):
        (x * 2.0).backward()
    loss = ad.sum(x * 2.0)
    loss.backward()
    with pytest.raises(StateError):
        loss.backward()


def test_shared_subexpression_visited_once():
    x = Tensor(np.array([2.0]), requires_grad=True)
    y = x * x
    z = ad.sum(y + y)
    order = ad.topological_order(z)
    assert len(order) == len({id(n) for n in order})
    z.backward()
    assert x.grad[0] == pytest.approx(8.0)


def _away_from_zero(rng, shape, gap=0.05):
    v = rng.uniform(-1, 1, shape)
    return np.where(np.abs(v) < gap, np.sign(v + 1e-12) * gap, v)


@pytest.mark.parametrize("kind", ["add", "sub", "mul", "div"])
def test_binary_gradients(gradcheck, kind):
    rng = np.random.default_rng(1)
    a = rng.uniform(-1, 1, (4, 4, 3))
    b = _away_from_zero(rng, (4, 4, 3), gap=0.2)
    gradcheck(lambda x, y: ad.elementwise(kind, x, y), [a, b])


@pytest.mark.parametrize("kind", ["add", "mul", "div"])
def test_scalar_operand_gradients(gradcheck, kind):
    a = np.random.default_rng(2).uniform(-1, 1, (3, 4))
    gradcheck(lambda x: ad.elementwise(kind, x, 0.7), [a])


def test_log_gradient(gradcheck):
    a = np.random.default_rng(3).uniform(0.2, 0.95, (4, 4, 3))
    gradcheck(ad.log, [a])


def test_exp_gradient(gradcheck):
    gradcheck(ad.exp, [np.random.default_rng(4).uniform(-2, 2, (4, 4, 3))])


def test_abs_gradient(gradcheck):
    gradcheck(ad.abs, [_away_from_zero(np.random.default_rng(5), (4, 4, 3))])


def test_clamp_gradient(gradcheck):
    a = np.random.default_rng(6).uniform(-1, 1, (4, 4, 3))
    a = np.where(np.abs(np.abs(a) - 0.5) < 0.05, 0.2, a)
    gradcheck(lambda x: ad.clamp(x, -0.5, 0.5), [a])


@pytest.mark.parametrize("kind", ["sum", "mean"])
def test_reduction_gradient(gradcheck, kind):
    gradcheck(lambda x: ad.reduce(kind, x * x), [np.random.default_rng(7).uniform(-1, 1, (4, 4, 3))])


def test_composite_graph_gradient(gradcheck):
    rng = np.random.default_rng(8)
    a, b = rng.uniform(0.1, 0.9, (4, 3)), rng.uniform(0.5, 1.5, (4, 3))

    def build(x, y):
        return ad.mean(ad.log(ad.div(x, y)) * ad.exp(x * 0.5) + ad.abs(x - y))

    gradcheck(build, [a, b])


def test_no_grad_builds_no_graph():
    x = Tensor(np.ones(2), requires_grad=True)
    with ad.no_grad():
        y = x * 3.0
    assert not y.requires_grad and y.is_leaf


@settings(max_examples=50, deadline=None)
@given(
    hnp.arrays(np.float32, 6, elements=st.floats(-(2.0**60), 2.0**60, width=32, allow_subnormal=False)),
    hnp.arrays(np.float32, 6, elements=st.floats(-(2.0**60), 2.0**60, width=32, allow_subnormal=False)),
)
def test_no_nonfinite_outputs(a, b):
    ta, tb = Tensor(a), Tensor(b)
    for out in (ad.log(ta), ad.exp(ad.clamp(ta, None, 80.0)), ad.abs(ta), ad.clamp(ta, -1, 1)):
        assert np.isfinite(out.data).all()
    small = Tensor(np.clip(a, -1e3, 1e3))
    assert np.isfinite(ad.div(small, tb).data).all()


def test_sgd_single_step():
    p = Tensor(np.array([1.0]), requires_grad=True)
    p.grad = np.array([0.5])
    Optimizer([p], lr=0.1, kind="sgd").step()
    assert p.data[0] == pytest.approx(0.95)
    assert p.grad is None


@pytest.mark.parametrize("kind", ["sgd", "adam"])
def test_zero_gradient_leaves_params(kind):
    p = Tensor(np.array([0.3, -0.2]), requires_grad=True)
    p.grad = np.zeros(2)
    Optimizer([p], lr=0.1, kind=kind).step()
    assert p.data.tolist() == [0.3, -0.2]


def test_missing_gradient_is_state_error():
    p = Tensor(np.ones(2), requires_grad=True)
    with pytest.raises(StateError):
        Optimizer([p], kind="adam").step()


def test_sgd_step_function():
    p = Tensor(np.array([2.0]), requires_grad=True)
    p.grad = np.array([1.0])
    ad.sgd_step([p], 0.5)
    assert p.data[0] == 1.5


def test_adam_quadratic_bowl():
    p = Tensor(np.array([0.4, -0.3, 0.25, -0.15]), requires_grad=True)
    opt = Optimizer([p], lr=0.01, kind="adam")
    losses = []
    for _ in range(100):
        loss = ad.sum(p * p)
        losses.append(float(loss.data))
        loss.backward()
        opt.step()
    losses.append(float(np.sum(p.data**2)))
    warmup = 5
    assert all(b <= a for a, b in zip(losses[warmup:], losses[warmup + 1:]))
    assert losses[-1] < 1e-3 * losses[0]


def test_determinism_of_updates():
    def run():
        rng = np.random.default_rng(11)
        p = Tensor(rng.normal(size=(3, 3)).astype(np.float32), requires_grad=True)
        opt = Optimizer([p], lr=0.05)
        for _ in range(20):
            ad.mean(ad.exp(p) * p).backward()
            opt.step()
        return p.data.copy()

    assert np.array_equal(run(), run())
