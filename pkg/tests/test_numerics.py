import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from aia_cyclegan.layers import conv2d, prelu, softmax
from aia_cyclegan.numerics import (
    Adam,
    AdamState,
    Module,
    Parameter,
    ShapeError,
    Tensor,
    adam_step,
    away_from_kinks,
    finite_difference_gradient,
    gradient_check,
    load_checkpoint,
    no_grad,
    promoted_precision,
    relative_error,
    save_checkpoint,
)


def test_square_value_and_gradient():
    x = Tensor(3.0, requires_grad=True)
    y = x * x
    y.backward()
    assert y.item() == 9.0
    assert x.grad == pytest.approx(6.0)


def test_product_gradients():
    x = Tensor(2.0, requires_grad=True)
    y = Tensor(5.0, requires_grad=True)
    z = x * y
    z.backward()
    assert z.item() == 10.0
    assert (x.grad, y.grad) == (pytest.approx(5.0), pytest.approx(2.0))


def test_three_layer_composition_matches_finite_differences(rng):
    with promoted_precision():
        x = Tensor(rng.standard_normal((1, 4, 6, 2)), requires_grad=True)
        k1 = Tensor(rng.standard_normal((3, 3, 2, 3)) * 0.4, requires_grad=True)
        slope = Tensor(np.full(3, 0.25), requires_grad=True)
        k2 = Tensor(rng.standard_normal((1, 1, 3, 2)) * 0.4, requires_grad=True)

        def build():
            h = prelu(conv2d(x, k1, None, (1, 1), (1, 1)), slope)
            return softmax(conv2d(h, k2), axis=2)

        assert gradient_check(build, [x, k1, slope, k2]) <= 1e-3


def test_backward_on_non_scalar_requires_seed():
    x = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ShapeError, match="scalar"):
        (x * 2.0).backward()


def test_shape_mismatch_names_operation():
    a = Tensor(np.ones((2, 3)), requires_grad=True)
    b = Tensor(np.ones((4, 5)))
    with pytest.raises(ShapeError, match="matmul"):
        a @ b


def test_gradients_accumulate_across_backward_calls():
    x = Tensor(np.array([1.0, -2.0]), requires_grad=True)
    (x * x).sum().backward()
    first = x.grad.copy()
    (x * x).sum().backward()
    np.testing.assert_allclose(x.grad, 2 * first)


def test_shared_subexpression_gradient():
    x = Tensor(1.5, requires_grad=True)
    y = x * x
    (y + y * x).backward()  # x^2 + x^3 -> 2x + 3x^2
    assert x.grad == pytest.approx(2 * 1.5 + 3 * 1.5**2, rel=1e-6)


def test_no_grad_records_nothing():
    x = Tensor(2.0, requires_grad=True)
    with no_grad():
        y = x * 3.0
    assert not y.requires_grad


def test_float32_storage_and_promoted_precision():
    assert Tensor(1.0).dtype == np.float32
    with promoted_precision():
        assert Tensor(1.0).dtype == np.float64
    assert Tensor(1.0).dtype == np.float32


def test_broadcast_gradient_reduces_to_operand_shape(rng):
    a = Tensor(rng.standard_normal((3, 4)), requires_grad=True)
    b = Tensor(rng.standard_normal((4,)), requires_grad=True)
    (a * b).sum().backward()
    np.testing.assert_allclose(b.grad, a.data.sum(axis=0), rtol=1e-6)


def test_mean_accumulates_in_double():
    x = Tensor(np.full(10**6, 0.1, dtype=np.float32))
    assert abs(x.mean().item() - 0.1) < 1e-7


class TestFiniteDifference:
    def test_quadratic_exact(self):
        g = finite_difference_gradient(lambda v: float(v[0] ** 2), np.array([3.0]), 1e-3)
        assert abs(g[0] - 6.0) < 1e-6

    def test_constant_gives_zero(self, rng):
        g = finite_difference_gradient(lambda v: 4.2, rng.standard_normal((2, 3)), 1e-3)
        assert np.all(g == 0)

    @pytest.mark.parametrize("eps", [0.0, -1e-3])
    def test_non_positive_eps_rejected(self, eps):
        with pytest.raises(ValueError):
            finite_difference_gradient(lambda v: 0.0, np.zeros(1), eps)

    def test_agrees_with_reverse_mode_on_atfa(self, rng):
        from aia_cyclegan.attention import ATFAModule, atfa_forward

        with promoted_precision():
            m = ATFAModule(8, rng)
            m.time_gain.data[...] = 0.6
            m.freq_gain.data[...] = -0.4
            x = Tensor(rng.standard_normal((1, 3, 4, 8)) * 0.5, requires_grad=True)
            assert gradient_check(lambda: atfa_forward(m, x), [x] + m.parameters()) <= 1e-3

    def test_kink_margin(self):
        x = away_from_kinks(np.array([0.0, 1e-3, -1e-3, 0.5]))
        np.testing.assert_array_equal(x, [1e-2, 1e-2, -1e-2, 0.5])

    def test_relative_error_scale(self):
        assert relative_error(np.array([1.0, 2.0]), np.array([1.0, 2.0])) == 0.0
        assert relative_error(np.array([2.0]), np.array([1.0])) == pytest.approx(0.5)


class TestAdam:
    def test_first_step_matches_direct_formula(self):
        p = Parameter(0.0)
        p.grad = np.array(1.0, dtype=np.float32)
        state = AdamState()
        adam_step([("x", p)], state, lr=2e-4)
        m_hat = (0.1 * 1.0) / (1 - 0.9)
        v_hat = (0.001 * 1.0) / (1 - 0.999)
        expected = -2e-4 * m_hat / (np.sqrt(v_hat) + 1e-8)
        assert p.item() == pytest.approx(expected, rel=1e-6)
        assert p.item() == pytest.approx(-2e-4, rel=1e-4)
        assert state.t == 1
        assert p.grad == 0

    def test_zero_gradient_is_identity(self, rng):
        p = Parameter(rng.standard_normal(5))
        before = p.data.copy()
        state = AdamState()
        for _ in range(7):
            adam_step([("w", p)], state, lr=0.1)
        np.testing.assert_array_equal(p.data, before)
        assert state.t == 7

    def test_zero_lr_updates_moments_only(self, rng):
        p = Parameter(rng.standard_normal(3))
        p.grad = np.ones(3, dtype=np.float32)
        before = p.data.copy()
        state = AdamState()
        adam_step([("w", p)], state, lr=0.0)
        np.testing.assert_array_equal(p.data, before)
        assert np.all(state.m["w"] > 0) and np.all(state.v["w"] > 0)

    def test_negative_lr_rejected(self):
        with pytest.raises(ValueError):
            adam_step([("w", Parameter(0.0))], AdamState(), lr=-1.0)

    def test_state_shape_mismatch_rejected(self):
        p = Parameter(np.zeros(3))
        state = AdamState(m={"w": np.zeros(2)}, v={"w": np.zeros(2)})
        with pytest.raises(ValueError, match="shape"):
            adam_step([("w", p)], state, lr=1e-3)

    @settings(max_examples=30, deadline=None)
    @given(st.lists(st.floats(-10, 10), min_size=1, max_size=6), st.integers(1, 5))
    def test_second_moment_non_negative(self, grads, steps):
        p = Parameter(np.zeros(len(grads)))
        opt = Adam([("w", p)], lr=1e-3)
        for _ in range(steps):
            p.grad = np.asarray(grads, dtype=np.float32)
            opt.step()
            assert np.all(opt.state.v["w"] >= 0)
        assert opt.state.t == steps


class _Tiny(Module):
    buffer_names = ("u",)

    def __init__(self, rng):
        self.w = Parameter(rng.standard_normal((2, 3)))
        self.layers = [Parameter(rng.standard_normal(4))]
        self.u = rng.standard_normal(3).astype(np.float32)


def test_module_naming_and_census(rng):
    m = _Tiny(rng)
    names = [n for n, _ in m.named_parameters()]
    assert names == ["w", "layers.0"]
    assert m.parameter_census() == {"w": 6, "layers.0": 4, "__total__": 10}
    assert "u#buffer" in m.state_arrays()


def test_frozen_blocks_gradient(rng):
    m = _Tiny(rng)
    with m.frozen():
        out = (m.w * 2.0).sum()
    assert not out.requires_grad
    assert m.w.requires_grad


def test_checkpoint_round_trip_bit_exact(tmp_path, rng):
    arrays = {
        "a": rng.standard_normal((3, 4)).astype(np.float32),
        "scalar": np.array(1.25, dtype=np.float32),
        "b.c": rng.standard_normal(7).astype(np.float32),
    }
    save_checkpoint(tmp_path / "m.ckpt", arrays, {"note": "x", "n": 3})
    loaded, meta = load_checkpoint(tmp_path / "m.ckpt")
    assert meta == {"note": "x", "n": 3}
    for k, v in arrays.items():
        assert loaded[k].shape == v.shape
        assert loaded[k].tobytes() == v.tobytes()


def test_checkpoint_rejects_foreign_file(tmp_path):
    (tmp_path / "junk").write_bytes(b"hello")
    with pytest.raises(ValueError, match="magic"):
        load_checkpoint(tmp_path / "junk")
