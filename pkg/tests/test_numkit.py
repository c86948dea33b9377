"""Tests for numkit module."""

import numpy as np
import pytest

from src.numkit import (
    NonFiniteError,
    SeededRng,
    ShapeError,
    activation,
    activation_grad,
    as_vec,
    dropout_mask,
    finite_diff_grad,
    init_params,
    matvec,
    relative_error,
    sigmoid,
)


# ---------------------------------------------------------------------------
# SeededRng
# ---------------------------------------------------------------------------
class TestSeededRng:
    """Tests for SeededRng."""

    def test_same_seed_same_draws(self):
        """Test two generators with one seed draw the same sequence."""
        a = SeededRng(42).uniform(-1, 1, size=8)
        b = SeededRng(42).uniform(-1, 1, size=8)
        np.testing.assert_array_equal(a, b)

    def test_different_seeds_differ(self):
        """Test different seeds give different draws."""
        a = SeededRng(1).normal(size=8)
        b = SeededRng(2).normal(size=8)
        assert not np.array_equal(a, b)

    def test_state_round_trip_continues_stream(self):
        """Test a restored state continues the exact draw sequence."""
        rng = SeededRng(7)
        rng.normal(size=3)
        restored = SeededRng.from_state(rng.get_state())
        np.testing.assert_array_equal(rng.random(5), restored.random(5))

    def test_spawn_is_independent_of_parent_draws(self):
        """Test a spawned stream does not depend on parent draws."""
        child_a = SeededRng(3).spawn(1)
        parent = SeededRng(3)
        parent.random(100)
        child_b = parent.spawn(1)
        np.testing.assert_array_equal(child_a.random(4), child_b.random(4))

    def test_rejects_negative_seed(self):
        """Test negative seeds are rejected."""
        with pytest.raises(ValueError):
            SeededRng(-1)

    def test_rejects_unknown_algorithm(self):
        """Test bit generators other than PCG64 are rejected."""
        with pytest.raises(ValueError, match="unsupported"):
            SeededRng(0, algorithm="MT19937")


# ---------------------------------------------------------------------------
# Linear algebra helpers
# ---------------------------------------------------------------------------
class TestMatvec:
    """Tests for matvec and as_vec."""

    def test_matvec(self):
        """Test matrix-vector product on a hand case."""
        m = np.array([[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]])
        np.testing.assert_allclose(matvec(m, np.array([1.0, -1.0])), [-1.0, -1.0, -1.0])

    def test_matvec_shape_mismatch(self):
        """Test mismatched shapes raise ShapeError."""
        with pytest.raises(ShapeError):
            matvec(np.zeros((2, 3)), np.zeros(2))

    def test_as_vec_rejects_matrix(self):
        """Test as_vec refuses 2-D input."""
        with pytest.raises(ShapeError):
            as_vec(np.zeros((2, 2)))

    def test_as_vec_rejects_nan(self):
        """Test as_vec refuses NaN."""
        with pytest.raises(NonFiniteError):
            as_vec([1.0, float("nan")])


# ---------------------------------------------------------------------------
# Activations
# ---------------------------------------------------------------------------
class TestActivation:
    """Tests for activation and activation_grad."""

    def test_sigmoid_extremes_do_not_overflow(self):
        """Test sigmoid at large magnitudes."""
        out = sigmoid(np.array([-1000.0, 0.0, 1000.0]))
        np.testing.assert_allclose(out, [0.0, 0.5, 1.0])

    def test_known_values(self):
        """Test activation values at reference points."""
        x = np.array([-1.0, 0.0, 2.0])
        np.testing.assert_allclose(activation("relu", x), [0.0, 0.0, 2.0])
        np.testing.assert_allclose(activation("tanh", x), np.tanh(x))

    def test_relu_grad_at_zero_is_zero(self):
        """Test relu derivative at zero."""
        np.testing.assert_array_equal(activation_grad("relu", np.array([-1.0, 0.0, 1.0])), [0, 0, 1])

    @pytest.mark.parametrize("kind", ["tanh", "sigmoid"])
    def test_grad_matches_finite_difference(self, kind):
        """Test activation derivatives against central differences."""
        x = np.linspace(-2.0, 2.0, 7)
        h = 1e-6
        numeric = (activation(kind, x + h) - activation(kind, x - h)) / (2 * h)
        np.testing.assert_allclose(activation_grad(kind, x), numeric, rtol=1e-6, atol=1e-9)

    def test_rejects_non_finite_input(self):
        """Test activations refuse non-finite input."""
        with pytest.raises(NonFiniteError):
            activation("tanh", np.array([np.inf]))

    def test_unknown_kind(self):
        """Test an unknown activation name."""
        with pytest.raises(ValueError, match="unknown activation"):
            activation("gelu", np.zeros(2))


# ---------------------------------------------------------------------------
# Initialization
# ---------------------------------------------------------------------------
class TestInitParams:
    """Tests for init_params."""

    def test_glorot_bound(self):
        """Test Glorot draws stay inside the bound."""
        m = init_params(SeededRng(0), 20, 30, "uniform-glorot")
        assert m.shape == (20, 30)
        assert np.all(np.abs(m) <= np.sqrt(6.0 / 50))

    def test_zeros(self):
        """Test the zeros scheme."""
        assert not init_params(None, 2, 3, "zeros").any()

    def test_same_seed_identical(self):
        """Test initialization is reproducible per seed."""
        a = init_params(SeededRng(5), 4, 4, "uniform-glorot")
        b = init_params(SeededRng(5), 4, 4, "uniform-glorot")
        np.testing.assert_array_equal(a, b)

    def test_invalid_shape(self):
        """Test non-positive shapes are rejected."""
        with pytest.raises(ShapeError):
            init_params(SeededRng(0), 0, 3, "zeros")

    def test_unknown_scheme(self):
        """Test an unknown initialization scheme."""
        with pytest.raises(ValueError, match="unknown init scheme"):
            init_params(SeededRng(0), 2, 2, "orthogonal")


# ---------------------------------------------------------------------------
# Finite differences
# ---------------------------------------------------------------------------
class TestFiniteDiff:
    """Tests for finite_diff_grad and relative_error."""

    def test_quadratic(self):
        """Test central differences on a quadratic."""
        a = np.array([[2.0, 1.0], [1.0, 3.0]])
        theta = np.array([0.5, -1.5])
        grad = finite_diff_grad(lambda t: 0.5 * t @ a @ t, theta)
        np.testing.assert_allclose(grad, a @ theta, rtol=1e-7)

    def test_does_not_mutate_input(self):
        """Test the input vector is restored."""
        theta = np.array([1.0, 2.0])
        finite_diff_grad(lambda t: float(t.sum()), theta)
        np.testing.assert_array_equal(theta, [1.0, 2.0])

    def test_non_finite_value_raises(self):
        """Test a non-finite function value raises."""
        with pytest.raises(NonFiniteError):
            finite_diff_grad(lambda t: float("nan"), np.zeros(2))

    def test_relative_error_floor(self):
        """Test the relative error denominator floor."""
        err = relative_error(np.array([0.0, 1.0]), np.array([1e-12, 1.1]))
        assert err[0] == pytest.approx(1e-4)
        assert err[1] == pytest.approx(0.1 / 1.1)


# ---------------------------------------------------------------------------
# Dropout
# ---------------------------------------------------------------------------
class TestDropoutMask:
    """Tests for dropout_mask."""

    def test_kept_units_are_scaled(self):
        """Test kept units are scaled by 1 / (1 - rate)."""
        mask = dropout_mask(SeededRng(0), 1000, 0.25)
        assert set(np.unique(mask)) <= {0.0, 1.0 / 0.75}

    def test_zero_rate_keeps_everything(self):
        """Test rate zero keeps every unit."""
        np.testing.assert_array_equal(dropout_mask(SeededRng(0), 5, 0.0), np.ones(5))

    def test_rate_one_rejected(self):
        """Test rate one is rejected."""
        with pytest.raises(ValueError):
            dropout_mask(SeededRng(0), 5, 1.0)
