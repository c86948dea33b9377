"""Tests for gntb module."""

import numpy as np
import pytest

from src.gntb import (
    FULL_RANK,
    LOW_RANK,
    GntbConfig,
    bilinear_term,
    count_params,
    gntb_backward,
    gntb_forward,
    init_gntb,
    materialize_slice,
    param_shapes,
    to_full_rank,
    validate_params,
)
from src.numkit import NonFiniteError, SeededRng, ShapeError, StaleCacheError, finite_diff_grad


def _params(d=3, k=None, r=2, mode=LOW_RANK, activation="tanh", seed=0):
    return init_gntb(GntbConfig(d=d, k=k, r=r, activation=activation, mode=mode), SeededRng(seed))


# ---------------------------------------------------------------------------
# Config and parameter counting
# ---------------------------------------------------------------------------
class TestGntbConfig:
    """Tests for GntbConfig."""

    def test_k_defaults_to_d(self):
        """Test k defaults to d."""
        assert GntbConfig(d=4).k == 4

    def test_rank_bounds(self):
        """Test low-rank mode bounds the rank."""
        with pytest.raises(ValueError, match="rank"):
            GntbConfig(d=2, r=5)
        GntbConfig(d=2, r=5, mode=FULL_RANK)

    def test_unknown_activation(self):
        """Test an unknown activation."""
        with pytest.raises(ValueError):
            GntbConfig(d=2, activation="softplus")

    def test_round_trip_dict(self):
        """Test GntbConfig survives to_dict and back."""
        cfg = GntbConfig(d=5, k=3, r=2, activation="relu")
        assert GntbConfig.from_dict(cfg.to_dict()) == cfg


class TestCountParams:
    """Tests for count_params against enumeration."""

    @pytest.mark.parametrize(
        "d,k,r,mode",
        [(3, 3, 2, LOW_RANK), (4, 2, 3, LOW_RANK), (3, 3, 2, FULL_RANK), (5, 7, 1, FULL_RANK)],
    )
    def test_matches_enumeration(self, d, k, r, mode):
        """Test closed-form counts against enumerated tensors."""
        params = _params(d=d, k=k, r=r, mode=mode)
        enumerated = sum(a.size for a in params.named().values())
        assert count_params(params.config) == enumerated

    def test_reference_size_low_rank(self):
        """Test the d = 100 low-rank count."""
        # d = k = 100, r = 10: 100 * (2*200*10 + 200) + 100*200
        assert count_params(GntbConfig(d=100)) == 440000

    def test_reference_size_full_rank(self):
        """Test the d = 100 full-rank count."""
        assert count_params(GntbConfig(d=100, mode=FULL_RANK)) == 4020000

    def test_shapes(self):
        """Test parameter shapes with a projection."""
        shapes = param_shapes(GntbConfig(d=3, k=2, r=2))
        assert shapes == {
            "U": (2, 6, 2),
            "V": (2, 2, 6),
            "e": (2, 6),
            "W": (2, 6),
            "proj": (3, 2),
        }


# ---------------------------------------------------------------------------
# Forward
# ---------------------------------------------------------------------------
class TestGntbForward:
    """Tests for gntb_forward."""

    def test_bilinear_matches_materialized_slices(self):
        """Test the factored bilinear term against dense slices."""
        params = _params(d=4, r=3)
        m = SeededRng(1).normal(size=8)
        b, _, _ = bilinear_term(params, m)
        dense = np.array([m @ materialize_slice(params, i) @ m for i in range(4)])
        np.testing.assert_allclose(b, dense, rtol=1e-12, atol=1e-12)

    def test_explicit_small_case(self):
        """Test a hand-computed d = 1 case."""
        # d = 1, k = 1, r = 1: T = U V + diag(e)
        params = _params(d=1, r=1, activation="tanh")
        params.U[...] = [[[1.0], [0.0]]]
        params.V[...] = [[[0.0, 1.0]]]
        params.e[...] = [[0.5, 0.0]]
        params.W[...] = [[0.0, 0.0]]
        p, _ = gntb_forward(params, np.array([2.0]), np.array([3.0]))
        # m = (2, 3): mᵀ U V m = 2 * 3, mᵀ diag(e) m = 0.5 * 4
        np.testing.assert_allclose(p, np.tanh([8.0]))

    def test_full_rank_equivalence(self):
        """Test to_full_rank computes the same output."""
        params = _params(d=3, r=2, activation="sigmoid")
        full = to_full_rank(params)
        rng = SeededRng(2)
        p_prev, u = rng.normal(size=3), rng.normal(size=3)
        low, _ = gntb_forward(params, p_prev, u)
        dense, _ = gntb_forward(full, p_prev, u)
        np.testing.assert_allclose(low, dense, rtol=1e-12, atol=1e-12)

    def test_random_instances_match_triple_loop(self):
        """Test factored and dense forms against a naive triple-loop tensor product."""
        rng = SeededRng(9)
        for case in range(100):
            d = int(rng.integers(1, 5))
            r = int(rng.integers(1, d + 1))
            params = _params(d=d, r=r, activation="tanh", seed=case)
            full = to_full_rank(params)
            p_prev, u = rng.normal(size=d), rng.normal(size=d)
            m = np.concatenate([p_prev, u])
            naive = np.zeros(d)
            for i in range(d):
                for j in range(2 * d):
                    for n in range(2 * d):
                        naive[i] += m[j] * full.T[i, j, n] * m[n]
            expected = np.tanh(naive + full.W @ m)
            low, _ = gntb_forward(params, p_prev, u)
            dense, _ = gntb_forward(full, p_prev, u)
            np.testing.assert_allclose(low, expected, rtol=1e-12, atol=1e-12, err_msg=str(case))
            np.testing.assert_allclose(dense, expected, rtol=1e-12, atol=1e-12, err_msg=str(case))

    def test_zero_context_is_valid(self):
        """Test a zero context vector."""
        p, _ = gntb_forward(_params(), np.zeros(3), np.ones(3))
        assert p.shape == (3,)

    def test_projection_output_length(self):
        """Test the projection maps k back to d."""
        p, _ = gntb_forward(_params(d=3, k=5), np.zeros(3), np.ones(3))
        assert p.shape == (3,)

    def test_wrong_length_raises(self):
        """Test input lengths are validated."""
        with pytest.raises(ShapeError):
            gntb_forward(_params(), np.zeros(2), np.zeros(3))

    def test_overflow_reports_slice(self):
        """Test overflow names the offending slice."""
        params = _params(activation="tanh")
        params.W[1] = 1e308
        with pytest.raises(NonFiniteError, match="slice 1"):
            gntb_forward(params, np.ones(3), np.ones(3) * 10)

    def test_validate_params(self):
        """Test validate_params on good and bad shapes."""
        params = _params()
        validate_params(params)
        params.W = np.zeros((2, 6))
        with pytest.raises(ShapeError):
            validate_params(params)


# ---------------------------------------------------------------------------
# Backward
# ---------------------------------------------------------------------------
class TestGntbBackward:
    """Tests for gntb_backward."""

    @pytest.mark.parametrize("seed", [1, 2, 3, 4, 5])
    @pytest.mark.parametrize("mode,k", [(LOW_RANK, 3), (FULL_RANK, 3), (LOW_RANK, 2)])
    def test_matches_finite_differences(self, mode, k, seed):
        """Test every parameter and input gradient against central differences."""
        params = _params(d=3, k=k, r=2, mode=mode, seed=seed)
        rng = SeededRng(seed + 100)
        p_prev, u, w = rng.normal(size=3), rng.normal(size=3), rng.normal(size=3)
        _, cache = gntb_forward(params, p_prev, u)
        grads, g_prev, g_u = gntb_backward(params, cache, w)

        for name, arr in params.named().items():
            def f(theta, arr=arr):
                saved = arr.copy()
                arr[...] = theta.reshape(arr.shape)
                out = float(w @ gntb_forward(params, p_prev, u)[0])
                arr[...] = saved
                return out

            numeric = finite_diff_grad(f, arr.ravel()).reshape(arr.shape)
            np.testing.assert_allclose(grads.named()[name], numeric, rtol=1e-5, atol=1e-8)

        numeric_prev = finite_diff_grad(lambda t: float(w @ gntb_forward(params, t, u)[0]), p_prev)
        numeric_u = finite_diff_grad(lambda t: float(w @ gntb_forward(params, p_prev, t)[0]), u)
        np.testing.assert_allclose(g_prev, numeric_prev, rtol=1e-5, atol=1e-8)
        np.testing.assert_allclose(g_u, numeric_u, rtol=1e-5, atol=1e-8)

    def test_foreign_cache_rejected(self):
        """Test a cache from other parameters is rejected."""
        a, b = _params(seed=0), _params(seed=1)
        _, cache = gntb_forward(a, np.zeros(3), np.ones(3))
        with pytest.raises(StaleCacheError):
            gntb_backward(b, cache, np.ones(3))

    def test_gradient_length_checked(self):
        """Test the upstream gradient length is validated."""
        params = _params()
        _, cache = gntb_forward(params, np.zeros(3), np.ones(3))
        with pytest.raises(ShapeError):
            gntb_backward(params, cache, np.ones(4))
