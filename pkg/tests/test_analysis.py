import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dmanc.analysis import (
    COMPANION_LIMIT,
    char_poly_stable,
    complexity,
    critical_mu,
    delay_factor,
    estimate_wiener,
    nse,
    nse_trace,
    step_bounds,
    wiener_cost,
)
from dmanc.dsp import BandpassSource, SineSource, WhiteGaussianSource
from dmanc.errors import (
    CapabilityError,
    ConditioningError,
    DegenerateSpectrumError,
    DimensionError,
    ParameterError,
    UndefinedReferenceError,
)
from dmanc.scene import AcousticScene, SceneRecipe, synthesize_scene


class TestNse:
    def test_equal_signals(self, rng):
        d = rng.standard_normal(100)
        assert nse(d, d) == pytest.approx(0.0, abs=1e-12)

    def test_tenth(self, rng):
        d = rng.standard_normal(100)
        assert nse(d / 10, d) == pytest.approx(-20.0, abs=1e-12)

    def test_random_windows(self, rng):
        for _ in range(20):
            e, d = rng.standard_normal(50), rng.standard_normal(50)
            want = 10 * math.log10(sum(v * v for v in e) / sum(v * v for v in d))
            assert nse(e, d) == pytest.approx(want, abs=1e-12)

    def test_zero_error(self):
        assert nse(np.zeros(4), np.ones(4)) == -math.inf

    def test_zero_reference(self):
        with pytest.raises(UndefinedReferenceError):
            nse(np.ones(3), np.zeros(3))

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            nse(np.ones(3), np.ones(4))


class TestNseTrace:
    def test_matches_direct(self, rng):
        e, d = rng.standard_normal((300, 2)), rng.standard_normal((300, 2))
        samples, vals = nse_trace(e, d, window=40, stride=7)
        for i, n in enumerate(samples):
            lo = max(0, n - 39)
            for k in range(2):
                assert vals[i, k] == pytest.approx(nse(e[lo : n + 1, k], d[lo : n + 1, k]), abs=1e-9)

    def test_block_mode(self, rng):
        e, d = rng.standard_normal(100), rng.standard_normal(100)
        samples, vals = nse_trace(e, d, window=30, stride=1, mode="block")
        assert vals[65, 0] == pytest.approx(nse(e[60:66], d[60:66]), abs=1e-9)

    def test_undefined_regions(self):
        d = np.concatenate([np.zeros(5), np.ones(5)])
        _, vals = nse_trace(np.zeros(10), d, window=3)
        assert np.isnan(vals[:5, 0]).all() and np.isneginf(vals[5:, 0]).all()

    @pytest.mark.parametrize("kw", [dict(window=0), dict(stride=0), dict(mode="x")])
    def test_bad_args(self, kw):
        with pytest.raises(ParameterError):
            nse_trace(np.ones(5), np.ones(5), **kw)


def brute_force_wiener(scene, N, T=400_000, seed=11):
    # least squares over a simulated record: regress d on the stacked filtered references
    x = WhiteGaussianSource(seed).take(T)
    K = scene.K
    rows, target = [], []
    for m in range(K):
        d = np.convolve(x, scene.primary[m])[:T]
        cols = []
        for k in range(K):
            xf = np.convolve(x, scene.secondary[m, k])[:T]
            cols.extend(np.concatenate([np.zeros(i), xf[: T - i]]) for i in range(N))
        rows.append(np.stack(cols, axis=1))
        target.append(d)
    A = np.concatenate(rows)
    b = np.concatenate(target)
    return np.linalg.lstsq(A, b, rcond=None)[0].reshape(K, N)


class TestWiener:
    def test_perfect_model_single_node(self, rng):
        s = np.zeros(12)
        s[2:] = rng.standard_normal(10)
        sc = AcousticScene(s[None], s[None, None], s[None, None])
        sol = estimate_wiener(sc, 8)
        np.testing.assert_allclose(sol.w[0], np.eye(1, 8)[0], atol=1e-6)
        assert sol.nse_db < -60

    def test_matches_regression(self, rng):
        K, L, N = 2, 2, 4
        sc = AcousticScene(rng.standard_normal((K, L)), rng.standard_normal((K, K, L)),
                           np.zeros((K, K, L)))
        sol = estimate_wiener(sc, N)
        bf = brute_force_wiener(sc, N)
        assert np.linalg.norm(sol.w - bf) / np.linalg.norm(bf) < 1e-2

    def test_sampled_agrees_with_analytic(self, small_scene):
        a = estimate_wiener(small_scene, 8)
        b = estimate_wiener(small_scene, 8, samples=400_000)
        assert np.linalg.norm(a.w - b.w) / np.linalg.norm(a.w) < 0.05

    def test_cost_is_minimum(self, small_scene, rng):
        sol = estimate_wiener(small_scene, 8)
        for _ in range(5):
            assert wiener_cost(sol, sol.w + 0.01 * rng.standard_normal(sol.w.shape)) > sol.cost

    def test_bandpass_statistics(self, small_scene):
        src = BandpassSource(0, 100, 1000, 8000)
        sol = estimate_wiener(small_scene, 8, src)
        assert np.all(np.isfinite(sol.w))

    def test_sine_uses_samples(self, small_scene):
        sol = estimate_wiener(small_scene, 4, SineSource(500, 8000), epsilon=1e-6)
        assert np.all(np.isfinite(sol.w))

    def test_singular(self):
        sc = AcousticScene(np.ones((1, 4)), np.zeros((1, 1, 4)), np.zeros((1, 1, 4)))
        with pytest.raises(ConditioningError):
            estimate_wiener(sc, 4)

    def test_bad_paths_arg(self, small_scene):
        with pytest.raises(ParameterError):
            estimate_wiener(small_scene, 4, paths="true")


class TestBounds:
    def test_zero_delay_equal(self, small_scene):
        r = step_bounds(small_scene, 16, 0)
        np.testing.assert_array_equal(r.bound_delay, r.bound_no_delay)

    def test_unit_delay_halves(self, small_scene):
        r = step_bounds(small_scene, 16, 1)
        np.testing.assert_allclose(r.bound_delay, 0.5 * r.bound_no_delay, rtol=1e-15)

    @pytest.mark.parametrize("K", [1, 3, 6])
    def test_identity_correlation(self, K):
        est = np.zeros((K, K, 4))
        est[:, :, 0] = 1.0
        sc = AcousticScene(np.zeros((K, 4)), est, est)
        r = step_bounds(sc, 8)
        np.testing.assert_allclose(r.lambda_max, 1.0)
        np.testing.assert_allclose(r.bound_no_delay, 2.0 / K)

    def test_degenerate(self):
        sc = AcousticScene(np.zeros((1, 4)), np.zeros((1, 1, 4)), np.zeros((1, 1, 4)))
        with pytest.raises(DegenerateSpectrumError):
            step_bounds(sc, 4)

    def test_needs_known_spectrum(self, small_scene):
        with pytest.raises(ParameterError):
            step_bounds(small_scene, 4, source=SineSource(100, 8000))

    def test_report_dict(self, small_scene):
        d = step_bounds(small_scene, 8, 3).to_dict()
        assert d["global_delay"] == pytest.approx(d["global_no_delay"] * delay_factor(3))

    def test_delay_factor_values(self):
        assert delay_factor(0) == 1.0
        assert delay_factor(1) == pytest.approx(0.5)
        with pytest.raises(ParameterError):
            delay_factor(-1)


class TestCharPoly:
    def test_linear_case(self):
        r = char_poly_stable(0.3, 2.0, 0)
        assert r.max_root == pytest.approx(abs(1 - 0.6))
        assert char_poly_stable(0.99, 2.0, 0).stable
        assert not char_poly_stable(1.01, 2.0, 0).stable

    @pytest.mark.parametrize("delta", [0, 1, 5, 20, 64])
    def test_boundary_root_on_unit_circle(self, delta):
        mu = critical_mu(3.0, delta)
        assert char_poly_stable(mu, 3.0, delta).max_root == pytest.approx(1.0, abs=1e-6)

    def test_half_boundary_stable(self):
        assert char_poly_stable(0.5 * critical_mu(4.0, 10), 4.0, 10).stable

    @given(st.floats(0.1, 100.0), st.integers(0, 64))
    def test_property_flip_at_closed_form(self, sum_lambda, delta):
        mu = critical_mu(sum_lambda, delta)
        assert char_poly_stable(0.99 * mu, sum_lambda, delta).stable
        assert not char_poly_stable(1.01 * mu, sum_lambda, delta).stable

    def test_closed_form_range(self):
        r = char_poly_stable(1e-9, 1.0, COMPANION_LIMIT + 1)
        assert r.method == "closed-form" and r.max_root is None and r.stable

    def test_capability_limit(self):
        with pytest.raises(CapabilityError):
            char_poly_stable(1e-9, 1.0, 2**40)

    @pytest.mark.parametrize("args", [(0.0, 1.0, 1), (0.1, 1.0, -1), (0.1, 1.0, 1.5)])
    def test_invalid(self, args):
        with pytest.raises(ParameterError):
            char_poly_stable(*args)


class TestComplexity:
    def test_paper_configuration(self):
        c = complexity(6, 512, 256, 33)
        assert c["DFxLMS"] == (4864, 3838)
        assert c["ADFxLMS"] == (26624, 20473)
        assert c["MGDFxLMS"] == (17696, 19198)
        assert c["ASSS-MGDFxLMS"] == (17698, 19198)
        assert c["MCFxLMS"] == (49152, 30678)

    def test_single_channel_centralized(self):
        N, L = 64, 32
        assert complexity(1, N, L, 1)["MCFxLMS"][0] == (2 * N + L) + N

    @given(st.integers(1, 8), st.integers(1, 600), st.integers(1, 300))
    def test_property_mgd_h1(self, K, N, L):
        # H = 1: mults L + 4N + 2, adds (K+1)N + L - 2
        assert complexity(K, N, L, 1)["MGDFxLMS"] == (L + 4 * N - 1 * (1 - 3) - 2, (K + 1) * N + L - 2)

    def test_invalid(self):
        with pytest.raises(ParameterError):
            complexity(0, 1, 1, 1)
