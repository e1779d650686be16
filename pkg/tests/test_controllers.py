import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dmanc.analysis import nse
from dmanc.controllers import (
    DecentralizedFxlms,
    DiffusionFxlms,
    McFxlms,
    MgdNetwork,
    MgdNode,
    MgdNodeNetwork,
    asss_mu,
    check_topology,
    ring_topology,
)
from dmanc.dsp import WhiteGaussianSource
from dmanc.errors import DimensionError, DivergedError, NumericFaultError, ParameterError, TopologyError
from dmanc.network import ConstantDelay, MailboxView, NetworkBus, SinusoidDelay, StepDelay
from dmanc.scene import AcousticScene, SceneRecipe, synthesize_scene

from helpers import drive, mgd_oracle, scalar_gain_scene


def white(n, seed=0):
    return WhiteGaussianSource(seed).take(n)


def diagonal(scene):
    S = scene.secondary * np.eye(scene.K)[:, :, None]
    return AcousticScene(scene.primary, S, S.copy())


class TestCentralized:
    def test_frozen_at_zero_step(self, small_scene):
        ctrl = McFxlms(small_scene.estimates, 8, 0.0)
        Ws, *_ = drive(ctrl, small_scene, white(200))
        assert not Ws.any()

    def test_single_channel_converges(self):
        rng = np.random.default_rng(0)
        s = np.zeros(16)
        s[1:] = rng.standard_normal(15) * 0.7 ** np.arange(15)
        sc = AcousticScene(s[None, :], s[None, None, :], s[None, None, :])
        ctrl = McFxlms(sc.estimates, 8, 0.02 / (s @ s))
        _, E, _, _ = drive(ctrl, sc, white(50_000))
        d = np.convolve(white(50_000), s)[:50_000]
        assert nse(E[-5000:, 0], d[-5000:]) <= -30

    def test_update_matches_hand_oracle(self, small_scene, rng):
        # one step from zero weights: w_k = mu sum_m x'_km e_m
        N, mu = 6, 0.01
        ctrl = McFxlms(small_scene.estimates, N, mu)
        x = rng.standard_normal(40)
        drive(ctrl, small_scene, x[:-1])
        W0 = ctrl.W.copy()
        ctrl.output(x[-1])
        e = rng.standard_normal(small_scene.K)
        ctrl.adapt(e, 0)
        T = len(x)
        want = W0.copy()
        for k in range(small_scene.K):
            for m in range(small_scene.K):
                xf = np.convolve(x, small_scene.estimates[m, k])[:T]
                want[k] += mu * e[m] * xf[::-1][:N]
        np.testing.assert_allclose(ctrl.W, want, atol=1e-12)

    def test_divergence_raises(self, small_scene):
        ctrl = McFxlms(small_scene.estimates, 8, 5.0, ceiling=1e3)
        with pytest.raises(DivergedError):
            drive(ctrl, small_scene, white(2000))

    def test_paper_dimensions_accepted(self):
        sc = synthesize_scene(SceneRecipe(K=6, L=256, tail=144, primary_delay=(96, 112), self_delay=(8, 20),
                                          cross_extra_delay=(4, 16)))
        ctrl = McFxlms(sc.estimates, 512, 1e-6)
        assert ctrl.W.shape == (6, 512)

    def test_bad_length(self, small_scene):
        with pytest.raises(DimensionError):
            McFxlms(small_scene.estimates, 0, 0.1)


class TestDecentralized:
    def test_diagonal_scene_matches_centralized(self, small_scene):
        sc = diagonal(small_scene)
        x = white(500)
        a, *_ = drive(McFxlms(sc.estimates, 8, 0.01), sc, x)
        b, *_ = drive(DecentralizedFxlms(sc.estimates, 8, 0.01), sc, x)
        np.testing.assert_allclose(a, b, atol=1e-13)

    def test_one_node_frozen(self, small_scene):
        Ws, *_ = drive(DecentralizedFxlms(small_scene.estimates, 8, [0.01, 0.0, 0.01]), small_scene, white(300))
        assert not Ws[:, 1].any() and Ws[-1, 0].any() and Ws[-1, 2].any()

    def test_negative_step(self, small_scene):
        with pytest.raises(ParameterError):
            DecentralizedFxlms(small_scene.estimates, 8, -1.0)


class TestDiffusion:
    def test_identity_topology_is_decentralized(self, small_scene):
        x = white(400)
        a, *_ = drive(DecentralizedFxlms(small_scene.estimates, 8, 0.01), small_scene, x)
        for mode in ("ATC", "CTA"):
            b, *_ = drive(DiffusionFxlms(small_scene.estimates, 8, 0.01, np.eye(3), mode), small_scene, x)
            np.testing.assert_allclose(a, b, atol=1e-13)

    def test_symmetric_pair_stays_equal(self, rng):
        s = rng.standard_normal(10) * 0.8 ** np.arange(10)
        c = 0.5 * np.roll(s, 2)
        p = np.roll(rng.standard_normal(10), 4)
        S = np.array([[s, c], [c, s]])
        sc = AcousticScene(np.array([p, p]), S, S.copy())
        Ws, *_ = drive(DiffusionFxlms(sc.estimates, 6, 0.01, np.full((2, 2), 0.5)), sc, white(500))
        np.testing.assert_allclose(Ws[:, 0], Ws[:, 1], atol=1e-14)

    def test_ring_of_six_runs(self):
        sc = synthesize_scene(SceneRecipe(K=6, seed=2))
        ctrl = DiffusionFxlms(sc.estimates, 16, 1e-4, ring_topology(6))
        drive(ctrl, sc, white(500))
        assert np.all(np.isfinite(ctrl.W))

    @pytest.mark.parametrize("A", [np.ones((2, 3)) / 3, np.array([[1.5, -0.5], [0.5, 0.5]]),
                                   np.array([[0.5, 0.4], [0.5, 0.5]])])
    def test_bad_topology(self, A):
        with pytest.raises(TopologyError):
            check_topology(A)

    def test_wrong_size_topology(self, small_scene):
        with pytest.raises(TopologyError):
            DiffusionFxlms(small_scene.estimates, 4, 0.1, np.eye(2))

    @given(st.integers(1, 9), st.integers(0, 4))
    def test_property_ring_rows(self, K, hops):
        A = ring_topology(K, hops)
        np.testing.assert_allclose(A.sum(axis=1), 1.0)
        assert (A >= 0).all()


class TestAsss:
    def test_no_delay(self):
        assert asss_mu(0.1, [0, 0], 16000) == 0.1

    def test_formula(self):
        assert asss_mu(1.0, [8000], 16000) == pytest.approx(math.exp(-1))

    def test_max_rule(self):
        assert asss_mu(1.0, [4000, 8000, None], 16000) == asss_mu(1.0, [8000], 16000)

    def test_unknown_peers(self):
        assert asss_mu(0.3, [None, None], 8000) == 0.3

    @pytest.mark.parametrize("args", [(1.0, [1], 0), (1.0, [-1], 8000)])
    def test_errors(self, args):
        with pytest.raises(ParameterError):
            asss_mu(*args)

    @given(st.floats(1e-6, 1.0), st.lists(st.integers(0, 50_000), min_size=1, max_size=6))
    def test_property_monotone(self, mu0, delays):
        mu = asss_mu(mu0, delays, 16000)
        assert 0 < mu <= mu0
        assert mu <= asss_mu(mu0, delays[:1], 16000) + 1e-300


class TestMgdNode:
    def _node(self, s_hat, N=4, K=2, H=3, **kw):
        return MgdNode(0, N, s_hat, np.zeros((K, H)), 0.1, 8000, **kw)

    def test_zero_error_zero_gradient(self, rng):
        node = self._node(rng.standard_normal(5))
        for v in rng.standard_normal(10):
            node.output(v)
        assert not node.local_gradient(0.0, 9).grad.any()

    def test_transparent_path(self, rng):
        node = self._node(np.array([1.0]))
        x = rng.standard_normal(12)
        for v in x:
            node.output(v)
        grad = node.local_gradient(2.0, 11).grad
        np.testing.assert_allclose(grad, 2.0 * x[::-1][: len(grad)])

    def test_gradient_oracle(self, rng):
        s = rng.standard_normal(6)
        node = self._node(s)
        x = rng.standard_normal(30)
        for v in x:
            node.output(v)
        xf = np.convolve(x, s)[:30]
        grad = node.local_gradient(-0.7, 29).grad
        np.testing.assert_allclose(grad, -0.7 * xf[::-1][: len(grad)], atol=1e-12)
        assert len(grad) == 4 + 3 - 1

    def test_message_read_only(self, rng):
        node = self._node(rng.standard_normal(3))
        node.output(1.0)
        with pytest.raises(ValueError):
            node.local_gradient(1.0, 0).grad[0] = 5.0

    def test_non_finite_error(self):
        node = self._node(np.ones(2))
        node.output(1.0)
        with pytest.raises(NumericFaultError):
            node.local_gradient(float("inf"), 0)

    def test_isolated_node_is_decentralized(self, small_scene):
        # an empty mailbox leaves only the node's own gradient
        x = white(300)
        ref = DecentralizedFxlms(small_scene.estimates, 6, 0.01)
        Wref, *_ = drive(ref, small_scene, x)
        from dmanc.scene import Plant

        plant = Plant(small_scene)
        nodes = [MgdNode(k, 6, small_scene.estimates[k, k], np.zeros((3, 2)), 0.01, 8000) for k in range(3)]
        empty = (None, None, None)
        for n in range(300):
            y = np.array([nd.tick(x[n], MailboxView(n, empty, ())) for nd in nodes])
            np.testing.assert_allclose([nd.w for nd in nodes], Wref[n], atol=1e-13)
            _, e = plant.propagate(x[n], y)
            for k, nd in enumerate(nodes):
                nd.local_gradient(e[k], n)

    def test_bad_combine(self):
        with pytest.raises(ParameterError):
            self._node(np.ones(2), combine="fancy")


def _engines(scene, comp, N, mu, fs, schedule=None, asss=False):
    sched = schedule or ConstantDelay(0)
    return (MgdNodeNetwork(scene.estimates, N, comp, mu, fs, asss, NetworkBus(scene.K, sched)),
            MgdNetwork(scene.estimates, N, comp, mu, fs, asss, NetworkBus(scene.K, sched), history=64))


class TestMixedGradientNetwork:
    def test_single_node_is_fxlms(self):
        sc = synthesize_scene(SceneRecipe(K=1, seed=4))
        x = white(400)
        a, *_ = drive(DecentralizedFxlms(sc.estimates, 8, 0.01), sc, x)
        b, *_ = drive(MgdNodeNetwork(sc.estimates, 8, np.ones((1, 1, 1)), 0.01, 8000), sc, x)
        np.testing.assert_allclose(a, b, atol=1e-13)

    def test_matches_monolithic_oracle(self, exact_scene):
        x = white(400, 2)
        comp = exact_scene.comp_true
        want = mgd_oracle(exact_scene, x, 6, comp, 0.005)
        for eng in _engines(exact_scene, comp, 6, 0.005, 8000):
            got, *_ = drive(eng, exact_scene, x)
            np.testing.assert_allclose(got, want, atol=1e-12)

    def test_exact_scene_tracks_centralized(self, exact_scene):
        x = white(2000, 3)
        a, *_ = drive(McFxlms(exact_scene.estimates, 6, 0.005), exact_scene, x)
        b, *_ = drive(MgdNodeNetwork(exact_scene.estimates, 6, exact_scene.comp_true, 0.005, 8000), exact_scene, x)
        np.testing.assert_allclose(a, b, atol=1e-10)

    def test_scalar_gain_exact(self, rng):
        sc, comp = scalar_gain_scene(rng, gains=np.array([[1, 0.6, -0.4], [0.3, 1, 0.5], [-0.7, 0.2, 1]]))
        x = white(1500, 4)
        a, *_ = drive(McFxlms(sc.estimates, 8, 0.003), sc, x)
        b, *_ = drive(MgdNodeNetwork(sc.estimates, 8, comp, 0.003, 8000), sc, x)
        np.testing.assert_allclose(a, b, atol=1e-10)

    @pytest.mark.parametrize("schedule", [ConstantDelay(0), ConstantDelay(7), StepDelay([(0, 30), (200, 3), (400, 90)]),
                                          SinusoidDelay(5.0, 20, 8000)])
    @pytest.mark.parametrize("asss", [False, True])
    def test_engines_agree_under_delay(self, exact_scene, schedule, asss):
        x = white(700, 5)
        a, b = _engines(exact_scene, exact_scene.comp_true, 6, 0.004, 400, schedule, asss)
        ra, rb = drive(a, exact_scene, x), drive(b, exact_scene, x)
        np.testing.assert_allclose(ra[0], rb[0], atol=1e-13)
        np.testing.assert_array_equal(ra[2], rb[2])
        np.testing.assert_array_equal(ra[3], rb[3])

    def test_zero_delay_telemetry(self, exact_scene):
        _, _, mu, delta = drive(_engines(exact_scene, exact_scene.comp_true, 6, 0.01, 8000, asss=True)[0],
                                exact_scene, white(50))
        assert not delta.any()
        assert (mu == 0.01).all()

    def test_constant_delay_telemetry(self, exact_scene):
        D = 12
        _, _, mu, delta = drive(_engines(exact_scene, exact_scene.comp_true, 6, 0.01, 100, ConstantDelay(D),
                                         asss=True)[1], exact_scene, white(80))
        assert (delta[D + 1 :] == D).all()
        np.testing.assert_array_equal(mu[D + 1 :], 0.01 * math.exp(-2 * D / 100))

    def test_temporal_combine_runs(self, exact_scene):
        eng = MgdNodeNetwork(exact_scene.estimates, 6, exact_scene.comp_true, 0.002, 8000, combine="temporal")
        Ws, E, *_ = drive(eng, exact_scene, white(500))
        assert np.all(np.isfinite(Ws))

    def test_divergence(self, exact_scene):
        eng = MgdNetwork(exact_scene.estimates, 6, exact_scene.comp_true, 10.0, 8000, ceiling=1e3)
        with pytest.raises(DivergedError):
            drive(eng, exact_scene, white(3000))

    def test_bank_shape_checked(self, exact_scene):
        with pytest.raises(DimensionError):
            MgdNetwork(exact_scene.estimates, 6, np.zeros((2, 2, 3)), 0.1, 8000)
