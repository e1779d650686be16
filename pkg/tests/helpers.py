"""Shared simulation drivers and oracles for the test-suite."""

import numpy as np

from dmanc.scene import AcousticScene, Plant


def drive(ctrl, scene, x):
    """Run the output/propagate/adapt protocol; return (weights used per sample, e, mu, delta)."""
    plant = Plant(scene)
    T, K = len(x), scene.K
    Ws = np.zeros((T, K, ctrl.N))
    E = np.zeros((T, K))
    mu = np.zeros((T, K))
    delta = np.zeros((T, K), dtype=np.int64)
    for n in range(T):
        y = ctrl.output(float(x[n]), n)
        Ws[n] = ctrl.W
        mu[n] = ctrl.mu
        delta[n] = ctrl.delta
        _, e = plant.propagate(float(x[n]), y)
        E[n] = e
        ctrl.adapt(e, n)
    return Ws, E, mu, delta


def mgd_oracle(scene, x, N, comp, mu):
    """Monolithic zero-delay mixed-gradient update built from offline convolutions.

    w_k(n+1) = w_k(n) + mu * sum_m zhist_mk(n) e_m(n), where z_kk = x'_kk and
    z_mk = c_mk * x'_mm. Returns the weights used at each sample.
    """
    K, T = scene.K, len(x)
    xf = np.stack([np.convolve(x, scene.estimates[m, m])[:T] for m in range(K)])
    z = np.zeros((K, K, T))
    for m in range(K):
        for k in range(K):
            z[m, k] = xf[m] if m == k else np.convolve(xf[m], comp[m, k])[:T]
    xpad = np.concatenate([np.zeros(N - 1), x])
    zpad = np.concatenate([np.zeros((K, K, N - 1)), z], axis=2)
    P = scene.primary
    S = scene.secondary
    L = scene.L
    ypad = np.zeros((K, T + L))
    W = np.zeros((K, N))
    Ws = np.zeros((T, K, N))
    for n in range(T):
        Ws[n] = W
        xh = xpad[n : n + N][::-1]
        ypad[:, L + n] = W @ xh
        e = np.zeros(K)
        for m in range(K):
            lo = max(0, n - L + 1)
            d = P[m, : n - lo + 1] @ x[lo : n + 1][::-1]
            s = sum(S[m, k] @ ypad[k, L + n - L + 1 : L + n + 1][::-1] for k in range(K))
            e[m] = d - s
        for k in range(K):
            g = np.zeros(N)
            for m in range(K):
                g += e[m] * zpad[m, k, n : n + N][::-1]
            W[k] = W[k] + mu * g
    return Ws


def scalar_gain_scene(rng, K=3, L=24, gains=None):
    """Cross paths are scaled copies of the receiver's self path: s_mk = g_mk s_mm."""
    S = np.zeros((K, K, L))
    G = np.ones((K, K)) if gains is None else gains
    for m in range(K):
        s = np.zeros(L)
        s[1 + m % 2 : 12] = rng.standard_normal(11 - m % 2) * 0.8 ** np.arange(11 - m % 2)
        for k in range(K):
            S[m, k] = s * (1.0 if m == k else G[m, k])
    P = np.zeros((K, L))
    for m in range(K):
        P[m, 10:] = rng.standard_normal(L - 10) * 0.85 ** np.arange(L - 10)
    comp = np.zeros((K, K, 1))
    for m in range(K):
        for k in range(K):
            comp[m, k, 0] = 1.0 if m == k else G[m, k]
    return AcousticScene(P, S, S.copy()), comp
