"""
Compiled closed-loop simulation kernels.

Each kernel runs a whole scenario (reference, controller and plant) in
one call and follows exactly the per-sample ordering of the object
engines in :mod:`dmanc.controllers`::

    y(n) = W x(n);  d(n), e(n) from the plant;  adapt with e(n)

Mixed-gradient nodes fold in their gradients at the start of the next
sample, as :class:`~dmanc.controllers.MgdNode` does. Link delays come in
as precomputed tables so the delivery rule (latest stamp wins, a message
stamped ``t`` with delay ``D`` is usable from sample ``t + D + 1``) is
reproduced without a message queue.

Everything is plain loops over float64 arrays; results are deterministic
and agree with the object engines up to summation-order rounding.
"""

from __future__ import annotations

import numpy as np
from numba import njit

__all__ = ["fxlms_loop", "mgd_loop", "comp_train_loop", "MODE_MC", "MODE_DEC", "MODE_ATC", "MODE_CTA"]

MODE_MC = 0
MODE_DEC = 1
MODE_ATC = 2
MODE_CTA = 3


@njit(cache=True)
def _plant_step(n, xpad, M, primary, secondary, ypad, Ly, d_out, e_out):
    K, L = primary.shape
    for m in range(K):
        acc = 0.0
        for l in range(L):
            acc += primary[m, l] * xpad[M + n - l]
        d_out[m] = acc
        tot = 0.0
        for k in range(K):
            for l in range(L):
                tot += secondary[m, k, l] * ypad[k, Ly + n - l]
        e_out[m] = acc - tot


@njit(cache=True)
def _diverged(W, ceiling):
    K, N = W.shape
    for k in range(K):
        for i in range(N):
            if not abs(W[k, i]) <= ceiling:
                return k
    return -1


@njit(cache=True)
def fxlms_loop(mode, x, primary, secondary, estimates, N, mu, A, ceiling, trace_every):
    """Centralized, decentralized or diffusion FxLMS over the whole input.

    Parameters
    ----------
    mode : int
        One of ``MODE_MC``, ``MODE_DEC``, ``MODE_ATC``, ``MODE_CTA``.
    x : ndarray, shape (T,)
        Reference signal.
    primary, secondary, estimates : ndarray
        Plant paths ``(K, L)``, ``(K, K, L)`` and the controller's model.
    N : int
        Control filter length.
    mu : ndarray, shape (K,)
        Step size per node.
    A : ndarray, shape (K, K)
        Combination weights (diffusion modes only).
    ceiling : float
        Divergence threshold on ``max |w|``.
    trace_every : int
        Store the weights used at every ``trace_every``-th sample; 0 disables.

    Returns
    -------
    e, d : ndarray, shape (T, K)
    W : ndarray, shape (K, N)
    trace : ndarray, shape (T_trace, K, N)
    div_at, div_node : int
        Sample and node of divergence, or -1.
    """
    T = x.shape[0]
    K, L = primary.shape
    Le = estimates.shape[2]
    M = max(max(N, L), Le)
    xpad = np.zeros(T + M)
    xpad[M:] = x
    ypad = np.zeros((K, T + L))
    xf = np.zeros((K, K, N))  # ring over the last N samples of x'_km (indexed [m, k])
    W = np.zeros((K, N))
    psi = np.zeros((K, N))
    step = np.zeros((K, N))
    e = np.zeros((T, K))
    d = np.zeros((T, K))
    ntr = (T + trace_every - 1) // trace_every if trace_every > 0 else 0
    trace = np.zeros((ntr, K, N))
    div_at, div_node = -1, -1
    for n in range(T):
        if trace_every > 0 and n % trace_every == 0:
            trace[n // trace_every] = W
        slot = n % N
        for m in range(K):
            for k in range(K):
                if mode != MODE_MC and m != k:
                    continue
                acc = 0.0
                for l in range(Le):
                    acc += estimates[m, k, l] * xpad[M + n - l]
                xf[m, k, slot] = acc
        for k in range(K):
            acc = 0.0
            for i in range(N):
                acc += W[k, i] * xpad[M + n - i]
            ypad[k, L + n] = acc
        _plant_step(n, xpad, M, primary, secondary, ypad, L, d[n], e[n])

        for k in range(K):
            for i in range(N):
                s = (slot - i) % N
                if mode == MODE_MC:
                    g = 0.0
                    for m in range(K):
                        g += xf[m, k, s] * e[n, m]
                    step[k, i] = mu[k] * g
                else:
                    step[k, i] = (mu[k] * e[n, k]) * xf[k, k, s]
        if mode == MODE_MC or mode == MODE_DEC:
            W += step
        elif mode == MODE_ATC:
            psi[:, :] = W + step
            W[:, :] = A @ psi
        else:
            psi[:, :] = A @ W
            W[:, :] = psi + step
        bad = _diverged(W, ceiling)
        if bad >= 0:
            div_at, div_node = n, bad
            break
    return e, d, W, trace, div_at, div_node


@njit(cache=True)
def mgd_loop(x, primary, secondary, s_self, comp, sched_of, delay_tab, mu0, fs, asss, N, ceiling,
             trace_every):
    """Mixed-gradient distributed FxLMS with per-link delays.

    Parameters
    ----------
    x : ndarray, shape (T,)
        Reference signal.
    primary, secondary : ndarray
        True plant paths.
    s_self : ndarray, shape (K, Ls)
        Each node's estimate of its own secondary path.
    comp : ndarray, shape (K, K, H)
        ``comp[m, k]`` is ``c_mk``; the diagonal is ignored.
    sched_of : ndarray of int, shape (K, K)
        Row of ``delay_tab`` governing the link ``m -> k``.
    delay_tab : ndarray of int, shape (S, T)
        Delay in samples of a message sent at each sample.
    mu0, fs : float
        Base step and sampling rate.
    asss : bool
        Shrink each node's step by ``exp(-2 delta / fs)``.
    N : int
        Control filter length.
    ceiling : float
        Divergence threshold.
    trace_every : int
        Weight-trace stride; 0 disables.

    Returns
    -------
    e, d : ndarray, shape (T, K)
    mu : ndarray, shape (T, K)
        Step size applied at each sample.
    delta : ndarray of int, shape (T, K)
        Largest known peer delay at each sample.
    W, trace, div_at, div_node
        As for :func:`fxlms_loop`. ``W`` includes the update from the
        last error sample; ``div_at == T`` flags a blow-up in that update.
    """
    T = x.shape[0]
    K, L = primary.shape
    Ls = s_self.shape[1]
    H = comp.shape[2]
    M = max(max(N, L), Ls)
    max_d = 0
    for r in range(delay_tab.shape[0]):
        for t in range(T):
            if delay_tab[r, t] > max_d:
                max_d = delay_tab[r, t]
    R = max_d + N + 1  # ring length for the compensated streams
    Q = max_d + 2  # pending-message capacity per link
    Fx = max(N, H) + 1

    xpad = np.zeros(T + M)
    xpad[M:] = x
    ypad = np.zeros((K, T + L))
    xf = np.zeros((K, T + Fx))  # x'_kk(n) at [k, Fx + n]
    z = np.zeros((K, K, R))  # ring of c_mk * x'_mm, indexed [m, k]
    W = np.zeros((K, N))
    e = np.zeros((T, K))
    d = np.zeros((T, K))
    mu = np.zeros((T, K))
    delta = np.zeros((T, K), dtype=np.int64)
    latest = np.full((K, K), -1, dtype=np.int64)  # [m, k]: newest stamp from m held by k
    q_t = np.zeros((K, K, Q), dtype=np.int64)
    q_a = np.zeros((K, K, Q), dtype=np.int64)
    q_head = np.zeros((K, K), dtype=np.int64)
    q_tail = np.zeros((K, K), dtype=np.int64)
    mu_k = np.full(K, mu0)
    del_k = np.zeros(K, dtype=np.int64)
    g = np.zeros(N)
    ntr = (T + trace_every - 1) // trace_every if trace_every > 0 else 0
    trace = np.zeros((ntr, K, N))
    div_at, div_node = -1, -1

    # the pass with n == T only folds in the last gradient, so W is the
    # filter the next sample would use
    for n in range(T + 1):
        # mailbox: messages with arrival <= n - 1
        for m in range(K):
            for k in range(K):
                if m == k:
                    continue
                while q_head[m, k] < q_tail[m, k]:
                    j = q_head[m, k] % Q
                    if q_a[m, k, j] > n - 1:
                        break
                    latest[m, k] = q_t[m, k, j]
                    q_head[m, k] += 1
        # delay estimate, step size and combine-update
        for k in range(K):
            oldest = -1
            for m in range(K):
                if m != k and latest[m, k] >= 0 and (oldest < 0 or latest[m, k] < oldest):
                    oldest = latest[m, k]
            if oldest >= 0:
                dk = n - 1 - oldest
                if dk != del_k[k]:
                    del_k[k] = dk
                    if asss:
                        mu_k[k] = mu0 * np.exp(-2.0 * dk / fs)
            if n > 0:
                ek = e[n - 1, k]
                for i in range(N):
                    g[i] = ek * xf[k, Fx + n - 1 - i]
                for m in range(K):
                    t = latest[m, k]
                    if m == k or t < 0:
                        continue
                    em = e[t, m]
                    for i in range(N):
                        g[i] += em * z[m, k, (t - i + R) % R]
                for i in range(N):
                    W[k, i] += mu_k[k] * g[i]
            if n < T:
                mu[n, k] = mu_k[k]
                delta[n, k] = del_k[k]
        bad = _diverged(W, ceiling)
        if bad >= 0:
            div_at, div_node = n, bad
            break
        if n == T:
            break
        if trace_every > 0 and n % trace_every == 0:
            trace[n // trace_every] = W
        # filtered references and control output
        for k in range(K):
            acc = 0.0
            for l in range(Ls):
                acc += s_self[k, l] * xpad[M + n - l]
            xf[k, Fx + n] = acc
        for m in range(K):
            for k in range(K):
                if m == k:
                    continue
                acc = 0.0
                for h in range(H):
                    acc += comp[m, k, h] * xf[m, Fx + n - h]
                z[m, k, n % R] = acc
        for k in range(K):
            acc = 0.0
            for i in range(N):
                acc += W[k, i] * xpad[M + n - i]
            ypad[k, L + n] = acc
        _plant_step(n, xpad, M, primary, secondary, ypad, L, d[n], e[n])
        finite = True
        for m in range(K):
            if not np.isfinite(e[n, m]):
                finite = False
        if not finite:
            div_at, div_node = n, 0
            break
        # broadcast: queue (stamp, arrival) per link, dropping superseded entries
        for m in range(K):
            for k in range(K):
                if m == k:
                    continue
                a = n + delay_tab[sched_of[m, k], n]
                while q_tail[m, k] > q_head[m, k] and q_a[m, k, (q_tail[m, k] - 1) % Q] >= a:
                    q_tail[m, k] -= 1
                j = q_tail[m, k] % Q
                q_t[m, k, j] = n
                q_a[m, k, j] = a
                q_tail[m, k] += 1
    return e, d, mu, delta, W, trace, div_at, div_node


@njit(cache=True)
def comp_train_loop(v, desired, vf, s_mm, c0, mu, window, tol, blowup, average):
    """Sequential part of offline compensation training.

    ``desired`` is ``v * s_mk`` and ``vf`` is ``v * s_hat_mm``; the model
    output passes ``c^T v`` through the true self path ``s_mm``. When the
    budget runs out and ``average > 0``, the mean of the iterates over the
    last ``average`` samples is returned instead of the final iterate.

    Returns
    -------
    c : ndarray
        Final filter.
    iters : int
        Samples consumed.
    status : int
        0 budget exhausted, 1 converged, 2 diverged. Divergence means a
        window error power ``blowup`` times the desired-signal power of the
        first window, or any non-finite value.
    err_power : float
        Mean squared error over the last complete window.
    """
    T = v.shape[0]
    H = c0.shape[0]
    Ls = s_mm.shape[0]
    c = c0.copy()
    c_prev = c0.copy()
    u = np.zeros(Ls)  # ring of model-filter outputs c^T v
    c_sum = np.zeros(H)
    avg_from = T - average
    ref_power = -1.0
    acc = 0.0
    acc_d = 0.0
    last_power = 0.0
    for n in range(T):
        ui = 0.0
        for h in range(min(H, n + 1)):
            ui += c[h] * v[n - h]
        u[n % Ls] = ui
        y = 0.0
        for l in range(min(Ls, n + 1)):
            y += s_mm[l] * u[(n - l) % Ls]
        err = desired[n] - y
        if not np.isfinite(err):
            return c, n + 1, 2, np.inf
        acc += err * err
        acc_d += desired[n] * desired[n]
        g = mu * err
        for h in range(min(H, n + 1)):
            c[h] += g * vf[n - h]
        if average > 0 and n >= avg_from:
            c_sum += c
        if (n + 1) % window == 0:
            power = acc / window
            acc = 0.0
            last_power = power
            if ref_power < 0.0:
                # the untrained error is the desired signal itself
                ref_power = acc_d / window
            dn = 0.0
            cn = 0.0
            for h in range(H):
                dn += (c[h] - c_prev[h]) ** 2
                cn += c[h] ** 2
            if not (np.isfinite(power) and np.isfinite(cn)) or (ref_power > 0.0 and power > blowup * ref_power):
                return c, n + 1, 2, power
            if cn > 0.0 and dn <= tol * tol * cn:
                return c, n + 1, 1, power
            c_prev[:] = c
    if average > 0 and T > 0:
        return c_sum / min(average, T), T, 0, last_power
    return c, T, 0, last_power
