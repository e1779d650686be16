"""
Control algorithms for the K-node plant.

Every controller follows the same two-phase protocol per sample ``n``::

    y = ctrl.output(x_n, n)      # control signals y_k(n) = w_k^T x(n)
    d, e = plant.propagate(x_n, y)
    ctrl.adapt(e, n)             # consume e(n)

The centralized, decentralized and diffusion controllers update their
weights inside ``adapt``. Mixed-gradient nodes instead broadcast their
local gradient in ``adapt`` and fold it into the weights at the start of
the next ``output``, after reading their mailbox. Both orderings produce
the same weight sequence when the network has no delay.

Sign convention: gradients carry ``x' * e`` without the factor -2, and
updates add ``mu * gradient``.
"""

from __future__ import annotations

import math

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .dsp import DelayLine
from .errors import DimensionError, DivergedError, NumericFaultError, ParameterError, TopologyError
from .network import GradientMessage, NetworkBus

__all__ = [
    "DEFAULT_CEILING",
    "McFxlms",
    "DecentralizedFxlms",
    "DiffusionFxlms",
    "check_topology",
    "ring_topology",
    "asss_mu",
    "MgdNode",
    "MgdNodeNetwork",
    "MgdNetwork",
]

DEFAULT_CEILING = 1e6


def _within(w, ceiling):
    """``max|w| <= ceiling`` and finite; the squared norm screens cheaply first."""
    v = w.ravel()
    ss = v @ v
    if ss <= ceiling * ceiling:
        return True
    return bool(np.abs(v).max() <= ceiling)


class _Controller:
    """Shared bookkeeping: weights, telemetry, divergence ceiling."""

    name = "controller"

    def __init__(self, K, N, ceiling=DEFAULT_CEILING):
        if N < 1:
            raise DimensionError("control filter length N must be >= 1")
        self.K, self.N = K, N
        self.ceiling = ceiling
        self.W = np.zeros((K, N))
        self.mu = np.zeros(K)
        self.delta = np.zeros(K, dtype=np.int64)

    @property
    def weights(self):
        return self.W

    def _check(self, n):
        if not _within(self.W, self.ceiling):
            node = int(np.argmax(~(np.abs(self.W) <= self.ceiling).all(axis=1)))
            raise DivergedError(n, node)


def _per_node(mu, K):
    mu = np.broadcast_to(np.asarray(mu, dtype=np.float64), (K,)).copy()
    if np.any(mu < 0):
        raise ParameterError("step sizes must be >= 0")
    return mu


class McFxlms(_Controller):
    """Centralized multichannel FxLMS.

    Keeps all K*K filtered references ``x'_km = s_hat_mk * x`` and updates
    ``w_k += mu * sum_m x'_km e_m``.
    """

    name = "mcfxlms"

    def __init__(self, estimates, N, mu, ceiling=DEFAULT_CEILING):
        estimates = np.asarray(estimates, dtype=np.float64)
        K, _, L = estimates.shape
        super().__init__(K, N, ceiling)
        self.L = L
        self.mu[:] = mu
        self._mu = float(mu)
        self._S = estimates.reshape(K * K, L)  # row m*K + k holds s_hat_mk
        self._x = DelayLine(max(N, L))
        self._xf = DelayLine(N, channels=K * K)

    def output(self, x_n, n=None):
        self._x.push(x_n)
        xh = self._x.history()
        self._xf.push(self._S @ xh[: self.L])
        return self.W @ xh[: self.N]

    def adapt(self, e, n=0):
        K = self.K
        xf = self._xf.history().reshape(K, K, self.N)  # [m, k, :] = x'_km
        self.W += self._mu * np.einsum("mkn,m->kn", xf, e)
        self._check(n)


class DecentralizedFxlms(_Controller):
    """Independent single-channel FxLMS per node: ``w_k += mu_k x'_kk e_k``."""

    name = "decentralized"

    def __init__(self, estimates, N, mu, ceiling=DEFAULT_CEILING):
        estimates = np.asarray(estimates, dtype=np.float64)
        K, _, L = estimates.shape
        super().__init__(K, N, ceiling)
        self.L = L
        self.mu[:] = _per_node(mu, K)
        self._S = np.array([estimates[k, k] for k in range(K)])
        self._x = DelayLine(max(N, L))
        self._xf = DelayLine(N, channels=K)

    def output(self, x_n, n=None):
        self._x.push(x_n)
        xh = self._x.history()
        self._xf.push(self._S @ xh[: self.L])
        return self.W @ xh[: self.N]

    def _local_step(self, e):
        return (self.mu * e)[:, None] * self._xf.history()

    def adapt(self, e, n=0):
        self.W += self._local_step(e)
        self._check(n)


def check_topology(weights):
    """Validate combination weights; ``weights[k, l]`` is ``a_lk``.

    Each row lists the weights node ``k`` applies to its neighbours and
    must be non-negative and sum to one.
    """
    A = np.asarray(weights, dtype=np.float64)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise TopologyError(f"combination matrix must be square, got {A.shape}")
    if np.any(A < 0):
        raise TopologyError("combination weights must be non-negative")
    if not np.allclose(A.sum(axis=1), 1.0, rtol=0, atol=1e-12):
        raise TopologyError(f"rows must sum to 1, got {A.sum(axis=1)}")
    return A


def ring_topology(K, hops=1):
    """Uniform weights over each node and its ``hops`` neighbours either side."""
    A = np.zeros((K, K))
    for k in range(K):
        nbrs = {(k + d) % K for d in range(-hops, hops + 1)}
        for l in nbrs:
            A[k, l] = 1.0 / len(nbrs)
    return A


class DiffusionFxlms(DecentralizedFxlms):
    """Diffusion FxLMS with adapt-then-combine or combine-then-adapt."""

    name = "dfxlms"

    def __init__(self, estimates, N, mu, topology, mode="ATC", ceiling=DEFAULT_CEILING):
        super().__init__(estimates, N, mu, ceiling)
        self.A = check_topology(topology)
        if self.A.shape[0] != self.K:
            raise TopologyError(f"topology is {self.A.shape}, expected {self.K} nodes")
        mode = mode.upper()
        if mode not in ("ATC", "CTA"):
            raise ParameterError(f"mode must be ATC or CTA, got {mode!r}")
        self.mode = mode
        self.psi = np.zeros_like(self.W)

    def adapt(self, e, n=0):
        if self.mode == "ATC":
            self.psi = self.W + self._local_step(e)
            self.W = self.A @ self.psi
        else:
            self.psi = self.A @ self.W
            self.W = self.psi + self._local_step(e)
        self._check(n)


def asss_mu(mu0, peer_delays, fs):
    """Auto-shrunk step ``mu0 * exp(-2 * max(delays) / fs)``.

    ``None`` entries (peers never heard from) are ignored; with no known
    peer the step is ``mu0``.
    """
    if fs <= 0:
        raise ParameterError("fs must be > 0")
    known = [d for d in peer_delays if d is not None]
    if not known:
        return mu0
    delta = max(known)
    if delta < 0:
        raise ParameterError("delays must be >= 0")
    return mu0 * math.exp(-2.0 * delta / fs)


class MgdNode:
    """One mixed-gradient distributed FxLMS node.

    Parameters
    ----------
    index : int
        This node's id ``k``.
    N : int
        Control filter length.
    s_hat : array_like, shape (L,)
        Estimate of the node's own secondary path ``s_kk``.
    comp : array_like, shape (K, H)
        Row ``m`` is the compensation filter ``c_mk`` applied to gradients
        received from node ``m``; row ``k`` is ignored.
    mu0 : float
        Base step size.
    fs : float
        Sampling rate, used by the auto-shrink rule.
    asss : bool
        Shrink the step with the largest observed peer delay.
    combine : {"tap", "temporal"}
        How a peer gradient is passed through ``c_mk``. ``"tap"`` (default)
        broadcasts ``N + H - 1`` filtered-reference taps times the error
        and correlates them with ``c_mk`` along the tap axis, which
        reproduces ``x'_km e_m`` exactly when ``s_mk = s_mm * c_mk``.
        ``"temporal"`` broadcasts N taps and convolves the sequence of the
        last H received gradient vectors with ``c_mk`` over time.
    """

    def __init__(self, index, N, s_hat, comp, mu0, fs, asss=False, combine="tap",
                 ceiling=DEFAULT_CEILING):
        comp = np.asarray(comp, dtype=np.float64)
        if comp.ndim != 2 or not 0 <= index < comp.shape[0]:
            raise DimensionError(f"compensation row must be (K, H), got {comp.shape}")
        if combine not in ("tap", "temporal"):
            raise ParameterError(f"combine must be 'tap' or 'temporal', got {combine!r}")
        self.k = index
        self.K, self.H = comp.shape
        self.N = N
        self.s_hat = np.asarray(s_hat, dtype=np.float64)
        self.L = len(self.s_hat)
        self.mu0, self.fs, self.asss = float(mu0), float(fs), asss
        self.combine = combine
        self.ceiling = ceiling

        self.comp = comp.copy()
        self.comp[index] = 0.0
        self.comp[index, 0] = 1.0
        self._peer_comp = comp.copy()
        self._peer_comp[index] = 0.0

        self.w = np.zeros(N)
        self.mu = self.mu0
        self.delta = 0
        self.msg_len = N + self.H - 1 if combine == "tap" else N
        self._x = DelayLine(max(N, self.L))
        self._xf = DelayLine(self.msg_len)
        self._own = np.zeros(self.msg_len)
        self._peers = [m for m in range(self.K) if m != index]
        if combine == "tap":
            self._G = np.zeros((self.K, self.msg_len))
            self._Gwin = sliding_window_view(self._G, self.H, axis=1)  # (K, N, H)
            self._seen = [-1] * self.K
        else:
            self._ring = np.zeros((self.K, self.H, N))
            self._ring_stamp = np.full((self.K, self.H), np.iinfo(np.int64).min)
            self._latest = np.full(self.K, -(10**18), dtype=np.int64)
            self._rows = np.arange(self.K)[:, None]
            self._lags = np.arange(self.H)

    # -- mailbox handling ------------------------------------------------

    def _ingest(self, view):
        if self.combine == "tap":
            for m in self._peers:
                msg = view.latest[m]
                if msg is not None and msg.stamp != self._seen[m]:
                    self._G[m] = msg.grad
                    self._seen[m] = msg.stamp
            return
        H = self.H
        for msg in view.fresh:
            m, t = msg.origin, msg.stamp
            if m == self.k:
                continue
            if t > self._latest[m]:
                self._latest[m] = t
            if self._latest[m] - t < H:
                slot = t % H
                self._ring[m, slot] = msg.grad
                self._ring_stamp[m, slot] = t

    def peer_delays(self, view):
        """Transmission delay per peer (``age - 1``), ``None`` if unknown."""
        n = view.current_sample
        out = []
        for m in self._peers:
            msg = view.latest[m]
            out.append(None if msg is None else n - msg.stamp - 1)
        return out

    # -- mixed-gradient update -------------------------------------------

    def peer_sum(self):
        """Compensated sum of the stored peer gradients (length N)."""
        if self.combine == "tap":
            return np.einsum("mih,mh->i", self._Gwin, self._peer_comp)
        want = self._latest[:, None] - self._lags  # stamps latest, latest-1, ...
        slots = want % self.H
        valid = self._ring_stamp[self._rows, slots] == want
        coef = np.zeros((self.K, self.H))
        coef[self._rows, slots] = np.where(valid, self._peer_comp, 0.0)
        return coef.ravel() @ self._ring.reshape(self.K * self.H, self.N)

    def combine_update(self, view):
        """Read the mailbox, pick the step size and apply the weight update."""
        self._ingest(view)
        delays = self.peer_delays(view)
        known = [d for d in delays if d is not None]
        self.delta = max(known) if known else 0
        self.mu = asss_mu(self.mu0, delays, self.fs) if self.asss else self.mu0
        self.w += self.mu * (self._own[: self.N] + self.peer_sum())
        if not _within(self.w, self.ceiling):
            raise DivergedError(view.current_sample, self.k)
        return self.w

    def output(self, x_n):
        """Push ``x(n)``, refresh the filtered reference, return ``y_k(n)``."""
        self._x.push(x_n)
        xh = self._x.history()
        self._xf.push(float(self.s_hat @ xh[: self.L]))
        return float(self.w @ xh[: self.N])

    def tick(self, x_n, view):
        """Combine-update then emit the control sample for this tick."""
        self.combine_update(view)
        return self.output(x_n)

    def local_gradient(self, e_k, n):
        """Form ``x'_kk * e_k(n)`` and return it as a broadcastable message."""
        if not math.isfinite(e_k):
            raise NumericFaultError(f"node {self.k}: non-finite error {e_k!r} at sample {n}")
        grad = e_k * self._xf.history()
        grad.flags.writeable = False
        self._own = grad
        return GradientMessage(self.k, n, grad)


class MgdNodeNetwork(_Controller):
    """K independent :class:`MgdNode` objects wired through a :class:`NetworkBus`.

    The reference engine: each node only sees its own mailbox. Supports
    both combine rules. ``comp[m, k]`` is the compensation filter ``c_mk``
    (diagonal ignored).
    """

    name = "mgdfxlms"

    def __init__(self, estimates, N, comp, mu0, fs, asss=False, bus=None, combine="tap",
                 ceiling=DEFAULT_CEILING):
        estimates = np.asarray(estimates, dtype=np.float64)
        comp = np.asarray(comp, dtype=np.float64)
        K = estimates.shape[0]
        if comp.shape[:2] != (K, K):
            raise DimensionError(f"compensation bank is {comp.shape}, expected ({K}, {K}, H)")
        super().__init__(K, N, ceiling)
        self.name = "asss-mgdfxlms" if asss else "mgdfxlms"
        self.bus = bus if bus is not None else NetworkBus(K)
        self.nodes = [
            MgdNode(k, N, estimates[k, k], comp[:, k, :], mu0, fs, asss, combine, ceiling)
            for k in range(K)
        ]
        self.W = np.stack([node.w for node in self.nodes])
        # rebind node weights as views into the stacked matrix
        for k, node in enumerate(self.nodes):
            node.w = self.W[k]
        self.mu[:] = mu0

    def output(self, x_n, n):
        y = np.empty(self.K)
        bus = self.bus
        for k, node in enumerate(self.nodes):
            y[k] = node.tick(x_n, bus.view(k, n))
            self.mu[k] = node.mu
            self.delta[k] = node.delta
        return y

    def adapt(self, e, n):
        bus = self.bus
        for k, node in enumerate(self.nodes):
            bus.send(node.local_gradient(float(e[k]), n))
        bus.deliver(n)


class MgdNetwork(_Controller):
    """Array engine for K mixed-gradient nodes using the tap combine rule.

    Produces the same weight trajectories as :class:`MgdNodeNetwork`
    (up to rounding) while advancing all nodes with stacked array
    operations. Each receiver keeps its own latest stamp and compensated
    copy of every peer gradient and its own delay estimate; the messages
    themselves travel through the :class:`NetworkBus` as usual.

    Correlating a peer gradient ``e_m(t) x'_mm`` with ``c_mk`` along the
    tap axis gives ``e_m(t)`` times the recent history of the scalar
    stream ``z_mk = c_mk * x'_mm``. The engine keeps ``history`` samples
    of those streams and of the errors, so a delivered message is
    compensated with one multiply; older messages fall back to an explicit
    correlation of the received taps.

    Parameters
    ----------
    estimates : array_like, shape (K, K, L)
        Secondary-path estimates; only the diagonal is used.
    N : int
        Control filter length.
    comp : array_like, shape (K, K, H)
        ``comp[m, k]`` is ``c_mk``; the diagonal is ignored.
    mu0 : float
        Base step size.
    fs : float
        Sampling rate.
    asss : bool
        Apply the auto-shrink rule per node.
    bus : NetworkBus, optional
        Defaults to a zero-delay bus.
    history : int
        Samples of stream history kept for the fast path.
    """

    name = "mgdfxlms"

    def __init__(self, estimates, N, comp, mu0, fs, asss=False, bus=None, history=4096,
                 ceiling=DEFAULT_CEILING):
        estimates = np.asarray(estimates, dtype=np.float64)
        comp = np.asarray(comp, dtype=np.float64)
        K, _, L = estimates.shape
        if comp.ndim != 3 or comp.shape[:2] != (K, K):
            raise DimensionError(f"compensation bank is {comp.shape}, expected ({K}, {K}, H)")
        if fs <= 0 or mu0 < 0:
            raise ParameterError("need fs > 0 and mu0 >= 0")
        super().__init__(K, N, ceiling)
        self.name = "asss-mgdfxlms" if asss else "mgdfxlms"
        self.H = comp.shape[2]
        self.L = L
        self.msg_len = N + self.H - 1
        self.mu0, self.fs, self.asss = float(mu0), float(fs), asss
        self.bus = bus if bus is not None else NetworkBus(K)
        self._S = np.array([estimates[k, k] for k in range(K)])
        self._C = comp.copy()
        self._C[np.arange(K), np.arange(K)] = 0.0
        self._hist = int(history)
        self._x = DelayLine(max(N, L))
        self._xf = DelayLine(self.msg_len, channels=K)  # x'_mm
        self._z = DelayLine(self._hist + N, channels=K * K)  # row m*K + k: c_mk * x'_mm
        self._e = DelayLine(self._hist, channels=K)
        # P[k, m]: compensated copy of the latest gradient from m held by receiver k
        self._P = np.zeros((K, K, N))
        self._stamp = [[-1] * K for _ in range(K)]
        self._own = np.zeros((K, N))
        self.mu[:] = self.mu0

    def _ingest(self, n):
        P, K, N = self._P, self.K, self.N
        boxes = self.bus.mailboxes
        zh = eh = None
        for k in range(K):
            stamp = self._stamp[k]
            for msg in boxes[k].view(n).fresh:
                m, t = msg.origin, msg.stamp
                if t <= stamp[m]:
                    continue
                stamp[m] = t
                off = n - 1 - t  # lag of sample t in the histories
                if off < self._hist:
                    if zh is None:
                        zh, eh = self._z.history(), self._e.history()
                    np.multiply(eh[m, off], zh[m * K + k, off : off + N], out=P[k, m])
                else:
                    P[k, m] = np.correlate(msg.grad, self._C[m, k], "valid")
            known = [t for t in stamp if t >= 0]
            if not known:
                continue
            d = n - 1 - min(known)
            if d != self.delta[k]:
                self.delta[k] = d
                if self.asss:
                    # same expression as asss_mu
                    self.mu[k] = self.mu0 * math.exp(-2.0 * d / self.fs)

    def output(self, x_n, n):
        self._ingest(n)
        self.W += self.mu[:, None] * (self._own + self._P.sum(axis=1))
        if not _within(self.W, self.ceiling):
            bad = ~(np.abs(self.W) <= self.ceiling).all(axis=1)
            raise DivergedError(n, int(np.argmax(bad)))
        self._x.push(x_n)
        xh = self._x.history()
        self._xf.push(self._S @ xh[: self.L])
        z = np.matmul(self._C, self._xf.history(self.H)[:, :, None])  # (K, K, 1)
        self._z.push(z.ravel())
        return self.W @ xh[: self.N]

    def adapt(self, e, n):
        e = np.asarray(e, dtype=np.float64)
        if not np.isfinite(e @ e):
            raise NumericFaultError(f"non-finite error signal at sample {n}")
        self._e.push(e)
        grads = e[:, None] * self._xf.history()
        grads.flags.writeable = False
        self._own = grads[:, : self.N]
        send = self.bus.send
        for m in range(self.K):
            send(GradientMessage(m, n, grads[m]))
        self.bus.deliver(n)
