"""
Metrics and analytic oracles: normalized squared error, the coupled
Wiener solution of the multichannel problem, eigenvalue step-size bounds
with and without update delay, the delayed-update characteristic
polynomial and per-processor operation counts.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy import linalg

from .dsp import BandpassSource, WhiteGaussianSource
from .errors import (
    CapabilityError,
    ConditioningError,
    DegenerateSpectrumError,
    DimensionError,
    ParameterError,
    UndefinedReferenceError,
)

__all__ = [
    "DEFAULT_NSE_WINDOW",
    "nse",
    "nse_trace",
    "path_xcorr",
    "cross_vector",
    "WienerSolution",
    "estimate_wiener",
    "wiener_cost",
    "EigenBoundReport",
    "step_bounds",
    "delay_factor",
    "critical_mu",
    "StabilityResult",
    "char_poly_stable",
    "COMPANION_LIMIT",
    "complexity",
    "bounds_report",
    "write_json",
]

DEFAULT_NSE_WINDOW = 5000
COMPANION_LIMIT = 512
_CLOSED_FORM_LIMIT = 2**31


# -- NSE -----------------------------------------------------------------------


def nse(e_window, d_window):
    """``10 log10(mean(e^2) / mean(d^2))`` in dB.

    Returns ``-inf`` for an all-zero error window.

    Raises
    ------
    UndefinedReferenceError
        If the disturbance window has zero power.
    """
    e = np.asarray(e_window, dtype=np.float64)
    d = np.asarray(d_window, dtype=np.float64)
    if e.shape != d.shape:
        raise DimensionError(f"window shapes differ: {e.shape} vs {d.shape}")
    pd = np.mean(d * d) if d.size else 0.0
    if not pd > 0:
        raise UndefinedReferenceError("disturbance window has zero power")
    pe = np.mean(e * e)
    if pe == 0:
        return -math.inf
    return 10.0 * math.log10(pe / pd)


def nse_trace(e, d, window=DEFAULT_NSE_WINDOW, stride=1, mode="trailing"):
    """NSE over time for a ``(T, K)`` pair of error and disturbance records.

    Parameters
    ----------
    window : int
        Averaging length ``W``.
    stride : int
        Report every ``stride``-th sample.
    mode : {"trailing", "block"}
        ``"trailing"`` averages ``[n - W + 1, n]`` (shorter at the start);
        ``"block"`` averages the aligned block of ``W`` samples containing ``n``
        up to ``n``.

    Returns
    -------
    samples : ndarray of int
    values : ndarray, shape (len(samples), K)
        dB values; NaN where the disturbance window has no power, ``-inf``
        where the error window is exactly zero.
    """
    e = np.asarray(e, dtype=np.float64)
    d = np.asarray(d, dtype=np.float64)
    if e.ndim == 1:
        e, d = e[:, None], d[:, None]
    if e.shape != d.shape:
        raise DimensionError(f"record shapes differ: {e.shape} vs {d.shape}")
    if window < 1 or stride < 1:
        raise ParameterError("window and stride must be >= 1")
    T = e.shape[0]
    samples = np.arange(0, T, stride)
    ce = np.concatenate([np.zeros((1, e.shape[1])), np.cumsum(e * e, axis=0)])
    cd = np.concatenate([np.zeros((1, d.shape[1])), np.cumsum(d * d, axis=0)])
    if mode == "trailing":
        lo = np.maximum(samples - window + 1, 0)
    elif mode == "block":
        lo = (samples // window) * window
    else:
        raise ParameterError(f"unknown NSE mode {mode!r}")
    hi = samples + 1
    pe = ce[hi] - ce[lo]
    pdw = cd[hi] - cd[lo]
    with np.errstate(divide="ignore", invalid="ignore"):
        vals = 10.0 * np.log10(pe / pdw)
    vals[~(pdw > 0)] = np.nan
    vals[(pe <= 0) & (pdw > 0)] = -np.inf
    return samples, vals


# -- correlations and the Wiener solution --------------------------------------


def path_xcorr(f, g, N):
    """``R[i, j] = sum_t f[t] g[t + i - j]``.

    For unit white input ``x``, this is ``E[a(n - i) b(n - j)]`` with
    ``a = f * x`` and ``b = g * x``.
    """
    f = np.asarray(f, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    full = np.correlate(g, f, mode="full")  # full[len(f) - 1 + tau] = sum_t f[t] g[t + tau]
    lags = np.arange(N)[:, None] - np.arange(N)[None, :] + len(f) - 1
    ok = (lags >= 0) & (lags < len(full))
    return np.where(ok, full[np.clip(lags, 0, len(full) - 1)], 0.0)


def cross_vector(p, f, N):
    """``P[i] = sum_t p[t + i] f[t]``, the white-input ``E[d(n) a(n - i)]``."""
    p = np.asarray(p, dtype=np.float64)
    f = np.asarray(f, dtype=np.float64)
    full = np.correlate(p, f, mode="full")
    idx = len(f) - 1 + np.arange(N)
    return np.where(idx < len(full), full[np.minimum(idx, len(full) - 1)], 0.0)


@dataclass
class WienerSolution:
    """Coupled optimum for all K control filters.

    Attributes
    ----------
    w : ndarray, shape (K, N)
    R : ndarray, shape (K*N, K*N)
        Stacked ``sum_m E[x'_km x'_lm^T]``.
    P : ndarray, shape (K*N,)
        Stacked ``sum_m E[d_m x'_km]``.
    sigma_d2 : ndarray, shape (K,)
        Disturbance powers ``E[d_m^2]``.
    cost : float
        Minimum of ``sum_m E[e_m^2]``.
    loading : float
        Diagonal loading added before the solve.
    """

    w: np.ndarray
    R: np.ndarray
    P: np.ndarray
    sigma_d2: np.ndarray
    cost: float
    loading: float

    @property
    def nse_db(self):
        """Optimal NSE over all microphones combined."""
        return 10.0 * math.log10(max(self.cost, 0.0) / self.sigma_d2.sum()) if self.cost > 0 else -math.inf


def wiener_cost(sol, w):
    """Quadratic cost ``sum_m E[e_m^2]`` at control filters ``w`` (K, N)."""
    v = np.asarray(w, dtype=np.float64).ravel()
    return float(sol.sigma_d2.sum() - 2.0 * sol.P @ v + v @ sol.R @ v)


def _shaping(source):
    if source is None or isinstance(source, WhiteGaussianSource):
        amp = 1.0 if source is None else source.amplitude
        return np.array([amp])
    if isinstance(source, BandpassSource):
        return source.taps * source._white.amplitude
    return None


def _analytic_stats(primary, paths, N, b):
    K = primary.shape[0]
    prim = [np.convolve(primary[m], b) for m in range(K)]
    filt = [[np.convolve(paths[m, k], b) for k in range(K)] for m in range(K)]
    R = np.zeros((K * N, K * N))
    P = np.zeros(K * N)
    sd = np.array([prim[m] @ prim[m] for m in range(K)])
    for m in range(K):
        for k in range(K):
            P[k * N : (k + 1) * N] += cross_vector(prim[m], filt[m][k], N)
            for l in range(k, K):
                blk = path_xcorr(filt[m][k], filt[m][l], N)
                R[k * N : (k + 1) * N, l * N : (l + 1) * N] += blk
                if l != k:
                    R[l * N : (l + 1) * N, k * N : (k + 1) * N] += blk.T
    return R, P, sd


def _lag_xcorr(a, b, maxlag):
    """``r[tau + maxlag] = mean_n a(n) b(n + tau)`` for ``|tau| <= maxlag``."""
    T = len(a)
    nfft = 1 << int(math.ceil(math.log2(2 * T)))
    c = np.fft.irfft(np.conj(np.fft.rfft(a, nfft)) * np.fft.rfft(b, nfft), nfft)
    return np.concatenate([c[nfft - maxlag :], c[: maxlag + 1]]) / T


def _sampled_stats(primary, paths, N, x):
    K = primary.shape[0]
    T = len(x)
    d = np.stack([np.convolve(x, primary[m])[:T] for m in range(K)])
    R = np.zeros((K * N, K * N))
    P = np.zeros(K * N)
    lag = np.arange(N)[:, None] - np.arange(N)[None, :] + (N - 1)
    for m in range(K):
        xf = [np.convolve(x, paths[m, k])[:T] for k in range(K)]
        for k in range(K):
            P[k * N : (k + 1) * N] += _lag_xcorr(xf[k], d[m], N - 1)[N - 1 :]
            for l in range(K):
                R[k * N : (k + 1) * N, l * N : (l + 1) * N] += _lag_xcorr(xf[k], xf[l], N - 1)[lag]
    R = 0.5 * (R + R.T)
    return R, P, np.mean(d * d, axis=1)


def estimate_wiener(scene, N, source=None, samples=None, paths="secondary", epsilon=1e-10, seed=0):
    """Solve the coupled normal equations for all nodes jointly.

    Parameters
    ----------
    scene : AcousticScene
    N : int
        Control filter length.
    source : SignalSource, optional
        Reference statistics. White Gaussian (default) and band-pass
        sources are handled analytically through path correlations; any
        other source, or an explicit ``samples`` budget, uses sample
        averages over a fresh record.
    samples : int, optional
        Force sample averaging over this many samples.
    paths : {"secondary", "estimates"}
        Paths that form the filtered references.
    epsilon : float
        Relative diagonal loading ``epsilon * trace(R) / (K N)``.

    Raises
    ------
    ConditioningError
        If the loaded system is still numerically singular.
    """
    if paths not in ("secondary", "estimates"):
        raise ParameterError(f"paths must be 'secondary' or 'estimates', got {paths!r}")
    S = scene.secondary if paths == "secondary" else scene.estimates
    K = scene.K
    b = _shaping(source) if samples is None else None
    if b is not None:
        R, P, sd = _analytic_stats(scene.primary, S, N, b)
    else:
        budget = int(samples or 200_000)
        src = source if source is not None else WhiteGaussianSource(seed)
        R, P, sd = _sampled_stats(scene.primary, S, N, src.take(budget))
    n = K * N
    tr = float(np.trace(R))
    load = epsilon * tr / n
    A = R + load * np.eye(n)
    try:
        if not tr > 0:
            raise np.linalg.LinAlgError("zero trace")
        cf = linalg.cho_factor(A)
        w = linalg.cho_solve(cf, P)
    except np.linalg.LinAlgError:
        ev = np.linalg.eigvalsh(A)
        cond = math.inf if ev[0] <= 0 else ev[-1] / ev[0]
        raise ConditioningError(cond) from None
    if not np.all(np.isfinite(w)):
        raise ConditioningError(math.inf)
    sol = WienerSolution(w.reshape(K, N), R, P, sd, 0.0, load)
    sol.cost = wiener_cost(sol, sol.w)
    return sol


# -- step-size bounds -----------------------------------------------------------


def delay_factor(delta):
    """``sin(pi / (2 (2 delta + 1)))``; equals 1 at zero delay."""
    if delta < 0:
        raise ParameterError("delay must be >= 0")
    return math.sin(math.pi / (2 * (2 * delta + 1)))


def critical_mu(sum_lambda, delta):
    """Largest stable step ``(2 / sum_lambda) * sin(pi / (2 (2 delta + 1)))``."""
    if not sum_lambda > 0:
        raise ParameterError("sum of eigenvalues must be > 0")
    return 2.0 / sum_lambda * delay_factor(delta)


@dataclass
class EigenBoundReport:
    """Per-node eigenvalue summary and step-size bounds.

    Attributes
    ----------
    eigenvalues : ndarray, shape (K, K, N)
        ``[k, m]`` holds the ascending eigenvalues of ``R_kk,m``.
    lambda_max : ndarray, shape (K, K)
    bound_no_delay : ndarray, shape (K,)
        ``2 / sum_m lambda_max[k, m]``.
    bound_delay : ndarray, shape (K,)
    delay : int
    """

    eigenvalues: np.ndarray
    lambda_max: np.ndarray
    bound_no_delay: np.ndarray
    bound_delay: np.ndarray
    delay: int

    @property
    def global_no_delay(self):
        return float(self.bound_no_delay.min())

    @property
    def global_delay(self):
        return float(self.bound_delay.min())

    def to_dict(self):
        return {
            "delay": self.delay,
            "lambda_max": self.lambda_max.tolist(),
            "sum_lambda_max": self.lambda_max.sum(axis=1).tolist(),
            "bound_no_delay": self.bound_no_delay.tolist(),
            "bound_delay": self.bound_delay.tolist(),
            "global_no_delay": self.global_no_delay,
            "global_delay": self.global_delay,
        }


def step_bounds(scene, N, delta=0, source=None, paths="estimates"):
    """Eigenvalue step-size bounds per node.

    ``R_kk,m`` is the autocorrelation matrix of the filtered reference
    ``x'_km``; its eigenvalues come from a symmetric eigensolver.

    Raises
    ------
    DegenerateSpectrumError
        If every filtered reference of some node has zero power.
    """
    if paths not in ("secondary", "estimates"):
        raise ParameterError(f"paths must be 'secondary' or 'estimates', got {paths!r}")
    S = scene.estimates if paths == "estimates" else scene.secondary
    b = _shaping(source)
    if b is None:
        raise ParameterError("step bounds need a white or band-pass reference")
    K = scene.K
    eig = np.zeros((K, K, N))
    for k in range(K):
        for m in range(K):
            f = np.convolve(S[m, k], b)
            eig[k, m] = np.linalg.eigvalsh(path_xcorr(f, f, N))
    lam = eig[:, :, -1]
    total = lam.sum(axis=1)
    if not np.all(total > 0):
        raise DegenerateSpectrumError("a node has an all-zero filtered-reference spectrum")
    b0 = 2.0 / total
    return EigenBoundReport(eig, lam, b0, b0 * delay_factor(delta), int(delta))


class StabilityResult(NamedTuple):
    stable: bool
    max_root: float | None
    method: str


def char_poly_stable(mu, sum_lambda, delta):
    """Stability of ``z^(delta+1) - z^delta + mu * sum_lambda = 0``.

    Up to ``COMPANION_LIMIT`` the roots are the eigenvalues of the
    companion matrix; beyond it only the closed-form boundary is tested
    and ``max_root`` is ``None``.

    Raises
    ------
    CapabilityError
        When ``delta`` is too large for either method.
    """
    if not mu > 0 or not sum_lambda > 0:
        raise ParameterError("need mu > 0 and sum_lambda > 0")
    if int(delta) != delta or delta < 0:
        raise ParameterError(f"delay must be a non-negative integer, got {delta!r}")
    delta = int(delta)
    a = mu * sum_lambda
    if delta <= COMPANION_LIMIT:
        coeffs = np.zeros(delta + 2)
        coeffs[0], coeffs[1], coeffs[-1] = 1.0, -1.0, a
        if delta == 0:
            coeffs = np.array([1.0, a - 1.0])
        roots = np.roots(coeffs)
        r = float(np.abs(roots).max())
        return StabilityResult(r < 1.0, r, "companion")
    if delta > _CLOSED_FORM_LIMIT:
        raise CapabilityError(f"delay {delta} exceeds the supported range")
    return StabilityResult(a < 2.0 * delay_factor(delta), None, "closed-form")


# -- complexity -----------------------------------------------------------------


def complexity(K, N, L, H):
    """Per-processor multiplications and additions for each algorithm.

    Returns a dict ``name -> (multiplications, additions)``.
    """
    for name, v in (("K", K), ("N", N), ("L", L), ("H", H)):
        if int(v) != v or v < 1:
            raise ParameterError(f"{name} must be a positive integer")
    K, N, L, H = int(K), int(N), int(L), int(H)
    mgd_add = (K + 1) * N + L + (H - 1) * (N - H + 1) - 2
    return {
        "MCFxLMS": (K * K * (2 * N + L) + K * N, K * K * (N + L - 1) + K * (N - 1)),
        "DFxLMS": ((K + 3) * N + L, (K + 1) * N + L - 2),
        "ADFxLMS": ((K + 1) ** 2 * N + K * L, (K * K + 1) * N + K * (L - 1) - 1),
        "MGDFxLMS": (L + (3 + H) * N - H * (H - 3) - 2, mgd_add),
        "ASSS-MGDFxLMS": (L + (3 + H) * N - H * (H - 3), mgd_add),
    }


# -- reports ------------------------------------------------------------------------


def bounds_report(scene, N, delays=(0,), source=None):
    """JSON-ready dictionary of bounds for several delays."""
    base = step_bounds(scene, N, 0, source)
    return {
        "N": N,
        "K": scene.K,
        "lambda_max": base.lambda_max.tolist(),
        "bound_no_delay": base.bound_no_delay.tolist(),
        "global_no_delay": base.global_no_delay,
        "delayed": [
            {"delay": int(dl), "global_bound": base.global_no_delay * delay_factor(dl)} for dl in delays
        ],
    }


def write_json(obj, path):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, allow_nan=True)
        fh.write("\n")
