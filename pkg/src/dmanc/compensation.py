"""
Offline training of the compensation filters ``c_mk`` that satisfy
``s_mk ~= s_mm * c_mk``.

Each pair is identified with a filtered-reference LMS loop driven by white
Gaussian excitation ``v``: the desired signal is ``v * s_mk`` (what
microphone ``m`` hears when source ``k`` plays ``v``), the model output is
``c^T v`` played through the self path ``s_mm``, and the update uses ``v``
filtered by the estimate of ``s_mm``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .dsp import WhiteGaussianSource
from .errors import DimensionError, ParameterError, TrainingDivergedError
from .scene import load_blocks, save_blocks

__all__ = [
    "CompTrainConfig",
    "CompensationBank",
    "TrainResult",
    "train_compensation",
    "train_all",
    "least_squares_compensation",
]


@dataclass
class CompTrainConfig:
    """Settings for :func:`train_compensation`.

    Attributes
    ----------
    H : int
        Compensation filter length.
    mu : float or None
        Step size. ``None`` picks ``mu_scale / (H * P)`` with ``P`` the
        power of the filtered excitation.
    mu_scale : float
        Numerator of the automatic step size.
    iterations : int
        Sample budget per pair.
    tol : float
        Stop once the relative weight change over one window drops below this.
    window : int
        Samples per convergence / divergence check.
    seed : int
        Excitation seed; pair ``(m, k)`` uses ``seed + m * K + k``.
    init : {"zero", "delta"}
        Initial filter.
    blowup_db : float
        Window error power this far above the desired-signal power of the
        first window counts as divergence.
    average_window : int
        When positive and the budget is exhausted, return the mean iterate
        over this many final samples. Averaging removes most of the
        gradient noise a fixed step leaves when ``s_mk`` is not exactly
        representable.
    """

    H: int = 16
    mu: float | None = None
    mu_scale: float = 0.1
    iterations: int = 200_000
    tol: float = 1e-8
    window: int = 1000
    seed: int = 0
    init: str = "zero"
    blowup_db: float = 20.0
    average_window: int = 0

    def validate(self):
        if self.H < 1:
            raise ParameterError("H must be >= 1")
        if self.mu is not None and not self.mu > 0:
            raise ParameterError("mu must be > 0")
        if self.iterations < 0 or self.window < 1:
            raise ParameterError("iterations must be >= 0 and window >= 1")
        if not 0 <= self.average_window <= self.iterations:
            raise ParameterError("average_window must lie in [0, iterations]")
        if self.init not in ("zero", "delta"):
            raise ParameterError(f"init must be 'zero' or 'delta', got {self.init!r}")


@dataclass
class TrainResult:
    """Outcome of one pair's training."""

    taps: np.ndarray
    iterations: int
    converged: bool
    error_power: float
    mu: float


@dataclass
class CompensationBank:
    """All ``K x K`` compensation filters; ``filters[m, k]`` is ``c_mk``.

    Diagonal entries are unit impulses.
    """

    filters: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.filters = np.array(self.filters, dtype=np.float64)
        if self.filters.ndim != 3 or self.filters.shape[0] != self.filters.shape[1]:
            raise DimensionError(f"bank must be (K, K, H), got {self.filters.shape}")
        if not np.all(np.isfinite(self.filters)):
            raise ParameterError("compensation filters must be finite")
        K, _, H = self.filters.shape
        for k in range(K):
            self.filters[k, k] = 0.0
            self.filters[k, k, 0] = 1.0

    @property
    def K(self):
        return self.filters.shape[0]

    @property
    def H(self):
        return self.filters.shape[2]

    def save(self, path):
        save_blocks(path, {"compensation": self.filters})

    @classmethod
    def load(cls, path):
        blocks = load_blocks(path)
        if "compensation" not in blocks:
            from .errors import FormatError

            raise FormatError(f"{path}: no compensation block")
        return cls(blocks["compensation"])


def _initial(cfg):
    c = np.zeros(cfg.H)
    if cfg.init == "delta":
        c[0] = 1.0
    return c


def train_compensation(scene, m, k, cfg=None):
    """Identify ``c_mk`` for one ordered pair ``m != k``.

    Returns
    -------
    TrainResult

    Raises
    ------
    TrainingDivergedError
        If the windowed error power rises ``cfg.blowup_db`` above the desired-signal power.
    """
    cfg = cfg or CompTrainConfig()
    cfg.validate()
    K, L = scene.K, scene.L
    if m == k or not (0 <= m < K and 0 <= k < K):
        raise ParameterError(f"need distinct nodes in range, got ({m}, {k})")
    if cfg.H > L:
        raise DimensionError(f"H={cfg.H} exceeds path length L={L}")
    T = int(cfg.iterations)
    v = WhiteGaussianSource(cfg.seed + m * K + k).take(T)
    desired = np.convolve(v, scene.secondary[m, k])[:T]
    s_hat = scene.estimates[m, m]
    vf = np.convolve(v, s_hat)[:T]
    mu = cfg.mu
    if mu is None:
        power = float(s_hat @ s_hat)  # unit-variance white excitation
        if power <= 0:
            raise ParameterError(f"self-path estimate for node {m} is all zero")
        mu = cfg.mu_scale / (cfg.H * power)
    c, iters, status, err_power = kernels.comp_train_loop(
        v, desired, vf, np.ascontiguousarray(scene.secondary[m, m]), _initial(cfg), mu,
        int(cfg.window), float(cfg.tol), 10.0 ** (cfg.blowup_db / 10.0), int(cfg.average_window),
    )
    if status == 2:
        raise TrainingDivergedError(int(iters), (m, k))
    return TrainResult(c, int(iters), status == 1, float(err_power), float(mu))


def train_all(scene, cfg=None):
    """Train every off-diagonal pair and assemble a :class:`CompensationBank`."""
    cfg = cfg or CompTrainConfig()
    K = scene.K
    filters = np.zeros((K, K, cfg.H))
    meta = {"H": cfg.H, "pairs": {}}
    for m in range(K):
        for k in range(K):
            if m == k:
                continue
            res = train_compensation(scene, m, k, cfg)
            filters[m, k] = res.taps
            meta["pairs"][f"{m},{k}"] = {
                "iterations": res.iterations,
                "converged": res.converged,
                "error_power": res.error_power,
                "mu": res.mu,
            }
    return CompensationBank(filters, meta)


def least_squares_compensation(s_mm, s_mk, H, ridge=1e-12):
    """Ridge-regularised ``argmin_c ||s_mm * c - s_mk||`` over the full convolution."""
    s_mm = np.asarray(s_mm, dtype=np.float64)
    s_mk = np.asarray(s_mk, dtype=np.float64)
    n = len(s_mm) + H - 1
    A = np.zeros((n, H))
    for h in range(H):
        A[h : h + len(s_mm), h] = s_mm
    b = np.zeros(n)
    b[: len(s_mk)] = s_mk
    G = A.T @ A
    G += ridge * np.trace(G) / H * np.eye(H)
    return np.linalg.solve(G, A.T @ b)
