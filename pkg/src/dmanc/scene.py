"""
K-node acoustic plant: primary paths, the secondary-path matrix and its
estimate, plus per-sample propagation to the error microphones.

Path matrices are indexed ``[m, k]`` with ``m`` the error microphone and
``k`` the secondary source, so ``secondary[m, k]`` is the impulse
response from loudspeaker ``k`` to microphone ``m``.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dsp import DelayLine
from .errors import DimensionError, FormatError, RecipeError

__all__ = [
    "AcousticScene",
    "SceneRecipe",
    "synthesize_scene",
    "Plant",
    "first_nonzero",
    "save_blocks",
    "load_blocks",
    "save_paths",
    "load_paths",
]


def first_nonzero(taps):
    """Index of the first non-zero tap (the propagation delay), or len."""
    nz = np.flatnonzero(taps)
    return int(nz[0]) if nz.size else len(taps)


@dataclass
class AcousticScene:
    """Immutable description of the plant.

    Attributes
    ----------
    primary : ndarray, shape (K, L)
        Noise-source to error-microphone paths ``p_m``.
    secondary : ndarray, shape (K, K, L)
        True secondary paths ``s_mk``.
    estimates : ndarray, shape (K, K, L)
        Secondary-path models used by the controllers.
    comp_true : ndarray, shape (K, K, H), optional
        Ground-truth compensation filters when the scene was built so that
        ``s_mk = s_mm * c_mk`` holds exactly.
    """

    primary: np.ndarray
    secondary: np.ndarray
    estimates: np.ndarray
    comp_true: np.ndarray | None = None

    def __post_init__(self):
        self.primary = np.asarray(self.primary, dtype=np.float64)
        self.secondary = np.asarray(self.secondary, dtype=np.float64)
        self.estimates = np.asarray(self.estimates, dtype=np.float64)
        K, L = self.primary.shape
        if K < 1 or L < 1:
            raise DimensionError("scene needs K >= 1 and L >= 1")
        if self.secondary.shape != (K, K, L) or self.estimates.shape != (K, K, L):
            raise DimensionError(
                f"secondary/estimates must be {(K, K, L)}, got "
                f"{self.secondary.shape} and {self.estimates.shape}"
            )
        for arr in (self.primary, self.secondary, self.estimates):
            arr.setflags(write=False)
        if self.comp_true is not None:
            self.comp_true = np.asarray(self.comp_true, dtype=np.float64)
            self.comp_true.setflags(write=False)

    @property
    def K(self):
        return self.primary.shape[0]

    @property
    def L(self):
        return self.primary.shape[1]

    def geometry_ok(self):
        """True when every self path arrives no later than the cross paths."""
        d = np.array([[first_nonzero(self.secondary[m, k]) for k in range(self.K)] for m in range(self.K)])
        for m in range(self.K):
            for k in range(self.K):
                if m != k and d[m, k] < max(d[m, m], d[k, k]):
                    return False
        return True

    def with_estimates(self, estimates):
        return dataclasses.replace(self, estimates=np.asarray(estimates, dtype=np.float64))


@dataclass
class SceneRecipe:
    """Parameters for :func:`synthesize_scene`.

    Delay ranges are inclusive ``(lo, hi)`` sample counts. Each path is a
    run of zeros followed by ``tail`` Gaussian taps with amplitude envelope
    ``decay ** j``, normalised to unit energy (cross paths to energy
    ``cross_gain ** 2``).
    """

    seed: int = 0
    K: int = 4
    L: int = 64
    self_delay: tuple = (2, 6)
    cross_extra_delay: tuple = (1, 6)
    primary_delay: tuple = (24, 28)
    tail: int = 36
    decay: float = 0.9
    cross_gain: float = 0.5
    exact_compensation: bool = False
    H: int = 16
    estimate_sigma: float = 0.0


def _decaying(rng, n, decay):
    return rng.standard_normal(n) * decay ** np.arange(n)


def _unit(v):
    return v / np.linalg.norm(v)


def synthesize_scene(recipe):
    """Draw a random scene satisfying the self-before-cross geometry.

    With ``exact_compensation`` the cross paths are built as
    ``s_mk = s_mm * c_mk`` from random ``H``-tap filters ``c_mk`` that are
    returned in ``scene.comp_true``; the convolution always fits inside
    ``L`` taps so the identity holds without truncation.
    """
    r = recipe
    K, L, tail = int(r.K), int(r.L), int(r.tail)
    if K < 1 or L < 1 or tail < 1:
        raise RecipeError("K, L and tail must be >= 1")
    for name in ("self_delay", "cross_extra_delay", "primary_delay"):
        lo, hi = getattr(r, name)
        if not 0 <= lo <= hi:
            raise RecipeError(f"{name} must be an ordered non-negative range, got {(lo, hi)}")
    if r.primary_delay[1] + tail > L:
        raise RecipeError(f"primary delay {r.primary_delay[1]} + tail {tail} exceeds L={L}")
    if r.exact_compensation:
        H = int(r.H)
        spread = r.self_delay[1] - r.self_delay[0]
        if r.self_delay[1] + tail + H - 1 > L:
            raise RecipeError(f"self delay + tail + H - 1 = {r.self_delay[1] + tail + H - 1} exceeds L={L}")
        if K > 1 and spread + r.cross_extra_delay[1] > H - 1:
            raise RecipeError("compensation length H too short for the requested cross delays")
    elif r.self_delay[1] + r.cross_extra_delay[1] + tail > L:
        raise RecipeError(
            f"cross delay {r.self_delay[1] + r.cross_extra_delay[1]} + tail {tail} exceeds L={L}"
        )

    rng = np.random.Generator(np.random.PCG64(r.seed))
    primary = np.zeros((K, L))
    secondary = np.zeros((K, K, L))
    delays = rng.integers(r.self_delay[0], r.self_delay[1] + 1, size=K)
    for k in range(K):
        secondary[k, k, delays[k] : delays[k] + tail] = _unit(_decaying(rng, tail, r.decay))

    comp_true = None
    if r.exact_compensation:
        H = int(r.H)
        comp_true = np.zeros((K, K, H))
        for m in range(K):
            comp_true[m, m, 0] = 1.0
    for m in range(K):
        for k in range(K):
            if m == k:
                continue
            extra = int(rng.integers(r.cross_extra_delay[0], r.cross_extra_delay[1] + 1))
            lead = max(delays[m], delays[k]) + extra
            if r.exact_compensation:
                c = np.zeros(int(r.H))
                off = lead - delays[m]
                c[off:] = _decaying(rng, len(c) - off, r.decay)
                s = np.convolve(secondary[m, m], c)[:L]
                scale = r.cross_gain / np.linalg.norm(s)
                comp_true[m, k] = c * scale
                secondary[m, k] = np.convolve(secondary[m, m], comp_true[m, k])[:L]
            else:
                secondary[m, k, lead : lead + tail] = r.cross_gain * _unit(_decaying(rng, tail, r.decay))
    for m in range(K):
        d = int(rng.integers(r.primary_delay[0], r.primary_delay[1] + 1))
        primary[m, d : d + tail] = _unit(_decaying(rng, tail, r.decay))

    estimates = secondary.copy()
    if r.estimate_sigma > 0:
        estimates *= 1.0 + r.estimate_sigma * rng.standard_normal(secondary.shape)
    return AcousticScene(primary, secondary, estimates, comp_true)


class Plant:
    """Per-sample propagation state for one scene (the ``PlantState``).

    After each :meth:`propagate` call the attributes ``d``, ``e``,
    ``self_term`` (``y_k * s_kk``) and ``interference`` (the crosstalk
    ``sum_{l != k} y_l * s_kl``) hold the values for that sample, so that
    ``e == d - self_term - interference``.
    """

    def __init__(self, scene):
        self.scene = scene
        self.K, self.L = scene.K, scene.L
        self._x = DelayLine(self.L)
        self._y = DelayLine(self.L, channels=self.K)
        self._diag = np.arange(self.K)
        self.d = np.zeros(self.K)
        self.e = np.zeros(self.K)
        self.self_term = np.zeros(self.K)
        self.interference = np.zeros(self.K)

    def propagate(self, x_n, y):
        """Advance one sample; returns ``(d, e)``."""
        y = np.asarray(y, dtype=np.float64)
        if y.shape != (self.K,):
            raise DimensionError(f"expected {self.K} control signals, got shape {y.shape}")
        self._x.push(x_n)
        self._y.push(y)
        d = self.scene.primary @ self._x.history()
        # contrib[m, k] = (y_k * s_mk)(n)
        contrib = np.einsum("mkl,kl->mk", self.scene.secondary, self._y.history())
        self.self_term = contrib[self._diag, self._diag]
        total = contrib.sum(axis=1)
        self.interference = total - self.self_term
        self.d = d
        self.e = d - total
        return d, self.e


# -- path files ---------------------------------------------------------------
#
# Layout: ASCII header lines, then raw little-endian float64 payload.
#
#   dmanc-paths 1
#   block <role> <rows> <cols> <length>
#   ...
#   end
#
# Each block contributes rows*cols*length doubles in row-major (m, k, tap)
# order, in the order the header lists them.

_MAGIC = "dmanc-paths 1"


def save_blocks(path, blocks):
    """Write a mapping ``role -> array (rows, cols, length)``."""
    lines = [_MAGIC]
    payload = []
    for role, arr in blocks.items():
        arr = np.asarray(arr, dtype="<f8")
        if arr.ndim == 2:
            arr = arr[:, None, :]
        if arr.ndim != 3 or " " in role:
            raise DimensionError(f"block {role!r} must be 2-D or 3-D with a space-free name")
        lines.append(f"block {role} {arr.shape[0]} {arr.shape[1]} {arr.shape[2]}")
        payload.append(np.ascontiguousarray(arr).tobytes())
    lines.append("end")
    with open(path, "wb") as fh:
        fh.write(("\n".join(lines) + "\n").encode("ascii"))
        for chunk in payload:
            fh.write(chunk)


def load_blocks(path):
    """Read a path file back into ``role -> ndarray (rows, cols, length)``."""
    raw = Path(path).read_bytes()
    marker = b"\nend\n"
    cut = raw.find(marker)
    if not raw.startswith(_MAGIC.encode()) or cut < 0:
        raise FormatError(f"{path}: missing header")
    header = raw[:cut].decode("ascii").splitlines()[1:]
    body = raw[cut + len(marker) :]
    blocks, offset = {}, 0
    for line in header:
        parts = line.split()
        if len(parts) != 5 or parts[0] != "block":
            raise FormatError(f"{path}: bad header line {line!r}")
        role = parts[1]
        try:
            shape = tuple(int(p) for p in parts[2:])
        except ValueError as exc:
            raise FormatError(f"{path}: bad dimensions in {line!r}") from exc
        nbytes = 8 * shape[0] * shape[1] * shape[2]
        if offset + nbytes > len(body):
            raise FormatError(f"{path}: payload truncated in block {role!r}")
        blocks[role] = np.frombuffer(body, dtype="<f8", count=nbytes // 8, offset=offset).reshape(shape).copy()
        offset += nbytes
    if offset != len(body):
        raise FormatError(f"{path}: {len(body) - offset} trailing bytes after declared blocks")
    return blocks


def save_paths(scene, path):
    blocks = {
        "primary": scene.primary,
        "secondary": scene.secondary,
        "estimate": scene.estimates,
    }
    if scene.comp_true is not None:
        blocks["compensation-true"] = scene.comp_true
    save_blocks(path, blocks)


def load_paths(path):
    blocks = load_blocks(path)
    try:
        primary = blocks["primary"]
        secondary = blocks["secondary"]
    except KeyError as exc:
        raise FormatError(f"{path}: missing block {exc}") from None
    K, _, L = primary.shape
    if primary.shape[1] != 1 or secondary.shape != (K, K, L):
        raise FormatError(f"{path}: primary {primary.shape} and secondary {secondary.shape} disagree")
    estimates = blocks.get("estimate", secondary)
    if estimates.shape != secondary.shape:
        raise FormatError(f"{path}: estimate block has shape {estimates.shape}")
    return AcousticScene(primary[:, 0, :], secondary, estimates, blocks.get("compensation-true"))
