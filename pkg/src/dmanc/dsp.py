"""
Sample-level DSP substrate: tap vectors, delay lines, FIR stepping,
band-pass design and deterministic signal sources.

Histories are stored most-recent-first, so ``line.history(n)`` is
``[x(n), x(n-1), ..., x(n-n+1)]`` and a filter output is a plain dot
product with the tap vector. Samples written before the first push read
as zero.

All random streams use numpy's PCG64 bit generator seeded explicitly.
"""

from __future__ import annotations

import math
import wave
from pathlib import Path

import numpy as np

from .errors import DimensionError, EndOfStream, NumericFaultError, ParameterError

__all__ = [
    "as_taps",
    "DelayLine",
    "fir_step",
    "tap_history",
    "design_bandpass",
    "SignalSource",
    "WhiteGaussianSource",
    "BandpassSource",
    "SineSource",
    "FilePlaybackSource",
    "make_source",
    "read_signal_file",
]

# Samples drawn per refill of a buffered source. Fixed so that any mix of
# next_sample()/take() calls sees the same stream.
_BLOCK = 4096


def as_taps(taps, name="taps"):
    """Validate and return a tap vector as a 1-D float64 array."""
    arr = np.asarray(taps, dtype=np.float64)
    if arr.ndim != 1 or arr.size < 1:
        raise DimensionError(f"{name} must be a non-empty 1-D sequence, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise NumericFaultError(f"{name} contains non-finite coefficients")
    return arr


class DelayLine:
    """Most-recent-first sample history of fixed capacity.

    Backed by a buffer longer than the capacity; writes walk backwards
    through it so every read is a contiguous view and relocation only
    happens once per ``slack`` pushes.

    Parameters
    ----------
    capacity : int
        Number of past samples retained (including the newest).
    channels : int, optional
        When given, the line stores a vector of ``channels`` samples per
        step and ``history`` returns a ``(channels, n)`` view.
    """

    def __init__(self, capacity, channels=None):
        capacity = int(capacity)
        if capacity < 1:
            raise DimensionError("delay line capacity must be >= 1")
        self.capacity = capacity
        self.channels = channels
        self._slack = max(capacity, _BLOCK)
        size = capacity + self._slack
        shape = (size,) if channels is None else (int(channels), size)
        self._buf = np.zeros(shape)
        self._pos = self._slack

    def push(self, sample):
        if self._pos == 0:
            c, s = self.capacity, self._slack
            self._buf[..., s + 1 : s + c] = self._buf[..., : c - 1]
            self._pos = s + 1
        self._pos -= 1
        self._buf[..., self._pos] = sample

    def history(self, n=None):
        """View of the ``n`` most recent samples, newest first."""
        if n is None:
            n = self.capacity
        if n > self.capacity:
            raise DimensionError(f"requested {n} taps from a line of capacity {self.capacity}")
        return self._buf[..., self._pos : self._pos + n]

    def __getitem__(self, lag):
        if not 0 <= lag < self.capacity:
            raise IndexError(lag)
        return self._buf[..., self._pos + lag]

    def reset(self):
        self._buf[...] = 0.0
        self._pos = self._slack


def fir_step(taps, line, new_sample):
    """Push ``new_sample`` into ``line`` and return the FIR output."""
    if not math.isfinite(new_sample):
        raise NumericFaultError(f"non-finite input sample {new_sample!r}")
    if line.capacity < len(taps):
        raise DimensionError("delay line shorter than filter")
    line.push(new_sample)
    return float(np.dot(taps, line.history(len(taps))))


def tap_history(line, n_taps):
    """Copy of ``[x(n), ..., x(n - n_taps + 1)]``."""
    return line.history(n_taps).copy()


def _lowpass_sinc(cutoff, n):
    """Unit-DC windowed-sinc lowpass; ``cutoff`` as a fraction of fs."""
    m = np.arange(n) - (n - 1) / 2
    h = 2 * cutoff * np.sinc(2 * cutoff * m) * np.hamming(n)
    return h / h.sum()


def design_bandpass(low_hz, high_hz, fs, order):
    """Linear-phase windowed-sinc (Hamming) band-pass FIR.

    Built as the difference of two lowpass prototypes that are each
    normalised to exactly unit DC gain, so the taps sum to zero up to
    rounding. The result is scaled to unit gain at the geometric centre
    of the band.

    Parameters
    ----------
    low_hz, high_hz : float
        Band edges; must satisfy ``0 < low_hz < high_hz < fs / 2``.
    fs : float
        Sampling rate in Hz.
    order : int
        Number of taps; must be odd.
    """
    if not (0 < low_hz < high_hz < fs / 2):
        raise ParameterError(
            f"band edges must satisfy 0 < low < high < fs/2, got {low_hz}, {high_hz}, fs={fs}"
        )
    order = int(order)
    if order < 3 or order % 2 == 0:
        raise ParameterError(f"order must be an odd tap count >= 3, got {order}")
    h = _lowpass_sinc(high_hz / fs, order) - _lowpass_sinc(low_hz / fs, order)
    f0 = math.sqrt(low_hz * high_hz) / fs
    gain = abs(np.sum(h * np.exp(-2j * np.pi * f0 * np.arange(order))))
    return h / gain


class SignalSource:
    """Base for deterministic sample streams.

    Subclasses implement ``_generate(n)``; this class buffers blocks of a
    fixed size so that per-sample and block reads agree exactly.
    """

    kind = "abstract"

    def __init__(self):
        self._block = np.empty(0)
        self._idx = 0

    def _generate(self, n):
        raise NotImplementedError

    def _refill(self):
        self._block = self._generate(_BLOCK)
        self._idx = 0

    def next_sample(self):
        if self._idx >= len(self._block):
            self._refill()
        v = self._block[self._idx]
        self._idx += 1
        return float(v)

    def take(self, n):
        """Return the next ``n`` samples as an array."""
        out = np.empty(int(n))
        filled = 0
        while filled < n:
            if self._idx >= len(self._block):
                self._refill()
            k = min(n - filled, len(self._block) - self._idx)
            out[filled : filled + k] = self._block[self._idx : self._idx + k]
            self._idx += k
            filled += k
        return out


class WhiteGaussianSource(SignalSource):
    """Zero-mean white Gaussian noise with standard deviation ``amplitude``."""

    kind = "white-gaussian"

    def __init__(self, seed, amplitude=1.0):
        super().__init__()
        self.seed = seed
        self.amplitude = float(amplitude)
        self._rng = np.random.Generator(np.random.PCG64(seed))

    def _generate(self, n):
        return self.amplitude * self._rng.standard_normal(n)


class BandpassSource(SignalSource):
    """White Gaussian noise shaped by :func:`design_bandpass`.

    The band-pass taps are rescaled to unit energy, so the output has the
    same variance as the driving noise.
    """

    kind = "bandpass-broadband"

    def __init__(self, seed, low_hz, high_hz, fs, order=None, amplitude=1.0):
        super().__init__()
        if order is None:
            # 511 taps at 16 kHz, scaled with fs and kept odd
            order = int(round(511 * fs / 16000)) | 1
        taps = design_bandpass(low_hz, high_hz, fs, order)
        self.taps = taps / np.linalg.norm(taps)
        self.seed = seed
        self._white = WhiteGaussianSource(seed, amplitude)
        self._tail = np.zeros(len(self.taps) - 1)

    def _generate(self, n):
        v = self._white.take(n)
        ext = np.concatenate([self._tail, v])
        self._tail = ext[len(ext) - (len(self.taps) - 1) :]
        return np.convolve(ext, self.taps, mode="valid")


class SineSource(SignalSource):
    """``amplitude * sin(2 pi f0 n / fs + phase)``."""

    kind = "sine"

    def __init__(self, f0, fs, amplitude=1.0, phase=0.0):
        super().__init__()
        self.f0, self.fs = float(f0), float(fs)
        self.amplitude, self.phase = float(amplitude), float(phase)
        self._n = 0

    def _generate(self, n):
        idx = np.arange(self._n, self._n + n)
        self._n += n
        return self.amplitude * np.sin(2 * np.pi * self.f0 * idx / self.fs + self.phase)


def read_signal_file(path):
    """Load a mono signal file as float64.

    ``.wav`` must be 16-bit PCM mono and is scaled to [-1, 1). Any other
    extension is read as headerless little-endian float64.
    """
    path = Path(path)
    if path.suffix.lower() == ".wav":
        with wave.open(str(path), "rb") as wf:
            if wf.getnchannels() != 1 or wf.getsampwidth() != 2:
                raise ParameterError(f"{path}: only 16-bit PCM mono WAV is supported")
            raw = wf.readframes(wf.getnframes())
        return np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    return np.fromfile(path, dtype="<f8")


class FilePlaybackSource(SignalSource):
    """Plays back a recorded signal, looping or raising :class:`EndOfStream`."""

    kind = "file-playback"

    def __init__(self, path, loop=True, amplitude=1.0):
        super().__init__()
        self.path = str(path)
        self.loop = loop
        self._data = read_signal_file(path) * float(amplitude)
        if self._data.size == 0:
            raise ParameterError(f"{path}: file holds no samples")
        self._pos = 0

    def __len__(self):
        return len(self._data)

    def _generate(self, n):
        data = self._data
        if self.loop:
            idx = (self._pos + np.arange(n)) % len(data)
            self._pos = (self._pos + n) % len(data)
            return data[idx]
        if self._pos >= len(data):
            raise EndOfStream(f"{self.path}: end of stream after {len(data)} samples")
        out = data[self._pos : self._pos + n]
        self._pos += len(out)
        return out


def make_source(spec, fs):
    """Build a source from a config mapping with a ``kind`` key."""
    spec = dict(spec)
    kind = spec.pop("kind")
    if kind == "white-gaussian":
        return WhiteGaussianSource(spec.get("seed", 0), spec.get("amplitude", 1.0))
    if kind == "bandpass-broadband":
        return BandpassSource(
            spec.get("seed", 0),
            spec.get("low_hz", 100.0),
            spec.get("high_hz", 1000.0),
            fs,
            order=spec.get("order"),
            amplitude=spec.get("amplitude", 1.0),
        )
    if kind == "sine":
        return SineSource(spec["f0"], fs, spec.get("amplitude", 1.0), spec.get("phase", 0.0))
    if kind == "file-playback":
        return FilePlaybackSource(spec["path"], spec.get("loop", True), spec.get("amplitude", 1.0))
    raise ParameterError(f"unknown source kind {kind!r}")
