"""
Gradient-exchange network: per-link delay schedules, an in-flight queue
ordered by delivery sample, and latest-wins mailboxes.

Timing contract (one global sample ``n``):

1. every node ticks, reading ``mailbox.view(n)``;
2. the plant produces errors and every node broadcasts a message stamped ``n``;
3. ``bus.deliver(n)`` moves every message with ``stamp + delay <= n`` into
   its receiver's mailbox.

A message sent with zero delay is therefore consumed on the next tick, and
with a constant link delay ``D`` the freshest peer stamp visible at tick
``n`` is ``n - D - 1``. The mailbox reports that as an age of ``D + 1``
samples; the transmission delay proper is ``age - 1``.
"""

from __future__ import annotations

import bisect
import heapq
import math
from typing import NamedTuple

import numpy as np

from .errors import ConfigError, ParameterError

__all__ = [
    "GradientMessage",
    "DelaySchedule",
    "ConstantDelay",
    "StepDelay",
    "SinusoidDelay",
    "schedule_from_config",
    "Mailbox",
    "MailboxView",
    "NetworkBus",
]


class GradientMessage(NamedTuple):
    """A local gradient broadcast by ``origin`` at sample ``stamp``."""

    origin: int
    stamp: int
    grad: np.ndarray


class DelaySchedule:
    """Link delay in samples as a function of the send sample."""

    def delay(self, n):
        raise NotImplementedError

    def evaluate(self, ns):
        return np.array([self.delay(int(n)) for n in ns], dtype=np.int64)


class ConstantDelay(DelaySchedule):
    def __init__(self, samples):
        samples = int(samples)
        if samples < 0:
            raise ParameterError("delay must be >= 0")
        self.samples = samples

    def delay(self, n):
        return self.samples

    def __repr__(self):
        return f"ConstantDelay({self.samples})"


class StepDelay(DelaySchedule):
    """Piecewise-constant delay; ``steps`` is a list of ``(start, delay)``.

    Before the first start sample the delay is zero.
    """

    def __init__(self, steps):
        steps = [(int(s), int(d)) for s, d in steps]
        if not steps:
            raise ParameterError("step schedule needs at least one step")
        starts = [s for s, _ in steps]
        if starts != sorted(starts) or len(set(starts)) != len(starts):
            raise ParameterError(f"step starts must be strictly increasing, got {starts}")
        if any(d < 0 for _, d in steps):
            raise ParameterError("delays must be >= 0")
        self.steps = steps
        self._starts = starts

    def delay(self, n):
        i = bisect.bisect_right(self._starts, n) - 1
        return self.steps[i][1] if i >= 0 else 0

    def __repr__(self):
        return f"StepDelay({self.steps})"


class SinusoidDelay(DelaySchedule):
    """Fluctuating delay ``round((sin(2 pi rate n k / fs - pi/2) + 1) * amplitude)``.

    Starts at zero and peaks at ``2 * amplitude``. ``index`` scales the
    frequency per node; rounding is half-up.
    """

    def __init__(self, rate, amplitude, fs, index=1):
        if fs <= 0 or amplitude < 0:
            raise ParameterError("need fs > 0 and amplitude >= 0")
        self.rate, self.amplitude, self.fs, self.index = float(rate), float(amplitude), float(fs), index

    def delay(self, n):
        phase = 2 * math.pi * self.rate * n / self.fs * self.index - math.pi / 2
        return int(math.floor((math.sin(phase) + 1.0) * self.amplitude + 0.5))

    def evaluate(self, ns):
        ns = np.asarray(ns, dtype=np.float64)
        phase = 2 * np.pi * self.rate * ns / self.fs * self.index - np.pi / 2
        return np.floor((np.sin(phase) + 1.0) * self.amplitude + 0.5).astype(np.int64)

    def __repr__(self):
        return f"SinusoidDelay(rate={self.rate}, amplitude={self.amplitude}, fs={self.fs}, index={self.index})"


def _to_samples(value, unit, fs):
    if unit == "samples":
        return int(round(value))
    if unit == "seconds":
        return int(round(value * fs))
    raise ConfigError(f"unknown delay unit {unit!r}")


def schedule_from_config(cfg, fs, node=None):
    """Build a schedule from a mapping such as ``{"kind": "constant", "delay": 400}``.

    ``unit`` may be ``"samples"`` (default) or ``"seconds"``. For the
    sinusoid kind, ``per_node: true`` uses ``node + 1`` as the frequency
    index.
    """
    cfg = dict(cfg)
    kind = cfg.get("kind", "constant")
    unit = cfg.get("unit", "samples")
    if kind == "constant":
        return ConstantDelay(_to_samples(cfg.get("delay", 0), unit, fs))
    if kind == "steps":
        return StepDelay([(_to_samples(s, unit, fs), _to_samples(d, unit, fs)) for s, d in cfg["steps"]])
    if kind == "sinusoid":
        index = cfg.get("index", 1)
        if cfg.get("per_node") and node is not None:
            index = node + 1
        amp = cfg["amplitude"] if unit == "samples" else cfg["amplitude"] * fs
        return SinusoidDelay(cfg["rate"], amp, fs, index)
    raise ConfigError(f"unknown delay schedule kind {kind!r}")


class MailboxView(NamedTuple):
    """Immutable snapshot handed to a node at one tick.

    ``latest[m]`` is the freshest message delivered from peer ``m`` (or
    ``None``); ``fresh`` holds every message delivered since the previous
    view, in ``(origin, stamp)`` order.
    """

    current_sample: int
    latest: tuple
    fresh: tuple

    def ages(self):
        """Per-peer ``current_sample - latest stamp``; ``None`` if never heard."""
        return [None if msg is None else self.current_sample - msg.stamp for msg in self.latest]


class Mailbox:
    """Latest-wins inbox of one receiving node."""

    def __init__(self, owner, K):
        self.owner = owner
        self._latest = [None] * K
        self._fresh = []
        self.received = 0

    def receive(self, msg):
        self.received += 1
        self._fresh.append(msg)
        cur = self._latest[msg.origin]
        if cur is None or msg.stamp > cur.stamp:
            self._latest[msg.origin] = msg

    def view(self, current_sample):
        fresh = self._fresh
        if len(fresh) > 1:
            fresh.sort(key=lambda m: (m.origin, m.stamp))
        self._fresh = []
        return MailboxView(current_sample, tuple(self._latest), tuple(fresh))


class NetworkBus:
    """Fully connected broadcast network with per-link delay schedules.

    Parameters
    ----------
    K : int
        Number of nodes.
    schedules : DelaySchedule, mapping, or callable, optional
        One schedule for every link, a dict keyed by ``(sender, receiver)``
        or a callable ``(sender, receiver) -> DelaySchedule``. Defaults to
        zero delay.
    drop_rate : float
        Probability that a message is silently lost. Kept at zero for
        delay-only studies.
    """

    def __init__(self, K, schedules=None, drop_rate=0.0, seed=0):
        self.K = K
        if schedules is None:
            schedules = ConstantDelay(0)
        if isinstance(schedules, DelaySchedule):
            table = {(a, b): schedules for a in range(K) for b in range(K) if a != b}
        elif callable(schedules):
            table = {(a, b): schedules(a, b) for a in range(K) for b in range(K) if a != b}
        else:
            table = dict(schedules)
        self._sched = [[table.get((a, b)) for b in range(K)] for a in range(K)]
        self.mailboxes = [Mailbox(k, K) for k in range(K)]
        self.drop_rate = float(drop_rate)
        self._rng = np.random.Generator(np.random.PCG64(seed)) if drop_rate > 0 else None
        self._queue = []
        self._now = []  # zero-delay messages, delivered after the queue
        self._seq = 0
        self.sent = 0
        self.dropped = 0

    def link_delay(self, sender, receiver, n):
        return self._sched[sender][receiver].delay(n)

    def send(self, msg):
        """Queue ``msg`` for every other node at ``stamp + delay(stamp)``."""
        row = self._sched[msg.origin]
        stamp = msg.stamp
        prev, d = None, 0
        for to in range(self.K):
            if to == msg.origin:
                continue
            self.sent += 1
            if self._rng is not None and self._rng.random() < self.drop_rate:
                self.dropped += 1
                continue
            sched = row[to]
            if sched is not prev:
                d, prev = sched.delay(stamp), sched
            if d == 0:
                self._now.append((to, msg))
            else:
                heapq.heappush(self._queue, (stamp + d, self._seq, to, msg))
                self._seq += 1

    def deliver(self, n):
        """Hand over every queued message due at or before sample ``n``."""
        q = self._queue
        boxes = self.mailboxes
        while q and q[0][0] <= n:
            _, _, to, msg = heapq.heappop(q)
            boxes[to].receive(msg)
        if self._now:
            for to, msg in self._now:
                boxes[to].receive(msg)
            self._now = []

    def view(self, node, current_sample):
        return self.mailboxes[node].view(current_sample)

    @property
    def in_flight(self):
        return len(self._queue) + len(self._now)
