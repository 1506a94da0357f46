"""Speed-ratio streams and the time-dilation rule shared by controllers and the scheduler.

A stream yields exactly one speed ratio per tick of length ``dt``. Consumers
ask for run lengths so that long constant stretches are skipped in one step;
a lazily computed stream simply answers with runs of one tick.

Progress rule: work (nominal seconds) accrues at ``ratio`` per wall second.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Protocol, Sequence

import numpy as np

DT = 0.1
_EPS = 1e-9
FOREVER = 1 << 40


class SafetyStream(Protocol):
    dt: float

    def run(self, tick: int) -> tuple[float, int]:
        """(ratio at ``tick``, number of ticks from ``tick`` it stays constant; >= 1)."""
        ...


class ConstantStream:
    def __init__(self, ratio: float = 1.0, dt: float = DT):
        self.ratio = ratio
        self.dt = dt

    def run(self, tick: int) -> tuple[float, int]:
        return self.ratio, FOREVER


class TimelineStream:
    """Per-tick ratios from an array; ticks past the end use ``tail``."""

    def __init__(self, ratios: Sequence[float], dt: float = DT, tail: float = 1.0):
        self.ratios = np.asarray(ratios, dtype=float)
        self.dt = dt
        self.tail = tail
        n = len(self.ratios)
        # run_end[i]: first index > i whose ratio differs from ratios[i]
        bounds = np.append(np.flatnonzero(self.ratios[1:] != self.ratios[:-1]) + 1, n)
        self._run_end = bounds[np.searchsorted(bounds, np.arange(n), side="right")] if n else bounds

    def run(self, tick: int) -> tuple[float, int]:
        if tick >= len(self.ratios):
            return self.tail, FOREVER
        end = int(self._run_end[tick])
        ratio = float(self.ratios[tick])
        if end == len(self.ratios) and ratio == self.tail:
            return ratio, FOREVER
        return ratio, end - tick


class ScriptedStream(TimelineStream):
    """Ratio 1 except for scripted (start_s, end_s, ratio) windows, snapped to ticks."""

    def __init__(self, events: Sequence[tuple[float, float, float]], dt: float = DT):
        horizon = max((e[1] for e in events), default=0.0)
        n = int(math.ceil(horizon / dt - _EPS))
        ratios = np.ones(n)
        for start, end, ratio in events:
            a = int(round(start / dt))
            b = int(round(end / dt))
            ratios[a:b] = ratio
        super().__init__(ratios, dt)


@dataclass
class Advance:
    end: float
    paused: float = 0.0
    slowed: float = 0.0


def tick_of(t: float, dt: float) -> int:
    return int(math.floor(t / dt + _EPS))


def advance(stream: SafetyStream, start: float, work: float, max_wall: float = math.inf) -> Advance:
    """Play ``work`` nominal seconds against the stream starting at wall time ``start``.

    Returns the wall-clock end time plus the wall time spent at ratio 0
    (paused) and at 0 < ratio < 1 (slowed).
    """
    if work < 0:
        raise ValueError("work must be non-negative")
    dt = stream.dt
    t = start
    remaining = work
    paused = slowed = 0.0
    while remaining > _EPS * max(1.0, work):
        if t - start > max_wall:
            raise RuntimeError(f"no progress within {max_wall} s of wall time (robot held stopped)")
        k = tick_of(t, dt)
        ratio, n = stream.run(k)
        window = (k + n) * dt - t
        if window <= 0:
            window = dt * n
        if ratio <= 0.0:
            if n >= FOREVER:
                raise RuntimeError("stream holds the robot stopped indefinitely")
            t += window
            paused += window
            continue
        capacity = ratio * window
        if remaining <= capacity:
            used = remaining / ratio
            remaining = 0.0
        else:
            used = window
            remaining -= capacity
        t += used
        if ratio < 1.0:
            slowed += used
    return Advance(t, paused, slowed)
