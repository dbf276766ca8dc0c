"""Discrete-event core: integer-nanosecond clock, ordered event queue, named RNG streams.

Every run is single-threaded and deterministic: events fire in (time, insertion
sequence) order, and all randomness flows through named streams derived from the
run seed, so two runs with the same seed interleave identically.
"""

from __future__ import annotations

import heapq
import random
from typing import Callable


class SimulationError(Exception):
    """Base class for errors raised by the simulator core."""


class SchedulingError(SimulationError):
    """An event was scheduled in the past or the clock would move backwards."""


class InvariantViolation(SimulationError):
    """A continuously-checked protocol or accounting invariant failed."""


class EventHandle:
    """Cancellable reference to a scheduled event."""

    __slots__ = ("fire_at", "seq", "fn", "cancelled")

    def __init__(self, fire_at: int, seq: int, fn: Callable[[], None]):
        self.fire_at = fire_at
        self.seq = seq
        self.fn = fn
        self.cancelled = False

    def cancel(self) -> None:
        self.cancelled = True


class RngStreams:
    """Registry of independent random.Random streams keyed by name.

    Stream state depends only on (seed, name) and the draw sequence, so adding
    draws to one stream never perturbs another.
    """

    def __init__(self, seed: int):
        self.seed = seed
        self._streams: dict[str, random.Random] = {}

    def stream(self, name: str) -> random.Random:
        rng = self._streams.get(name)
        if rng is None:
            # str seeding is stable across processes and platforms (sha512 based).
            rng = random.Random(f"{self.seed}/{name}")
            self._streams[name] = rng
        return rng


class Simulator:
    """Event loop with an integer nanosecond clock."""

    def __init__(self, seed: int = 1):
        self.now = 0
        self.rng = RngStreams(seed)
        self._heap: list[tuple[int, int, EventHandle]] = []
        self._seq = 0
        self.dispatch_count = 0

    def schedule(self, fire_at: int, fn: Callable[[], None]) -> EventHandle:
        """Schedule fn at absolute time fire_at (>= now). Returns a cancellable handle."""
        if fire_at < self.now:
            raise SchedulingError(f"cannot schedule at {fire_at} ns; clock is at {self.now} ns")
        handle = EventHandle(fire_at, self._seq, fn)
        self._seq += 1
        heapq.heappush(self._heap, (fire_at, handle.seq, handle))
        return handle

    def schedule_in(self, delay: int, fn: Callable[[], None]) -> EventHandle:
        return self.schedule(self.now + delay, fn)

    def run_until(self, t_end: int) -> int:
        """Dispatch every event with fire_at <= t_end in order; leave now == t_end.

        Returns the number of events dispatched (cancelled events are skipped
        and not counted).
        """
        if t_end < self.now:
            raise SchedulingError(f"cannot run to {t_end} ns; clock is at {self.now} ns")
        dispatched = 0
        heap = self._heap
        while heap and heap[0][0] <= t_end:
            fire_at, _, handle = heapq.heappop(heap)
            if handle.cancelled:
                continue
            self.now = fire_at
            handle.fn()
            dispatched += 1
        self.now = t_end
        self.dispatch_count += dispatched
        return dispatched

    def pending(self) -> int:
        """Number of not-yet-dispatched, not-cancelled events."""
        return sum(1 for _, _, h in self._heap if not h.cancelled)
