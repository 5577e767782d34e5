"""
Deterministic discrete-event kernel.

One clock, one heap of pending events ordered by ``(fire_at, seq)``, and a
family of seeded random streams derived from a single master seed.
"""

from __future__ import annotations

import heapq
import itertools
import zlib
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable

import numpy as np

from .utils.logger import get_logger

logger = get_logger("engine")

SYSTEM = "sys"
RNG_ALGORITHM = "PCG64"


class PastEventError(ValueError):
    """Raised when an event is scheduled before the current clock."""


class EventState(str, Enum):
    PENDING = "pending"
    FIRED = "fired"
    CANCELLED = "cancelled"


@dataclass(order=True)
class SimEvent:
    """A timestamped unit of work. Ordered by fire time, then insertion counter."""
    fire_at: float
    seq: int
    kind: str = field(compare=False, default="timer")
    target: int | str = field(compare=False, default=SYSTEM)
    callback: Callable[..., Any] | None = field(compare=False, default=None, repr=False)
    args: tuple = field(compare=False, default=(), repr=False)
    state: EventState = field(compare=False, default=EventState.PENDING)


class EventHandle:
    """Opaque handle returned by :meth:`Simulator.schedule`."""

    __slots__ = ("_event",)

    def __init__(self, event: SimEvent):
        self._event = event

    @property
    def fire_at(self) -> float:
        return self._event.fire_at

    @property
    def pending(self) -> bool:
        return self._event.state is EventState.PENDING


class RngStreams:
    """
    Named random sub-streams derived from one master seed.

    Each label maps to its own ``numpy.random.Generator``; drawing from one
    stream never perturbs another, so adding a consumer leaves existing
    draws unchanged.
    """

    def __init__(self, seed: int):
        self.seed = int(seed)
        self._streams: dict[str, np.random.Generator] = {}

    @staticmethod
    def label_key(label: str) -> int:
        return zlib.crc32(label.encode("utf-8"))

    def stream(self, label: str) -> np.random.Generator:
        gen = self._streams.get(label)
        if gen is None:
            seq = np.random.SeedSequence(entropy=self.seed, spawn_key=(self.label_key(label),))
            gen = np.random.Generator(np.random.PCG64(seq))
            self._streams[label] = gen
        return gen


class Simulator:
    """Global clock plus event queue."""

    def __init__(self, seed: int = 0):
        self.now = 0.0
        self._queue: list[SimEvent] = []
        self._seq = itertools.count()
        self.rng = RngStreams(seed)
        self.dispatched = 0

    def schedule(
        self,
        fire_at: float,
        callback: Callable[..., Any],
        *args: Any,
        kind: str = "timer",
        target: int | str = SYSTEM,
    ) -> EventHandle:
        """Schedule ``callback(*args)`` at absolute time ``fire_at``."""
        if fire_at < self.now:
            raise PastEventError(f"past event: fire_at={fire_at} is before clock={self.now}")
        event = SimEvent(fire_at, next(self._seq), kind, target, callback, args)
        heapq.heappush(self._queue, event)
        return EventHandle(event)

    def schedule_in(self, delay: float, callback: Callable[..., Any], *args: Any, **kwargs: Any) -> EventHandle:
        return self.schedule(self.now + delay, callback, *args, **kwargs)

    def cancel(self, handle: EventHandle | None) -> bool:
        """Cancel a pending event. False when already fired or cancelled."""
        if handle is None or handle._event.state is not EventState.PENDING:
            return False
        handle._event.state = EventState.CANCELLED
        return True

    def pending(self) -> int:
        return sum(1 for e in self._queue if e.state is EventState.PENDING)

    def run_until(self, t_end: float) -> int:
        """Dispatch every event with ``fire_at <= t_end``; leave the clock at ``t_end``."""
        if t_end < self.now:
            raise PastEventError(f"past event: run_until({t_end}) is before clock={self.now}")
        count = 0
        queue = self._queue
        while queue and queue[0].fire_at <= t_end:
            event = heapq.heappop(queue)
            if event.state is not EventState.PENDING:
                continue
            self.now = event.fire_at
            event.state = EventState.FIRED
            count += 1
            if event.callback is not None:
                event.callback(*event.args)
        self.now = t_end
        self.dispatched += count
        logger.debug(f"run_until({t_end}) dispatched {count} events")
        return count
