#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
Deterministic discrete-event engine for the recovery simulator.
All protocol behaviour is driven by timestamped events dispatched from one
heap; randomness comes from named, seeded sub-streams.
"""

import heapq
import logging
import zlib
from dataclasses import dataclass, field
from decimal import Decimal
from typing import Any, Callable, Dict, List, Optional, Tuple

import numpy as np

logger = logging.getLogger(__name__)

MICROS_PER_MS = 1000
MICROS_PER_SECOND = 1_000_000
ENGINE_TARGET = "engine"


class SimulationError(Exception):
    """Root of every error raised by the simulator"""


class SchedulingInPast(SimulationError):
    """An event was scheduled before the current clock"""


class BadRange(SimulationError):
    """A random draw was requested on an empty interval"""


def ms_to_micros(value) -> int:
    """Convert a millisecond config value to integer microseconds exactly"""
    micros = Decimal(str(value)) * MICROS_PER_MS
    return int(micros.to_integral_value())


def seconds_to_micros(value: float) -> int:
    """Convert a duration in seconds (timer arithmetic) to microseconds"""
    return int(round(value * MICROS_PER_SECOND))


def micros_to_seconds(value: int) -> float:
    return value / MICROS_PER_SECOND


def stream_id(node: str, protocol: str) -> str:
    """Name of the random sub-stream owned by one (node, protocol) pair"""
    return f"{node}/{protocol}"


@dataclass(order=True)
class SimEvent:
    """A scheduled event; (fire_at, seq) totally orders the queue"""

    fire_at: int
    seq: int
    target: str = field(compare=False)
    payload: Any = field(compare=False)
    callback: Optional[Callable[[Any], None]] = field(default=None, compare=False, repr=False)
    canceled: bool = field(default=False, compare=False)
    fired: bool = field(default=False, compare=False)

    @property
    def pending(self) -> bool:
        return not (self.canceled or self.fired)


class RandomSource:
    """Seeded generator factory with one independent stream per name.

    A stream's draws depend only on (seed, stream name), never on how other
    streams were used, so adding a protocol to a run does not perturb the
    draws of another.
    """

    def __init__(self, seed: int):
        self.seed = int(seed)
        self._streams: Dict[str, np.random.Generator] = {}

    def stream(self, name: str) -> np.random.Generator:
        gen = self._streams.get(name)
        if gen is None:
            key = zlib.crc32(name.encode("utf-8"))
            seq = np.random.SeedSequence(entropy=self.seed, spawn_key=(key,))
            gen = np.random.default_rng(seq)
            self._streams[name] = gen
        return gen


class Engine:
    """Single-threaded event loop with a seeded random source"""

    def __init__(self, seed: int = 0, record_dispatch: bool = False):
        self._clock = 0
        self._queue: List[SimEvent] = []
        self._seq = 0
        self._handlers: Dict[str, Callable[[Any], None]] = {}
        self.random = RandomSource(seed)
        self.record_dispatch = record_dispatch
        self.dispatch_log: List[Tuple[int, int, str, str]] = []

    @property
    def now(self) -> int:
        return self._clock

    @property
    def seed(self) -> int:
        return self.random.seed

    def register(self, target: str, handler: Callable[[Any], None]):
        """Route events addressed to target (without a callback) to handler"""
        self._handlers[target] = handler

    def schedule(self, at: int, target: str, payload: Any,
                 callback: Optional[Callable[[Any], None]] = None) -> SimEvent:
        """Enqueue payload for target at absolute time `at` (microseconds)"""
        if at < self._clock:
            raise SchedulingInPast(f"cannot schedule at {at}us, clock is {self._clock}us")
        event = SimEvent(int(at), self._seq, target, payload, callback)
        self._seq += 1
        heapq.heappush(self._queue, event)
        return event

    def schedule_in(self, delay: int, target: str, payload: Any,
                    callback: Optional[Callable[[Any], None]] = None) -> SimEvent:
        return self.schedule(self._clock + delay, target, payload, callback)

    def cancel(self, handle: Optional[SimEvent]) -> bool:
        """Cancel a pending event; True iff it existed and had not fired"""
        if handle is None or not handle.pending:
            return False
        handle.canceled = True
        return True

    def run_until(self, end: int) -> int:
        """Dispatch every event with fire_at <= end; return how many fired"""
        dispatched = 0
        while self._queue and self._queue[0].fire_at <= end:
            event = heapq.heappop(self._queue)
            if event.canceled:
                continue
            self._clock = event.fire_at
            event.fired = True
            dispatched += 1
            if self.record_dispatch:
                self.dispatch_log.append(
                    (event.fire_at, event.seq, event.target, type(event.payload).__name__))
            self._dispatch(event)
        self._clock = max(self._clock, end)
        return dispatched

    def _dispatch(self, event: SimEvent):
        if event.callback is not None:
            event.callback(event.payload)
            return
        handler = self._handlers.get(event.target)
        if handler is None:
            raise SimulationError(f"event targeted unknown node {event.target!r}")
        handler(event.payload)

    def pending_count(self) -> int:
        return sum(1 for event in self._queue if event.pending)

    def uniform(self, stream: str, lo: float, hi: float) -> float:
        """Draw from [lo, hi) on the named sub-stream"""
        if lo > hi:
            raise BadRange(f"empty interval [{lo}, {hi})")
        if lo == hi:
            return float(lo)
        return float(self.random.stream(stream).uniform(lo, hi))

    def nonce(self, stream: str) -> int:
        """Fresh 64-bit nonce from the named sub-stream"""
        gen = self.random.stream(stream)
        return int(gen.integers(0, 2 ** 64, dtype=np.uint64))

    def bernoulli(self, stream: str, prob: float) -> bool:
        """True with probability prob; no draw is consumed for 0 or 1"""
        if prob <= 0.0:
            return False
        if prob >= 1.0:
            return True
        return bool(self.random.stream(stream).random() < prob)
