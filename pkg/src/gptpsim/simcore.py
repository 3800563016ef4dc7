"""Deterministic discrete-event scheduler and seeded random streams.

Simulation time is an integer count of nanoseconds. Events are ordered by
``(fire_at, seq)`` where ``seq`` is a per-scheduler insertion counter, so
simultaneous events fire in the order they were scheduled.
"""

from __future__ import annotations

import hashlib
import heapq
from dataclasses import dataclass, field
from typing import Any, Callable, NamedTuple

import numpy as np

NS = 1
US = 1_000
MS = 1_000_000
S = 1_000_000_000


class SchedulingInPast(ValueError):
    pass


class InvalidRange(ValueError):
    pass


@dataclass(order=True)
class Event:
    fire_at: int
    seq: int
    target: str = field(default="", compare=False)
    kind: str = field(default="", compare=False)
    action: Callable[[], Any] | None = field(default=None, compare=False, repr=False)
    cancelled: bool = field(default=False, compare=False)


class Scheduler:
    """Single-threaded event queue holding the ground-truth timeline."""

    def __init__(self) -> None:
        self.now = 0
        self._queue: list[Event] = []
        self._seq = 0
        self.processed = 0
        # (fire_at, seq, kind, target) for every fired event, when enabled
        self.trail: list[tuple[int, int, str, str]] | None = None

    def schedule(self, fire_at: int, action: Callable[[], Any], kind: str = "",
                 target: str = "") -> Event:
        if fire_at < self.now:
            raise SchedulingInPast(f"fire_at={fire_at} < now={self.now}")
        ev = Event(int(fire_at), self._seq, target, kind, action)
        self._seq += 1
        heapq.heappush(self._queue, ev)
        return ev

    def schedule_in(self, delay: int, action: Callable[[], Any], kind: str = "",
                    target: str = "") -> Event:
        return self.schedule(self.now + delay, action, kind, target)

    @staticmethod
    def cancel(handle: Event) -> None:
        handle.cancelled = True

    def run_until(self, horizon: int) -> int:
        """Fire every event with ``fire_at <= horizon``; returns how many fired."""
        if horizon < self.now:
            raise SchedulingInPast(f"horizon={horizon} < now={self.now}")
        fired = 0
        queue = self._queue
        while queue and queue[0].fire_at <= horizon:
            ev = heapq.heappop(queue)
            if ev.cancelled:
                continue
            self.now = ev.fire_at
            if self.trail is not None:
                self.trail.append((ev.fire_at, ev.seq, ev.kind, ev.target))
            fired += 1
            if ev.action is not None:
                ev.action()
        self.now = horizon
        self.processed += fired
        return fired

    def __len__(self) -> int:
        return sum(1 for ev in self._queue if not ev.cancelled)


def _stream_key(stream_id: str) -> int:
    digest = hashlib.blake2b(stream_id.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


class RngStream:
    """Named random stream.

    The generator is seeded from ``(seed, stream_id)`` through numpy's
    ``SeedSequence`` spawn key, so streams with distinct ids are independent
    and adding a stream never perturbs another one.
    """

    def __init__(self, seed: int, stream_id: str) -> None:
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self.stream_id = stream_id
        ss = np.random.SeedSequence(entropy=self.seed, spawn_key=(_stream_key(stream_id),))
        self._gen = np.random.Generator(np.random.PCG64(ss))

    def uniform(self, lo: float, hi: float, size: int | None = None):
        if lo > hi:
            raise InvalidRange(f"lo={lo} > hi={hi}")
        if lo == hi:
            return lo if size is None else np.full(size, float(lo))
        if size is None:
            return float(self._gen.uniform(lo, hi))
        return self._gen.uniform(lo, hi, size)


def draw_uniform(stream: RngStream, lo: float, hi: float) -> float:
    return stream.uniform(lo, hi)


class LogEntry(NamedTuple):
    time: int
    kind: str
    node: str
    fields: tuple[tuple[str, Any], ...]

    def get(self, key: str, default: Any = None) -> Any:
        for k, v in self.fields:
            if k == key:
                return v
        return default

    def format(self) -> str:
        parts = [str(self.time), self.kind, self.node]
        parts.extend(f"{k}={v}" for k, v in self.fields)
        return " ".join(parts)


class EventLog:
    """Append-only record of protocol-level happenings (frames, syncs, faults)."""

    def __init__(self) -> None:
        self.entries: list[LogEntry] = []

    def add(self, time: int, kind: str, node: str, **fields: Any) -> None:
        self.entries.append(LogEntry(time, kind, node, tuple(fields.items())))

    def of_kind(self, *kinds: str) -> list[LogEntry]:
        return [e for e in self.entries if e.kind in kinds]

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def to_text(self) -> str:
        return "".join(e.format() + "\n" for e in self.entries)
