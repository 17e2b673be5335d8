"""Discrete-event core: integer cycle clock, event queue, jitter and trace."""

from __future__ import annotations

import hashlib
import heapq
import json
import random
from dataclasses import dataclass, field
from typing import Any, Callable, Iterator

DEFAULT_FREQ_HZ = 50_000_000
DEFAULT_MAX_SAME_CYCLE = 10_000


class SimError(Exception):
    """Base class for simulator errors."""


class LivelockError(SimError):
    pass


class UnknownChannelError(SimError, KeyError):
    pass


@dataclass
class SimClock:
    now_cycles: int = 0
    freq_hz: int = DEFAULT_FREQ_HZ

    def advance_to(self, cycles: int) -> None:
        if cycles < self.now_cycles:
            raise SimError(f"clock cannot move backward ({cycles} < {self.now_cycles})")
        self.now_cycles = cycles

    def cycles_to_ns(self, cycles: int) -> int:
        return cycles * 1_000_000_000 // self.freq_hz

    def ns_to_cycles(self, ns: int) -> int:
        return ns * self.freq_hz // 1_000_000_000

    def us_to_cycles(self, us: float) -> int:
        return round(us * self.freq_hz / 1_000_000)


class Event:
    __slots__ = ("fire_at", "seq", "kind", "payload", "cancelled", "fired")

    def __init__(self, fire_at: int, seq: int, kind: str, payload: Any = None):
        self.fire_at = fire_at
        self.seq = seq
        self.kind = kind
        self.payload = payload
        self.cancelled = False
        self.fired = False

    def __lt__(self, other: "Event") -> bool:
        return (self.fire_at, self.seq) < (other.fire_at, other.seq)

    def __repr__(self) -> str:
        return f"Event({self.fire_at}, #{self.seq}, {self.kind!r})"


@dataclass(frozen=True)
class TraceEntry:
    cycle: int
    src: str
    event: str
    data: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(
            {"cycle": self.cycle, "src": self.src, "event": self.event, "data": self.data},
            sort_keys=True,
            separators=(",", ":"),
        )


class TraceLog:
    """Append-only list of trace entries, ordered by cycle."""

    def __init__(self) -> None:
        self.entries: list[TraceEntry] = []

    def append(self, cycle: int, src: str, event: str, data: dict | None = None) -> None:
        if self.entries and cycle < self.entries[-1].cycle:
            raise SimError("trace entries must be appended in cycle order")
        self.entries.append(TraceEntry(cycle, src, event, data if data is not None else {}))

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self) -> Iterator[TraceEntry]:
        return iter(self.entries)

    def select(self, src: str | None = None, event: str | None = None) -> list[TraceEntry]:
        return [
            e
            for e in self.entries
            if (src is None or e.src == src) and (event is None or e.event == event)
        ]

    def to_jsonl(self) -> str:
        return "".join(e.to_json() + "\n" for e in self.entries)

    @classmethod
    def from_jsonl(cls, text: str) -> "TraceLog":
        log = cls()
        for line in text.splitlines():
            if line.strip():
                rec = json.loads(line)
                log.append(rec["cycle"], rec["src"], rec["event"], rec["data"])
        return log


def derive_seed(*parts: Any) -> int:
    """Stable 64-bit seed from arbitrary parts (independent of PYTHONHASHSEED)."""
    digest = hashlib.sha256(repr(parts).encode()).digest()
    return int.from_bytes(digest[:8], "little")


class JitterSource:
    """Uniform integer jitter channels, each with its own seeded stream.

    Per-channel streams keep draws on one channel unaffected by how often
    another channel is used, so paired runs under different configurations
    see the same arrival phases.
    """

    def __init__(self, seed: int, channels: dict[str, tuple[int, int]] | None = None):
        self.seed = seed & 0xFFFF_FFFF_FFFF_FFFF
        self._bounds: dict[str, tuple[int, int]] = {}
        self._streams: dict[str, random.Random] = {}
        for name, bounds in (channels or {}).items():
            self.configure(name, *bounds)

    def configure(self, channel: str, lo: int, hi: int) -> None:
        if lo > hi or lo < 0:
            raise ValueError(f"bad bounds for jitter channel {channel!r}: [{lo}, {hi}]")
        self._bounds[channel] = (int(lo), int(hi))
        self._streams[channel] = random.Random(derive_seed(self.seed, channel))

    def has(self, channel: str) -> bool:
        return channel in self._bounds

    def bounds(self, channel: str) -> tuple[int, int]:
        try:
            return self._bounds[channel]
        except KeyError:
            raise UnknownChannelError(channel) from None

    def draw(self, channel: str) -> int:
        lo, hi = self.bounds(channel)
        if lo == hi:
            return lo
        return self._streams[channel].randint(lo, hi)


Handler = Callable[[Event], None]


class Engine:
    """Single-threaded discrete-event loop with FIFO tie-break."""

    def __init__(
        self,
        freq_hz: int = DEFAULT_FREQ_HZ,
        seed: int = 0,
        jitter: dict[str, tuple[int, int]] | None = None,
        max_same_cycle: int = DEFAULT_MAX_SAME_CYCLE,
    ):
        self.clock = SimClock(0, freq_hz)
        self.trace = TraceLog()
        self.jitter = JitterSource(seed, jitter)
        self.max_same_cycle = max_same_cycle
        self._queue: list[tuple[int, int, Event]] = []
        self._seq = 0
        self._handlers: dict[str, Handler] = {}
        self.scheduled = 0
        self.fired = 0
        self.cancelled = 0
        self._burst_cycle = -1
        self._burst = 0

    @property
    def now(self) -> int:
        return self.clock.now_cycles

    @property
    def pending(self) -> int:
        return self.scheduled - self.fired - self.cancelled

    def on(self, kind: str, handler: Handler) -> None:
        self._handlers[kind] = handler

    def schedule(self, delay: int, kind: str, payload: Any = None) -> Event:
        if delay < 0:
            raise SimError(f"negative delay {delay}")
        return self.schedule_at(self.clock.now_cycles + delay, kind, payload)

    def schedule_at(self, fire_at: int, kind: str, payload: Any = None) -> Event:
        if fire_at < self.clock.now_cycles:
            raise SimError(f"cannot schedule in the past ({fire_at} < {self.now})")
        ev = Event(fire_at, self._seq, kind, payload)
        self._seq += 1
        heapq.heappush(self._queue, (fire_at, ev.seq, ev))
        self.scheduled += 1
        return ev

    def cancel(self, ev: Event) -> bool:
        if ev.cancelled or ev.fired:
            return False
        ev.cancelled = True
        self.cancelled += 1
        return True

    def record(self, src: str, event: str, data: dict | None = None) -> None:
        self.trace.append(self.clock.now_cycles, src, event, data)

    def _pop_live(self) -> Event | None:
        q = self._queue
        while q:
            ev = q[0][2]
            if ev.cancelled:
                heapq.heappop(q)
                continue
            return ev
        return None

    def peek_time(self) -> int | None:
        ev = self._pop_live()
        return None if ev is None else ev.fire_at

    def step(self) -> Event | None:
        """Fire the next live event; returns it, or None if the queue is empty."""
        ev = self._pop_live()
        if ev is None:
            return None
        heapq.heappop(self._queue)
        if ev.fire_at == self._burst_cycle:
            self._burst += 1
            if self._burst > self.max_same_cycle:
                raise LivelockError(
                    f"more than {self.max_same_cycle} events fired at cycle {ev.fire_at}"
                )
        else:
            self._burst_cycle = ev.fire_at
            self._burst = 1
        self.clock.advance_to(ev.fire_at)
        ev.fired = True
        self.fired += 1
        handler = self._handlers.get(ev.kind)
        if handler is None:
            self.record("engine", ev.kind, _jsonable(ev.payload))
        else:
            handler(ev)
        return ev

    def run_until(self, limit: int, stop: Callable[[], bool] | None = None) -> TraceLog:
        """Process every event with ``fire_at <= limit`` and leave the clock at ``limit``.

        With ``stop``, processing ends early (clock left at the last event) once it
        returns true.
        """
        if limit < self.clock.now_cycles:
            raise SimError(f"limit {limit} is before now {self.now}")
        while True:
            t = self.peek_time()
            if t is None or t > limit:
                break
            self.step()
            if stop is not None and stop():
                return self.trace
        self.clock.advance_to(limit)
        return self.trace


def _jsonable(payload: Any) -> dict:
    if payload is None:
        return {}
    if isinstance(payload, dict):
        return payload
    return {"value": payload if isinstance(payload, (int, str, float, bool)) else repr(payload)}
