"""Closed-loop ping-pong between a GPOS app and an RTOS echo client.

The app publishes a ping on the bus; the event-driven agent forwards it into
the client ring, whose doorbell raises the ``uart`` interrupt. The doorbell
ISR2 only marks work pending. The client executor task runs on a periodic
tick (period P) and buffers its output until the next spin, so both legs are
quantized to P. With P == 0 the doorbell ISR activates the executor directly
and output is flushed immediately.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

from .fabric import Mode
from .hart import CostModel
from .kernel import Activate, Call, IsrCategory, IsrConfig, Isr2Dispatch, KernelConfig, TaskConfig, Terminate
from .platform import Device, Platform
from .sim import TraceEntry, TraceLog
from .xrce import Bus, EntityKind, EntitySpec, RingTransport, XrceAgent, XrceClient, client_create_entities

US = 50  # cycles per microsecond at 50 MHz


class PingPongTimeout(Exception):
    """A round exceeded the configured timeout (lost message)."""


@dataclass(frozen=True)
class PingPongConfig:
    mode: Mode = Mode.CLINT_PLIC
    spin_period_us: int = 1000
    hop_cost_us: int = 50
    hop_jitter_us: int = 40
    spin_jitter_us: int = 20
    think_us: int = 0  # app delay before the next ping, uniform in [0, think_us]
    timeout_us: int = 100_000
    ring_slots: int = 8
    slot_size: int = 64
    spin_cycles: int = 200  # client executor work per wakeup
    isr2_optimized: bool = False
    cost: CostModel = field(default_factory=CostModel)

    def __post_init__(self) -> None:
        object.__setattr__(self, "mode", Mode(self.mode))
        for name in ("spin_period_us", "hop_cost_us", "hop_jitter_us", "spin_jitter_us", "think_us",
                     "spin_cycles"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.timeout_us <= 0:
            raise ValueError("timeout_us must be > 0")


@dataclass
class PingPongResult:
    rtt_ns: list[int]
    timeouts: int
    doorbells: int
    trace: TraceLog
    errors: list

    @property
    def min_ms(self) -> float:
        return min(self.rtt_ns) / 1e6

    @property
    def max_ms(self) -> float:
        return max(self.rtt_ns) / 1e6

    @property
    def avg_ms(self) -> float:
        return sum(self.rtt_ns) / len(self.rtt_ns) / 1e6


PING = struct.Struct("<I")

# Client-side entity plan: one participant, ping/pong topics, echo writer/reader.
PLAN = [
    EntitySpec(1, EntityKind.PARTICIPANT, name="rtos"),
    EntitySpec(2, EntityKind.TOPIC, parent=1, name="ping"),
    EntitySpec(3, EntityKind.TOPIC, parent=1, name="pong"),
    EntitySpec(4, EntityKind.PUBLISHER, parent=1),
    EntitySpec(5, EntityKind.SUBSCRIBER, parent=1),
    EntitySpec(6, EntityKind.DATAWRITER, parent=4, topic=3),
    EntitySpec(7, EntityKind.DATAREADER, parent=5, topic=2),
]
WRITER, READER = 6, 7


class PingPong:
    def __init__(self, cfg: PingPongConfig, seed: int):
        self.cfg = cfg
        period = cfg.spin_period_us * US
        self.period = period
        jitter = {
            "gpos_hop": (0, cfg.hop_jitter_us * US),
            "spin_wakeup": (0, cfg.spin_jitter_us * US if period else 0),
            "think": (0, cfg.think_us * US),
        }
        tasks = [TaskConfig("Executor", 1, (Call(self._spin, cfg.spin_cycles, "spin"), Terminate()),
                            max_activations=2)]
        doorbell = [Call(self._doorbell, 0, "doorbell")]
        isrs = []
        if period:
            isrs.append(IsrConfig("Tick", IsrCategory.ISR2, "mtip", 1,
                                  (Call(self._rearm, 0, "rearm"), Activate("Executor")),
                                  dispatch=Isr2Dispatch.AS_TASK))
        else:
            doorbell.append(Activate("Executor"))
        isrs.append(IsrConfig("Doorbell", IsrCategory.ISR2, "uart", 2, tuple(doorbell)))
        kcfg = KernelConfig(tasks, isrs, mode=cfg.mode, isr2_optimized=cfg.isr2_optimized)
        self.p = Platform(kcfg, [Device("uart", plic_source=1, clic_line=16)], cost=cfg.cost,
                          seed=seed, jitter=jitter)
        self.engine = self.p.engine
        self.engine.on("gpos", lambda ev: ev.payload())
        self.engine.on("ping_timeout", self._on_timeout)

        self.bus = Bus()
        self.transport = RingTransport(cfg.ring_slots, cfg.slot_size)
        self.agent = XrceAgent(self.transport, self.bus)
        self.client = XrceClient(self.transport, auto_flush=True)
        client_create_entities(self.client, self.agent, PLAN)
        self.client.auto_flush = period == 0
        self.client.on_reader(READER, self._echo)
        self.transport.doorbell = self._ring_doorbell
        self.transport.agent_notify = self._agent_wake
        self.bus.subscribe("pong", self._app_pong)

        self.rtt: list[int] = []
        self.timeouts = 0
        self.doorbells = 0
        self._round = 0
        self._sent_at = 0
        self._timeout_ev = None
        self._target = 0
        self._wakeups = 0

    # -- GPOS side

    def _hop(self, fn) -> None:
        self.engine.schedule(self.cfg.hop_cost_us * US + self.engine.jitter.draw("gpos_hop"), "gpos", fn)

    def _send_ping(self) -> None:
        self._round += 1
        self._sent_at = self.engine.now
        self.engine.record("app", "ping_send", {"round": self._round})
        self._timeout_ev = self.engine.schedule(self.cfg.timeout_us * US, "ping_timeout", self._round)
        payload = PING.pack(self._round)
        self._hop(lambda: self._agent_publish("ping", payload))

    def _next_ping(self) -> None:
        if self.done:
            return
        think = self.engine.jitter.draw("think")
        self.engine.schedule(think, "gpos", self._send_ping)

    def _agent_publish(self, topic: str, payload: bytes) -> None:
        self.engine.record("agent", "publish", {"topic": topic})
        self.bus.publish(topic, payload)

    def _agent_wake(self) -> None:
        self._hop(self._agent_spin)

    def _agent_spin(self) -> None:
        n = self.agent.spin_some()
        self.engine.record("agent", "spin", {"processed": n})

    def _app_pong(self, _topic: str, payload: bytes) -> None:
        self._hop(lambda: self._app_receive(payload))

    def _app_receive(self, payload: bytes) -> None:
        (rnd,) = PING.unpack(payload)
        if rnd != self._round or self._timeout_ev is None:
            self.engine.record("app", "late_pong", {"round": rnd})
            return
        self.engine.cancel(self._timeout_ev)
        self._timeout_ev = None
        rtt = self.engine.now - self._sent_at
        self.rtt.append(self.engine.clock.cycles_to_ns(rtt))
        self.engine.record("app", "pong_recv", {"round": rnd, "cycles": rtt})
        self._next_ping()

    def _on_timeout(self, ev) -> None:
        if ev.payload != self._round:
            return
        self._timeout_ev = None
        self.timeouts += 1
        self.engine.record("app", "timeout", {"round": ev.payload})
        self._next_ping()

    # -- RTOS side

    def _ring_doorbell(self) -> None:
        self.doorbells += 1
        self.engine.record("xrce", "doorbell", {})
        self.p.raise_device("uart")

    def _doorbell(self) -> None:
        self.p.clear_device("uart")
        self.client.on_doorbell()

    def _rearm(self) -> None:
        self._wakeups += 1
        nominal = (self._wakeups + 1) * self.period
        self.p.set_timer(nominal + self.engine.jitter.draw("spin_wakeup"))

    def _spin(self) -> None:
        flushed = self.client.flush()
        if flushed:
            self.engine.record("client", "flush", {"count": flushed})
        n = self.client.spin_some()
        self.engine.record("client", "spin", {"processed": n})

    def _echo(self, payload: bytes) -> None:
        self.engine.record("client", "echo", {})
        self.client.write(WRITER, payload)
        if self.client.auto_flush:
            self.engine.record("client", "flush", {"count": 1})

    # -- driver

    @property
    def done(self) -> bool:
        return len(self.rtt) + self.timeouts >= self._target

    def run(self, rounds: int) -> PingPongResult:
        if rounds < 1:
            raise ValueError("rounds must be >= 1")
        self._target = rounds
        self.p.boot()
        if self.period:
            self.p.set_timer(self.period + self.engine.jitter.draw("spin_wakeup"))
        # The first ping follows the client announcing itself.
        self.engine.schedule(0, "gpos", self._send_ping)
        step = max(self.cfg.timeout_us * US, 10 * self.period, 1)
        while not self.done:
            self.p.run(self.engine.now + step, stop=lambda: self.done)
        return PingPongResult(self.rtt, self.timeouts, self.doorbells, self.engine.trace, self.p.kernel.errors)


def run_pingpong(rounds: int = 1000, cfg: PingPongConfig | None = None, seed: int = 0) -> PingPongResult:
    return PingPong(cfg or PingPongConfig(), seed).run(rounds)


ROUND_SEGMENTS = (
    ("app", "ping_send"),
    ("agent", "publish"),  # ping lands in the client ring
    ("xrce", "doorbell"),
    ("kernel", "isr_enter"),
    ("client", "echo"),
    ("client", "flush"),
    ("agent", "spin"),  # publishes the pong on the bus
    ("app", "pong_recv"),
)


def decompose(trace: TraceLog, round_no: int) -> list[tuple[str, int]]:
    """Split one round trip into consecutive segments taken from the trace.

    Returns ``[(segment, cycles), ...]`` whose sum equals the measured round
    trip. Raises ``ValueError`` when the round is incomplete.
    """
    entries: list[TraceEntry] = trace.entries if isinstance(trace, TraceLog) else list(trace)
    i = next((k for k, e in enumerate(entries)
              if e.src == "app" and e.event == "ping_send" and e.data.get("round") == round_no), None)
    if i is None:
        raise ValueError(f"round {round_no} not in trace")
    points = [entries[i]]
    for src, event in ROUND_SEGMENTS[1:]:
        while True:
            i += 1
            if i >= len(entries):
                raise ValueError(f"round {round_no}: missing {src}.{event}")
            e = entries[i]
            if e.src != src or e.event != event:
                continue
            if (src, event) == ("kernel", "isr_enter") and e.data.get("isr") != "Doorbell":
                continue
            if (src, event) == ("agent", "spin") and not e.data.get("processed"):
                continue
            points.append(e)
            break
    return [(f"{a.src}.{a.event}->{b.src}.{b.event}", b.cycle - a.cycle) for a, b in zip(points, points[1:])]
