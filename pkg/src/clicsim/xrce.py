"""DDS-XRCE-lite client/agent over a doorbell shared-memory ring.

Wire records are little-endian::

    u8 type | u32 session | u8 stream | u16 seq | u16 entity | u16 len | payload

Only best-effort streams exist; there is no fragmentation or retransmission.
"""

from __future__ import annotations

import logging
import struct
from collections import deque
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Callable

log = logging.getLogger(__name__)

HEADER = struct.Struct("<BIBHHH")
BEST_EFFORT_STREAM = 1
SEQ_MOD = 1 << 16


class XrceError(Exception):
    pass


class BackpressureError(XrceError):
    """Ring full: the sender must retry later."""


class MalformedMessage(XrceError):
    pass


class RejectedError(XrceError):
    pass


class MsgType(IntEnum):
    CREATE_CLIENT = 0
    CREATE = 1
    STATUS = 2
    WRITE_DATA = 3
    DATA = 4


class EntityKind(IntEnum):
    PARTICIPANT = 1
    TOPIC = 2
    PUBLISHER = 3
    SUBSCRIBER = 4
    DATAWRITER = 5
    DATAREADER = 6


STATUS_OK = 0
STATUS_ERR_DUPLICATE = 1
STATUS_ERR_REFERENCE = 2
STATUS_ERR_UNKNOWN = 3


@dataclass(frozen=True)
class Message:
    type: MsgType
    session: int
    stream: int
    seq: int
    entity: int
    payload: bytes = b""

    def encode(self) -> bytes:
        if len(self.payload) > 0xFFFF:
            raise XrceError("payload too large")
        return HEADER.pack(int(self.type), self.session, self.stream, self.seq % SEQ_MOD,
                           self.entity, len(self.payload)) + self.payload

    @classmethod
    def decode(cls, raw: bytes) -> "Message":
        if len(raw) < HEADER.size:
            raise MalformedMessage(f"short record ({len(raw)} bytes)")
        t, session, stream, seq, entity, length = HEADER.unpack_from(raw)
        if len(raw) != HEADER.size + length:
            raise MalformedMessage(f"length field {length} does not match record size {len(raw)}")
        try:
            mtype = MsgType(t)
        except ValueError:
            raise MalformedMessage(f"unknown message type {t}") from None
        return cls(mtype, session, stream, seq, entity, bytes(raw[HEADER.size:]))


# CREATE payload: u8 kind | u16 parent | u16 topic | name bytes
CREATE_BODY = struct.Struct("<BHH")


@dataclass(frozen=True)
class EntitySpec:
    id: int
    kind: EntityKind
    parent: int = 0
    topic: int = 0
    name: str = ""

    def encode(self) -> bytes:
        return CREATE_BODY.pack(int(self.kind), self.parent, self.topic) + self.name.encode()

    @classmethod
    def decode(cls, entity: int, payload: bytes) -> "EntitySpec":
        if len(payload) < CREATE_BODY.size:
            raise MalformedMessage("short CREATE payload")
        kind, parent, topic = CREATE_BODY.unpack_from(payload)
        try:
            k = EntityKind(kind)
        except ValueError:
            raise MalformedMessage(f"unknown entity kind {kind}") from None
        return cls(entity, k, parent, topic, payload[CREATE_BODY.size:].decode())


# ---------------------------------------------------------------- transport


class Ring:
    """Single-writer ring of fixed slot count and slot size."""

    def __init__(self, slots: int, slot_size: int):
        if slots < 1 or slot_size < HEADER.size:
            raise ValueError("ring needs >= 1 slot and room for a header")
        self.slots = slots
        self.slot_size = slot_size
        self._q: deque[bytes] = deque()

    def __len__(self) -> int:
        return len(self._q)

    @property
    def full(self) -> bool:
        return len(self._q) >= self.slots

    def push(self, record: bytes) -> bool:
        """Append; returns True when the ring went from empty to non-empty."""
        if len(record) > self.slot_size:
            raise XrceError(f"record of {len(record)} bytes exceeds slot size {self.slot_size}")
        if self.full:
            raise BackpressureError("ring full")
        was_empty = not self._q
        self._q.append(bytes(record))
        return was_empty

    def pop(self) -> bytes | None:
        return self._q.popleft() if self._q else None


class RingTransport:
    """Client->agent and agent->client rings; client-bound writes ring a doorbell."""

    def __init__(self, slots: int = 8, slot_size: int = 64,
                 doorbell: Callable[[], None] | None = None,
                 agent_notify: Callable[[], None] | None = None):
        self.to_agent = Ring(slots, slot_size)
        self.to_client = Ring(slots, slot_size)
        self.doorbell = doorbell
        self.agent_notify = agent_notify
        self.doorbells = 0

    def send_to_agent(self, record: bytes) -> None:
        if self.to_agent.push(record) and self.agent_notify:
            self.agent_notify()

    def send_to_client(self, record: bytes) -> None:
        if self.to_client.push(record):
            self.doorbells += 1
            if self.doorbell:
                self.doorbell()


# ---------------------------------------------------------------- bus


class Bus:
    """Thin local pub-sub standing in for the DDS global data space."""

    def __init__(self) -> None:
        self.topics: dict[str, list[Callable[[str, bytes], None]]] = {}
        self.deliveries: list[tuple[str, int, bytes]] = []

    def subscribe(self, topic: str, callback: Callable[[str, bytes], None]) -> None:
        self.topics.setdefault(topic, []).append(callback)

    def publish(self, topic: str, payload: bytes) -> int:
        subs = self.topics.get(topic, [])
        for i, cb in enumerate(list(subs)):
            self.deliveries.append((topic, i, payload))
            cb(topic, payload)
        return len(subs)


# ---------------------------------------------------------------- session


def _seq_newer(seq: int, last: int | None) -> bool:
    if last is None:
        return True
    d = (seq - last) % SEQ_MOD
    return 0 < d < SEQ_MOD // 2


@dataclass
class XrceSession:
    client_key: int
    state: str = "DISCONNECTED"
    entities: dict[int, EntitySpec] = field(default_factory=dict)
    out_seq: dict[int, int] = field(default_factory=dict)
    in_seq: dict[int, int] = field(default_factory=dict)

    def next_seq(self, stream: int = BEST_EFFORT_STREAM) -> int:
        s = (self.out_seq.get(stream, -1) + 1) % SEQ_MOD
        self.out_seq[stream] = s
        return s


class XrceAgent:
    """GPOS-side agent: creates entities on request and bridges data to the bus."""

    def __init__(self, transport: RingTransport, bus: Bus):
        self.transport = transport
        self.bus = bus
        self.session: XrceSession | None = None
        self.dropped = 0
        self.processed = 0

    def _reply(self, mtype: MsgType, entity: int, payload: bytes) -> None:
        s = self.session
        self.transport.send_to_client(
            Message(mtype, s.client_key, BEST_EFFORT_STREAM, s.next_seq(), entity, payload).encode()
        )

    def spin_some(self) -> int:
        """Drain the client->agent ring; returns the number of messages handled."""
        n = 0
        while True:
            if self.transport.to_client.full:
                return n  # replies would overflow; leave the rest queued
            raw = self.transport.to_agent.pop()
            if raw is None:
                return n
            try:
                msg = Message.decode(raw)
                self._handle(msg)
            except MalformedMessage as exc:
                self.dropped += 1
                log.warning("agent dropped malformed message: %s", exc)
                continue
            n += 1
            self.processed += 1

    def _handle(self, msg: Message) -> None:
        if msg.type is MsgType.CREATE_CLIENT:
            self.session = XrceSession(msg.session, "CONNECTED")
            self._reply(MsgType.STATUS, 0, bytes([STATUS_OK]))
            return
        s = self.session
        if s is None or msg.session != s.client_key:
            raise MalformedMessage(f"message for unknown session {msg.session:#x}")
        if not _seq_newer(msg.seq, s.in_seq.get(msg.stream)):
            raise MalformedMessage(f"stale sequence number {msg.seq}")
        s.in_seq[msg.stream] = msg.seq
        if msg.type is MsgType.CREATE:
            spec = EntitySpec.decode(msg.entity, msg.payload)
            status = self._create(spec)
            self._reply(MsgType.STATUS, msg.entity, bytes([status]))
        elif msg.type is MsgType.WRITE_DATA:
            writer = s.entities.get(msg.entity)
            if writer is None or writer.kind is not EntityKind.DATAWRITER:
                raise MalformedMessage(f"WRITE_DATA for unknown writer {msg.entity}")
            self.bus.publish(s.entities[writer.topic].name, msg.payload)
        else:
            raise MalformedMessage(f"unexpected {msg.type.name} from client")

    def _create(self, spec: EntitySpec) -> int:
        ents = self.session.entities
        if spec.id in ents:
            return STATUS_ERR_DUPLICATE
        parent_kind = {
            EntityKind.TOPIC: EntityKind.PARTICIPANT,
            EntityKind.PUBLISHER: EntityKind.PARTICIPANT,
            EntityKind.SUBSCRIBER: EntityKind.PARTICIPANT,
            EntityKind.DATAWRITER: EntityKind.PUBLISHER,
            EntityKind.DATAREADER: EntityKind.SUBSCRIBER,
        }.get(spec.kind)
        if spec.parent and (spec.parent not in ents or ents[spec.parent].kind is not parent_kind):
            return STATUS_ERR_REFERENCE
        if spec.kind in (EntityKind.DATAWRITER, EntityKind.DATAREADER):
            t = ents.get(spec.topic)
            if t is None or t.kind is not EntityKind.TOPIC:
                return STATUS_ERR_REFERENCE
        ents[spec.id] = spec
        if spec.kind is EntityKind.DATAREADER:
            reader = spec.id
            self.bus.subscribe(ents[spec.topic].name, lambda _t, data: self._forward(reader, data))
        return STATUS_OK

    def _forward(self, reader: int, data: bytes) -> None:
        try:
            self._reply(MsgType.DATA, reader, data)
        except BackpressureError:
            self.dropped += 1
            log.warning("agent->client ring full, sample for reader %d dropped", reader)


class XrceClient:
    """RTOS-side client. With ``auto_flush`` off, writes wait for :meth:`flush`."""

    def __init__(self, transport: RingTransport, client_key: int = 0xC11E, auto_flush: bool = True):
        self.transport = transport
        self.session = XrceSession(client_key)
        self.auto_flush = auto_flush
        self.outbox: deque[bytes] = deque()
        self.readers: dict[int, Callable[[bytes], None]] = {}
        self.pending_acks: set[int] = set()
        self.rejected: dict[int, int] = {}
        self.work_pending = False
        self.doorbells_seen = 0
        self._local: dict[int, EntitySpec] = {}

    def _send(self, mtype: MsgType, entity: int, payload: bytes = b"") -> None:
        s = self.session
        rec = Message(mtype, s.client_key, BEST_EFFORT_STREAM, s.next_seq(), entity, payload).encode()
        if self.auto_flush:
            self.transport.send_to_agent(rec)
        else:
            self.outbox.append(rec)

    def create_entities(self, plan: list[EntitySpec]) -> None:
        ids = [e.id for e in plan]
        if len(set(ids)) != len(ids) or any(i in self._local for i in ids) or 0 in ids:
            raise XrceError("duplicate or zero entity id in plan")
        self._send(MsgType.CREATE_CLIENT, 0)
        self.pending_acks.add(0)
        for spec in plan:
            self._local[spec.id] = spec
            self._send(MsgType.CREATE, spec.id, spec.encode())
            self.pending_acks.add(spec.id)

    def write(self, writer: int, payload: bytes) -> None:
        if self.session.state != "CONNECTED":
            raise XrceError("session not connected")
        w = self.session.entities.get(writer)
        if w is None or w.kind is not EntityKind.DATAWRITER:
            raise XrceError(f"entity {writer} is not a created data writer")
        self._send(MsgType.WRITE_DATA, writer, payload)

    def flush(self) -> int:
        n = 0
        while self.outbox:
            self.transport.send_to_agent(self.outbox[0])
            self.outbox.popleft()
            n += 1
        return n

    def on_reader(self, reader: int, callback: Callable[[bytes], None]) -> None:
        self.readers[reader] = callback

    def on_doorbell(self) -> None:
        self.work_pending = True
        self.doorbells_seen += 1

    def spin_some(self) -> int:
        """Process everything in the agent->client ring."""
        self.work_pending = False
        n = 0
        while True:
            raw = self.transport.to_client.pop()
            if raw is None:
                return n
            n += 1
            try:
                msg = Message.decode(raw)
            except MalformedMessage as exc:
                log.warning("client dropped malformed message: %s", exc)
                continue
            if msg.type is MsgType.STATUS:
                self._status(msg)
            elif msg.type is MsgType.DATA:
                cb = self.readers.get(msg.entity)
                if cb is not None:
                    cb(msg.payload)

    def _status(self, msg: Message) -> None:
        code = msg.payload[0] if msg.payload else STATUS_ERR_UNKNOWN
        self.pending_acks.discard(msg.entity)
        if msg.entity == 0:
            if code == STATUS_OK:
                self.session.state = "CONNECTED"
            return
        if code == STATUS_OK:
            self.session.entities[msg.entity] = self._local[msg.entity]
        else:
            self.rejected[msg.entity] = code


def client_create_entities(client: XrceClient, agent: XrceAgent, plan: list[EntitySpec]) -> XrceSession:
    """Synchronous session setup: create, let the agent answer, collect acks."""
    auto, client.auto_flush = client.auto_flush, False
    try:
        client.create_entities(plan)
    finally:
        client.auto_flush = auto
    while client.pending_acks:
        progress = 0
        try:
            progress += client.flush()
        except BackpressureError:
            pass
        progress += agent.spin_some()
        progress += client.spin_some()
        if not progress:
            raise XrceError("agent did not acknowledge all CREATE requests")
    if client.rejected:
        ent, code = next(iter(client.rejected.items()))
        raise RejectedError(f"agent rejected entity {ent} (status {code})")
    return client.session


def read_record(stream) -> bytes | None:
    """Read one framed record from a binary stream; None at end of stream."""
    head = stream.read(HEADER.size)
    if not head:
        return None
    if len(head) < HEADER.size:
        raise MalformedMessage("truncated header at end of stream")
    length = HEADER.unpack(head)[-1]
    body = stream.read(length) if length else b""
    if len(body) < length:
        raise MalformedMessage("truncated payload at end of stream")
    return head + body


def serve_stream(rfile, wfile, bus: Bus | None = None, slots: int = 64, slot_size: int = 4096) -> XrceAgent:
    """Single-threaded poll loop: run an agent against a real byte stream.

    Client records are read from ``rfile``; every agent reply is written to
    ``wfile`` as soon as it is produced.
    """
    transport = RingTransport(slots, slot_size)
    agent = XrceAgent(transport, bus or Bus())

    def drain() -> None:
        while (rec := transport.to_client.pop()) is not None:
            wfile.write(rec)
        wfile.flush()

    transport.doorbell = drain
    while (rec := read_record(rfile)) is not None:
        transport.send_to_agent(rec)
        agent.spin_some()
        drain()
    return agent
