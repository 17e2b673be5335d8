"""Behavioral models of the CLINT, PLIC and CLIC interrupt controllers.

Register layouts follow the conventional RISC-V memory maps; offsets are
relative to each controller's base address. Only one target hart is routed
by the PLIC and CLIC models (hart 0), which is what the platform uses.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Callable, NamedTuple

# mcause codes of the standard machine-level interrupts; CLIC lines with the
# same numbers carry them in CLIC mode.
MSIP_LINE = 3
MTIP_LINE = 7
MEIP_LINE = 11
RESERVED_LINES = 12
PLATFORM_LINE_BASE = 16
DEFAULT_CLIC_LINES = 256
MAX_CLIC_LINES = 4096

STANDARD_LINES = {"msip": MSIP_LINE, "mtip": MTIP_LINE, "meip": MEIP_LINE}


class ProtocolError(Exception):
    """Controller used outside its handshake / claim-complete protocol."""


class WiringError(Exception):
    pass


class Mode(str, Enum):
    CLINT_PLIC = "CLINT_PLIC"
    CLIC = "CLIC"


class Trigger(str, Enum):
    LEVEL = "level"
    EDGE = "edge"


# ---------------------------------------------------------------- CLINT

CLINT_REGISTERS = {
    0x0000: "msip[0]",
    0x4000: "mtimecmp[0]",
    0xBFF8: "mtime",
}


class Clint:
    """Per-hart timer compare and software interrupt registers.

    ``on_wire(name, hart, level)`` is called whenever mtip or msip changes.
    """

    def __init__(self, n_harts: int = 1, on_wire: Callable[[str, int, bool], None] | None = None):
        self.n_harts = n_harts
        self.mtime = 0
        self.mtimecmp = [2**64 - 1] * n_harts
        self.msip = [False] * n_harts
        self._mtip = [False] * n_harts
        self.on_wire = on_wire

    def mtip(self, hart: int = 0) -> bool:
        return self.mtime >= self.mtimecmp[hart]

    def tick(self, now: int) -> list[int]:
        """Advance mtime; returns harts whose mtip rose."""
        self.mtime = now
        return self._refresh()

    def set_mtimecmp(self, hart: int, value: int) -> None:
        self.mtimecmp[hart] = value
        self._refresh()

    def write_msip(self, hart: int, value: bool) -> None:
        value = bool(value)
        if value != self.msip[hart]:
            self.msip[hart] = value
            if self.on_wire:
                self.on_wire("msip", hart, value)

    def _refresh(self) -> list[int]:
        rose = []
        for h in range(self.n_harts):
            level = self.mtip(h)
            if level != self._mtip[h]:
                self._mtip[h] = level
                if level:
                    rose.append(h)
                if self.on_wire:
                    self.on_wire("mtip", h, level)
        return rose

    def read(self, offset: int) -> int:
        if offset == 0xBFF8:
            return self.mtime
        if 0x4000 <= offset < 0x4000 + 8 * self.n_harts:
            return self.mtimecmp[(offset - 0x4000) // 8]
        if 0 <= offset < 4 * self.n_harts:
            return int(self.msip[offset // 4])
        raise KeyError(hex(offset))

    def write(self, offset: int, value: int) -> None:
        if 0x4000 <= offset < 0x4000 + 8 * self.n_harts:
            self.set_mtimecmp((offset - 0x4000) // 8, value)
        elif 0 <= offset < 4 * self.n_harts:
            self.write_msip(offset // 4, bool(value & 1))
        else:
            raise KeyError(hex(offset))


# ---------------------------------------------------------------- PLIC

PLIC_REGISTERS = {
    0x000000: "priority[src] (4 bytes per source)",
    0x001000: "pending bitmap",
    0x002000: "enable bitmap, context 0",
    0x200000: "threshold, context 0",
    0x200004: "claim/complete, context 0",
}


class Plic:
    """Level-gateway PLIC with strict ``priority > threshold`` qualification.

    Source 0 does not exist; ``claim`` returns 0 when nothing qualifies.
    """

    def __init__(self, n_sources: int, on_meip: Callable[[int, bool], None] | None = None):
        if n_sources < 1:
            raise ValueError("PLIC needs at least one source")
        self.n_sources = n_sources
        size = n_sources + 1
        self.priority = [0] * size
        self.pending = [False] * size
        self.claimed = [False] * size
        self.inputs = [False] * size
        self.enable = [[False] * size]
        self.threshold = [0]
        self.on_meip = on_meip
        self._meip = [False]

    def _check_src(self, src: int) -> None:
        if not 1 <= src <= self.n_sources:
            raise ValueError(f"PLIC source {src} out of range 1..{self.n_sources}")

    def meip(self, hart: int = 0) -> bool:
        th = self.threshold[hart]
        en = self.enable[hart]
        for s in range(1, self.n_sources + 1):
            if self.pending[s] and en[s] and not self.claimed[s] and self.priority[s] > th:
                return True
        return False

    def _refresh(self) -> None:
        level = self.meip(0)
        if level != self._meip[0]:
            self._meip[0] = level
            if self.on_meip:
                self.on_meip(0, level)

    def set_input(self, src: int, level: bool) -> None:
        self._check_src(src)
        self.inputs[src] = bool(level)
        if level and not self.claimed[src]:
            self.pending[src] = True
        self._refresh()

    def set_priority(self, src: int, prio: int) -> None:
        self._check_src(src)
        self.priority[src] = prio
        self._refresh()

    def set_enable(self, src: int, on: bool, hart: int = 0) -> None:
        self._check_src(src)
        self.enable[hart][src] = bool(on)
        self._refresh()

    def set_threshold(self, value: int, hart: int = 0) -> None:
        self.threshold[hart] = value
        self._refresh()

    def claim(self, hart: int = 0) -> int:
        best, best_prio = 0, self.threshold[hart]
        en = self.enable[hart]
        for s in range(1, self.n_sources + 1):
            if self.pending[s] and en[s] and not self.claimed[s] and self.priority[s] > best_prio:
                best, best_prio = s, self.priority[s]
        if best:
            self.claimed[best] = True
            self.pending[best] = False
            self._refresh()
        return best

    def complete(self, src: int, hart: int = 0) -> None:
        self._check_src(src)
        if not self.claimed[src]:
            raise ProtocolError(f"complete for unclaimed PLIC source {src}")
        self.claimed[src] = False
        if self.inputs[src]:
            self.pending[src] = True
        self._refresh()

    def read(self, offset: int) -> int:
        if offset < 0x1000:
            return self.priority[offset // 4]
        if offset == 0x001000:
            return sum(1 << s for s in range(self.n_sources + 1) if self.pending[s])
        if offset == 0x002000:
            return sum(1 << s for s in range(self.n_sources + 1) if self.enable[0][s])
        if offset == 0x200000:
            return self.threshold[0]
        if offset == 0x200004:
            return self.claim(0)
        raise KeyError(hex(offset))

    def write(self, offset: int, value: int) -> None:
        if 4 <= offset < 0x1000:
            self.set_priority(offset // 4, value)
        elif offset == 0x002000:
            for s in range(1, self.n_sources + 1):
                self.enable[0][s] = bool(value >> s & 1)
            self._refresh()
        elif offset == 0x200000:
            self.set_threshold(value)
        elif offset == 0x200004:
            self.complete(value)
        else:
            raise KeyError(hex(offset))


# ---------------------------------------------------------------- CLIC

CLIC_REGISTERS = {
    0x0000: "cliccfg",
    0x1000: "clicintip[i]   (4 bytes per line: ip, ie, attr, ctl)",
    0x1001: "clicintie[i]",
    0x1002: "clicintattr[i] (bit0 shv, bit1 edge)",
    0x1003: "clicintctl[i]  (level << 4 | priority)",
}


class Winner(NamedTuple):
    id: int
    level: int
    shv: bool


def ctl_level(ctl: int) -> int:
    return (ctl >> 4) & 0xF


def ctl_priority(ctl: int) -> int:
    return ctl & 0xF


def make_ctl(level: int, priority: int = 0) -> int:
    if not (0 <= level <= 15 and 0 <= priority <= 15):
        raise ValueError("CLIC level and priority are 4-bit fields")
    return level << 4 | priority


@dataclass
class IrqHandshake:
    req: bool = False
    id: int = 0
    ack: bool = False


MAX_LEVEL = 15


class Clic:
    """CLIC with per-line level/priority, trigger type and selective vectoring."""

    def __init__(self, n_lines: int = DEFAULT_CLIC_LINES, on_change: Callable[[], None] | None = None):
        if not 0 < n_lines <= MAX_CLIC_LINES:
            raise ValueError(f"n_lines must be in 1..{MAX_CLIC_LINES}")
        self.n_lines = n_lines
        self.pending = [False] * n_lines
        self.enable = [False] * n_lines
        self.trigger = [Trigger.LEVEL] * n_lines
        self.shv = [False] * n_lines
        self.ctl = [0] * n_lines
        self.inputs = [False] * n_lines
        self.mintthresh = [0]
        self.handshake = IrqHandshake()
        self.on_change = on_change
        self._live: set[int] = set()

    def _check(self, line: int) -> None:
        if not 0 <= line < self.n_lines:
            raise ValueError(f"CLIC line {line} out of range")

    def configure(self, line: int, *, level: int, priority: int = 0,
                  trigger: Trigger = Trigger.EDGE, shv: bool = False, enable: bool = True) -> None:
        self._check(line)
        self.ctl[line] = make_ctl(level, priority)
        self.trigger[line] = Trigger(trigger)
        self.shv[line] = bool(shv)
        self.enable[line] = bool(enable)
        self._touch(line)

    def _touch(self, line: int) -> None:
        if self.pending[line] and self.enable[line]:
            self._live.add(line)
        else:
            self._live.discard(line)
        if self.on_change:
            self.on_change()

    def set_input(self, line: int, level: bool) -> None:
        self._check(line)
        level = bool(level)
        prev = self.inputs[line]
        self.inputs[line] = level
        if self.trigger[line] is Trigger.LEVEL:
            self.pending[line] = level
        elif level and not prev:
            self.pending[line] = True
        self._touch(line)

    def set_pending(self, line: int, value: bool = True) -> None:
        """Software write to clicintip (only meaningful for edge lines)."""
        self._check(line)
        if self.trigger[line] is Trigger.LEVEL:
            return
        self.pending[line] = bool(value)
        self._touch(line)

    def set_enable(self, line: int, on: bool) -> None:
        self._check(line)
        self.enable[line] = bool(on)
        self._touch(line)

    def set_mintthresh(self, value: int, hart: int = 0) -> None:
        self.mintthresh[hart] = value
        if self.on_change:
            self.on_change()

    def best(self, floor: int = -1) -> Winner | None:
        """Highest-ranked pending & enabled line whose level exceeds ``floor``."""
        best_key = None
        best = None
        for line in self._live:
            c = self.ctl[line]
            lvl = c >> 4
            if lvl <= floor:
                continue
            key = (lvl, c & 0xF, -line)
            if best_key is None or key > best_key:
                best_key, best = key, line
        if best is None:
            return None
        return Winner(best, best_key[0], self.shv[best])

    def arbitrate(self, running_level: int = 0, hart: int = 0) -> Winner | None:
        """Winner that may preempt a context running at ``running_level``."""
        return self.best(max(self.mintthresh[hart], running_level))

    def refresh_handshake(self, running_level: int = 0, hart: int = 0) -> IrqHandshake:
        """Drive req/id from current arbitration; a better late arrival replaces the id."""
        hs = self.handshake
        w = self.arbitrate(running_level, hart)
        if w is None:
            hs.req, hs.id = False, 0
        else:
            hs.req, hs.id = True, w.id
        hs.ack = False
        return hs

    def acknowledge(self, hart: int = 0) -> Winner:
        hs = self.handshake
        if not hs.req:
            raise ProtocolError("interrupt ack without a pending request")
        line = hs.id
        hs.ack = True
        hs.req = False
        w = Winner(line, ctl_level(self.ctl[line]), self.shv[line])
        self.clear_on_ack(line)
        return w

    def clear_on_ack(self, line: int) -> None:
        if self.trigger[line] is Trigger.EDGE:
            self.pending[line] = False
            self._touch(line)

    def read(self, offset: int) -> int:
        if offset == 0:
            return 4  # nlbits
        line, field = divmod(offset - 0x1000, 4)
        self._check(line)
        if field == 0:
            return int(self.pending[line])
        if field == 1:
            return int(self.enable[line])
        if field == 2:
            return int(self.shv[line]) | (self.trigger[line] is Trigger.EDGE) << 1
        return self.ctl[line]

    def write(self, offset: int, value: int) -> None:
        line, field = divmod(offset - 0x1000, 4)
        self._check(line)
        if field == 0:
            self.set_pending(line, bool(value & 1))
        elif field == 1:
            self.set_enable(line, bool(value & 1))
        elif field == 2:
            self.shv[line] = bool(value & 1)
            self.trigger[line] = Trigger.EDGE if value & 2 else Trigger.LEVEL
            self._touch(line)
        else:
            self.ctl[line] = value & 0xFF
            self._touch(line)


# ---------------------------------------------------------------- routing


@dataclass
class Wiring:
    """Where the legacy wires and platform devices land for one topology.

    ``legacy`` maps mtip/msip/meip to CLIC lines (CLIC mode only);
    ``devices`` maps a device name to ("plic", source) or ("clic", line).
    """

    mode: Mode
    legacy: dict[str, int]
    devices: dict[str, tuple[str, int]]


def route_legacy_through_clic(
    mode: Mode | str,
    devices: dict[str, tuple[str, int]] | None = None,
    legacy: dict[str, int] | None = None,
    n_lines: int = DEFAULT_CLIC_LINES,
) -> Wiring:
    """Build and validate the wiring for a topology.

    In CLIC mode mtip, msip and the PLIC's meip output each drive a fixed CLIC
    line (defaults: their mcause numbers); devices may sit on the PLIC or on
    platform CLIC lines (>= 16). In CLINT mode the wires go straight to the
    hart and every device must be a PLIC source.
    """
    mode = Mode(mode)
    devices = dict(devices or {})
    if mode is Mode.CLINT_PLIC:
        if legacy:
            raise WiringError("legacy line map only applies in CLIC mode")
        srcs: dict[int, str] = {}
        for name, (ctrl, num) in devices.items():
            if ctrl != "plic":
                raise WiringError(f"device {name!r}: CLINT mode has no CLIC lines")
            if num in srcs:
                raise WiringError(f"PLIC source {num} assigned to both {srcs[num]} and {name}")
            srcs[num] = name
        return Wiring(mode, {}, devices)

    legacy_map = dict(STANDARD_LINES)
    legacy_map.update(legacy or {})
    unknown = set(legacy_map) - set(STANDARD_LINES)
    if unknown:
        raise WiringError(f"unknown legacy wires {sorted(unknown)}")
    used: dict[int, str] = {}
    for wire, line in legacy_map.items():
        if not 0 <= line < PLATFORM_LINE_BASE:
            raise WiringError(f"{wire} must map to a line in 0..{PLATFORM_LINE_BASE - 1}")
        if line in used:
            raise WiringError(f"line {line} assigned to both {used[line]} and {wire}")
        used[line] = wire
    plic_srcs: dict[int, str] = {}
    for name, (ctrl, num) in devices.items():
        if ctrl == "clic":
            if not PLATFORM_LINE_BASE <= num < n_lines:
                raise WiringError(
                    f"device {name!r}: platform lines are {PLATFORM_LINE_BASE}..{n_lines - 1}"
                )
            if num in used:
                raise WiringError(f"line {num} assigned to both {used[num]} and {name}")
            used[num] = name
        elif ctrl == "plic":
            if num in plic_srcs:
                raise WiringError(f"PLIC source {num} assigned to both {plic_srcs[num]} and {name}")
            plic_srcs[num] = name
        else:
            raise WiringError(f"device {name!r}: unknown controller {ctrl!r}")
    return Wiring(mode, legacy_map, devices)
