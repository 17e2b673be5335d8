"""Simplified CVA6-like hart: trap entry/exit, CSR state, nesting and costs.

Instructions are not executed. Every modeled primitive carries a cycle cost
from :class:`CostModel` and is charged through :meth:`Hart.charge`, so
``mcycle`` is always the sum of charged costs.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields
from enum import Enum
from typing import Callable, NamedTuple

from .fabric import MEIP_LINE, MSIP_LINE, MTIP_LINE, Clic, Mode


class HartError(Exception):
    pass


class SpuriousTrapError(HartError):
    pass


@dataclass
class CostModel:
    trap_entry: int = 12
    trap_exit: int = 10
    vector_table_fetch: int = 4
    software_cause_decode: int = 14
    plic_claim_access: int = 8
    plic_complete_access: int = 8
    context_save_per_reg: int = 2
    context_restore_per_reg: int = 2
    n_caller_saved_regs: int = 16
    csr_access: int = 2
    kernel_op_base: int = 20

    def __post_init__(self) -> None:
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, bool) or not isinstance(v, int) or v < 0:
                raise ValueError(f"cost_model.{f.name} must be a non-negative integer, got {v!r}")

    @classmethod
    def from_dict(cls, data: dict) -> "CostModel":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ValueError(f"unknown cost_model keys: {', '.join(unknown)}")
        return cls(**data)

    def to_dict(self) -> dict:
        return asdict(self)

    @property
    def save_cycles(self) -> int:
        return self.n_caller_saved_regs * self.context_save_per_reg

    @property
    def restore_cycles(self) -> int:
        return self.n_caller_saved_regs * self.context_restore_per_reg

    def cost_of(self, primitive: str) -> int:
        if primitive == "context_save":
            return self.save_cycles
        if primitive == "context_restore":
            return self.restore_cycles
        if primitive == "kernel_op":
            return self.kernel_op_base
        return getattr(self, primitive)


class Privilege(str, Enum):
    M = "M"
    S = "S"
    U = "U"


class TrapCause(NamedTuple):
    """An accepted interrupt: mcause code (CLIC line in CLIC mode)."""

    code: int
    level: int = 0
    shv: bool = False

    @property
    def external(self) -> bool:
        return self.code == MEIP_LINE


@dataclass
class Frame:
    privilege: Privilege
    prev_level: int
    level: int
    saved_mie: bool
    cause: TrapCause


@dataclass
class CsrFile:
    mcycle: int = 0
    mie: bool = True  # mstatus.MIE
    mtvec_mode: str = "direct"
    mcause: int = 0
    mcause_interrupt: bool = False
    mip: dict = field(default_factory=lambda: {"msip": False, "mtip": False, "meip": False})
    mie_bits: dict = field(default_factory=lambda: {"msip": True, "mtip": True, "meip": True})


# CLINT-mode wire priority: external > software > timer.
_WIRE_ORDER = (("meip", MEIP_LINE), ("msip", MSIP_LINE), ("mtip", MTIP_LINE))


class Hart:
    def __init__(
        self,
        mode: Mode | str,
        cost: CostModel | None = None,
        clic: Clic | None = None,
        record: Callable[[str, dict], None] | None = None,
        hart_id: int = 0,
    ):
        self.mode = Mode(mode)
        if self.mode is Mode.CLIC and clic is None:
            raise HartError("CLIC mode needs a CLIC instance")
        self.cost = cost or CostModel()
        self.clic = clic
        self.hart_id = hart_id
        self.csr = CsrFile(mtvec_mode="vectored" if self.mode is Mode.CLIC else "direct")
        self.privilege = Privilege.M
        self.stack: list[Frame] = []
        self.saves = 0
        self.restores = 0
        self.charged: dict[str, int] = {}
        self._record = record
        self._acked: TrapCause | None = None

    # -- accounting

    def charge(self, kind: str, cycles: int) -> None:
        self.csr.mcycle += cycles
        self.charged[kind] = self.charged.get(kind, 0) + cycles
        if self._record is not None:
            self._record(kind, {"cycles": cycles})

    def context_save(self) -> int:
        c = self.cost.save_cycles
        self.saves += 1
        self.charge("context_save", c)
        return c

    def context_restore(self) -> int:
        c = self.cost.restore_cycles
        self.restores += 1
        self.charge("context_restore", c)
        return c

    # -- state views

    @property
    def running_level(self) -> int:
        return self.stack[-1].level if self.stack else 0

    @property
    def depth(self) -> int:
        return len(self.stack)

    def set_wire(self, name: str, level: bool) -> None:
        self.csr.mip[name] = bool(level)

    def pending_cause(self) -> TrapCause | None:
        """The interrupt that would be taken now, without acknowledging it."""
        if not self.csr.mie:
            return None
        if self.mode is Mode.CLINT_PLIC:
            mip, mie = self.csr.mip, self.csr.mie_bits
            for name, code in _WIRE_ORDER:
                if mip[name] and mie[name]:
                    return TrapCause(code)
            return None
        w = self.clic.arbitrate(self.running_level, self.hart_id)
        return None if w is None else TrapCause(w.id, w.level, w.shv)

    def accept(self) -> TrapCause | None:
        """Acknowledge the pending interrupt, if any (handshake ack in CLIC mode)."""
        if not self.csr.mie:
            return None
        if self.mode is Mode.CLINT_PLIC:
            cause = self.pending_cause()
        else:
            hs = self.clic.refresh_handshake(self.running_level, self.hart_id)
            if not hs.req:
                return None
            w = self.clic.acknowledge(self.hart_id)
            cause = TrapCause(w.id, w.level, w.shv)
        self._acked = cause
        return cause

    # -- traps

    def dispatch_path(self, cause: TrapCause) -> list[str]:
        path = ["trap_entry"]
        if self.mode is Mode.CLIC and cause.shv:
            path.append("vector_table_fetch")
        else:
            path.append("software_cause_decode")
        if cause.external:
            path.append("plic_claim_access")
        return path

    def take_trap(self, cause: TrapCause) -> list[str]:
        """Enter a trap for an accepted interrupt; returns the primitives to charge."""
        if self._acked != cause:
            if self.mode is Mode.CLINT_PLIC:
                name = {c: n for n, c in _WIRE_ORDER}.get(cause.code)
                ok = name is not None and self.csr.mip[name]
            else:
                ok = False
            if not ok:
                raise SpuriousTrapError(f"no accepted interrupt for cause {cause.code}")
        self._acked = None
        level = cause.level if self.mode is Mode.CLIC else 0
        self.stack.append(
            Frame(self.privilege, self.running_level, level, self.csr.mie, cause)
        )
        self.privilege = Privilege.M
        self.csr.mie = False
        self.csr.mcause = cause.code
        self.csr.mcause_interrupt = True
        return self.dispatch_path(cause)

    def trap_return(self) -> list[str]:
        if not self.stack:
            raise HartError("trap return with an empty nesting stack")
        frame = self.stack.pop()
        self.privilege = frame.privilege
        self.csr.mie = frame.saved_mie
        if self.stack:
            self.csr.mcause = self.stack[-1].cause.code
        return ["trap_exit"]

    def read_mnxti(self) -> TrapCause | None:
        """Claim the next same-privilege non-vectored interrupt from inside a handler."""
        if self.mode is not Mode.CLIC:
            raise HartError("mnxti is only available in CLIC mode")
        if not self.stack:
            raise HartError("mnxti read outside an interrupt handler")
        self.charge("mnxti", self.cost.csr_access)
        top = self.stack[-1]
        floor = max(self.clic.mintthresh[self.hart_id], top.prev_level)
        w = self.clic.best(floor)
        if w is None or w.shv:
            return None
        self.clic.clear_on_ack(w.id)
        cause = TrapCause(w.id, w.level, w.shv)
        top.level = w.level
        top.cause = cause
        self.csr.mcause = w.id
        return cause
