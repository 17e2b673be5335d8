"""Assembles engine, controllers, hart and kernel into one simulated MCU."""

from __future__ import annotations

from dataclasses import dataclass

from .fabric import (
    MEIP_LINE,
    MSIP_LINE,
    MTIP_LINE,
    Clic,
    Clint,
    Mode,
    Plic,
    Trigger,
    WiringError,
    route_legacy_through_clic,
)
from .hart import CostModel, Hart
from .kernel import Kernel, KernelConfig
from .sim import Engine

LEGACY_WIRES = ("mtip", "msip", "meip")


@dataclass(frozen=True)
class Device:
    """A platform interrupt source. CLINT mode uses ``plic_source``; CLIC mode
    uses ``clic_line`` when given, else the PLIC source behind meip."""

    name: str
    plic_source: int | None = None
    clic_line: int | None = None


class Platform:
    def __init__(
        self,
        kernel_config: KernelConfig,
        devices: list[Device] | tuple[Device, ...] = (),
        cost: CostModel | None = None,
        seed: int = 0,
        jitter: dict[str, tuple[int, int]] | None = None,
        n_lines: int = 256,
        legacy_lines: dict[str, int] | None = None,
        freq_hz: int = 50_000_000,
    ):
        self.mode = kernel_config.mode
        self.engine = Engine(freq_hz=freq_hz, seed=seed, jitter=jitter)
        self.cost = cost or CostModel()
        self.devices = {d.name: d for d in devices}
        for name in self.devices:
            if name in LEGACY_WIRES:
                raise WiringError(f"device name {name!r} is reserved")
        routed = {}
        for d in devices:
            if self.mode is Mode.CLIC and d.clic_line is not None:
                routed[d.name] = ("clic", d.clic_line)
            elif d.plic_source is not None:
                routed[d.name] = ("plic", d.plic_source)
            else:
                raise WiringError(f"device {d.name!r} has no source for {self.mode.value} mode")
        self.wiring = route_legacy_through_clic(self.mode, routed, legacy_lines, n_lines)
        n_sources = max([n for c, n in routed.values() if c == "plic"] or [1])

        self.clic = Clic(n_lines, on_change=self._notify) if self.mode is Mode.CLIC else None
        self.hart = Hart(self.mode, self.cost, self.clic, record=self._hart_record)
        self.clint = Clint(1, on_wire=self._legacy_wire)
        self.plic = Plic(n_sources, on_meip=lambda h, lvl: self._legacy_wire("meip", h, lvl))
        self._plic_names = {n: name for name, (c, n) in routed.items() if c == "plic"}
        self._line_names = {n: name for name, (c, n) in routed.items() if c == "clic"}
        if self.mode is Mode.CLIC:
            self._line_names.update({line: wire for wire, line in self.wiring.legacy.items()})
        else:
            self._line_names.update({MTIP_LINE: "mtip", MSIP_LINE: "msip", MEIP_LINE: "meip"})
        self._timer_ev = None
        self.engine.on("timer_match", self._on_timer)
        self.engine.on("irq_raise", self._on_stimulus)
        self.engine.on("irq_clear", self._on_stimulus)

        self.kernel_config = kernel_config
        self._program(kernel_config)
        self.kernel = Kernel(self, kernel_config)

    # -- static programming done by the OS at boot

    def _program(self, kcfg: KernelConfig) -> None:
        for isr in kcfg.isrs:
            if isr.device not in self.devices and isr.device not in ("mtip", "msip"):
                raise WiringError(f"ISR {isr.name}: unknown interrupt source {isr.device!r}")
        plic_levels = []
        for name, (ctrl, num) in self.wiring.devices.items():
            if ctrl == "plic":
                level = kcfg.level_array.get(name, 1)
                self.plic.set_priority(num, level)
                self.plic.set_enable(num, name in kcfg.level_array)
                plic_levels.append(level)
        if self.mode is not Mode.CLIC:
            return
        by_device = {i.device: i for i in kcfg.isrs}
        for name, (ctrl, line) in self.wiring.devices.items():
            isr = by_device.get(name)
            if ctrl == "clic":
                self.clic.configure(
                    line,
                    level=isr.level if isr else 1,
                    priority=isr.priority if isr else 0,
                    trigger=Trigger.EDGE,
                    shv=isr.shv if isr else False,
                    enable=isr is not None,
                )
        for wire, line in self.wiring.legacy.items():
            isr = by_device.get(wire)
            if wire == "meip":
                level = max(plic_levels, default=1)
                self.clic.configure(line, level=level, trigger=Trigger.LEVEL, shv=False,
                                    enable=bool(plic_levels))
            else:
                self.clic.configure(
                    line,
                    level=isr.level if isr else 1,
                    priority=isr.priority if isr else 0,
                    trigger=Trigger.LEVEL if wire == "mtip" else Trigger.EDGE,
                    shv=isr.shv if isr else False,
                    enable=isr is not None,
                )

    # -- signal plumbing

    def _hart_record(self, kind: str, data: dict) -> None:
        self.engine.record("hart", kind, data)

    def _notify(self) -> None:
        k = getattr(self, "kernel", None)
        if k is not None:
            k.notify_irq()

    def _legacy_wire(self, wire: str, hart: int, level: bool) -> None:
        if self.mode is Mode.CLIC:
            line = self.wiring.legacy[wire]
            if wire == "msip":
                if level:
                    self.clic.set_pending(line)
            else:
                self.clic.set_input(line, level)
        else:
            self.hart.set_wire(wire, level)
            self._notify()

    def raise_device(self, name: str) -> None:
        if name == "msip":
            self.clint.write_msip(0, True)
            return
        ctrl, num = self._route(name)
        if ctrl == "plic":
            self.plic.set_input(num, True)
        else:
            self.clic.set_input(num, True)

    def clear_device(self, name: str) -> None:
        if name == "msip":
            self.clint.write_msip(0, False)
            return
        ctrl, num = self._route(name)
        if ctrl == "plic":
            self.plic.set_input(num, False)
        else:
            self.clic.set_input(num, False)

    def _route(self, name: str) -> tuple[str, int]:
        try:
            return self.wiring.devices[name]
        except KeyError:
            raise WiringError(f"unknown device {name!r}") from None

    def device_for_plic(self, src: int) -> str | None:
        return self._plic_names.get(src)

    def device_for_cause(self, code: int) -> str | None:
        return self._line_names.get(code)

    # -- timer

    def set_timer(self, at_cycle: int) -> None:
        """Program mtimecmp; the match is delivered as an engine event."""
        if self._timer_ev is not None:
            self.engine.cancel(self._timer_ev)
            self._timer_ev = None
        self.clint.tick(self.engine.now)
        self.clint.set_mtimecmp(0, at_cycle)
        if at_cycle > self.engine.now:
            self._timer_ev = self.engine.schedule_at(at_cycle, "timer_match")

    def _on_timer(self, ev) -> None:
        self._timer_ev = None
        self.engine.record("clint", "mtip", {"mtimecmp": self.clint.mtimecmp[0]})
        self.clint.tick(self.engine.now)

    # -- stimulus

    def schedule_raise(self, device: str, at_cycle: int) -> None:
        self.engine.schedule_at(at_cycle, "irq_raise", device)

    def schedule_clear(self, device: str, at_cycle: int) -> None:
        self.engine.schedule_at(at_cycle, "irq_clear", device)

    def _on_stimulus(self, ev) -> None:
        self.engine.record("platform", ev.kind, {"device": ev.payload})
        if ev.kind == "irq_raise":
            self.raise_device(ev.payload)
        else:
            self.clear_device(ev.payload)

    # -- running

    def boot(self) -> None:
        self.kernel.start()

    def run(self, limit: int, stop=None):
        if not self.kernel.started:
            self.boot()
        return self.engine.run_until(limit, stop)

    def settle(self) -> None:
        """Charge idle time up to now so mcycle matches the clock (audit helper)."""
        self.kernel._wake_from_idle()
        if self.kernel._idle_since is None and self.kernel.current() is None and self.kernel._op is None:
            self.kernel._idle_since = self.engine.now
