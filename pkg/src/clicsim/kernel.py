"""OSEK-style run-to-completion kernel driving the hart.

Task and ISR bodies are scripted action lists. The kernel executes them one
action at a time; kernel paths (services, trap entry/exit, context switches)
are queued as atomic micro-operations, each charged through the hart. Only
``Compute`` actions can be cut short by an interrupt.
"""

from __future__ import annotations

import bisect
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from types import MappingProxyType
from typing import TYPE_CHECKING, Callable, Mapping, Sequence

from .fabric import MAX_LEVEL, MEIP_LINE, Mode
from .hart import TrapCause

if TYPE_CHECKING:
    from .platform import Platform


class KernelError(Exception):
    pass


class ConfigError(KernelError):
    pass


class SpuriousInterruptError(KernelError):
    pass


# OSEK status codes used in the error log.
E_OS_CALLEVEL = "E_OS_CALLEVEL"
E_OS_LIMIT = "E_OS_LIMIT"
E_OS_ID = "E_OS_ID"
E_OS_STATE = "E_OS_STATE"


class TaskState(str, Enum):
    SUSPENDED = "SUSPENDED"
    READY = "READY"
    RUNNING = "RUNNING"


class IsrCategory(str, Enum):
    ISR1 = "ISR1"
    ISR2 = "ISR2"


class Isr2Dispatch(str, Enum):
    AS_TASK = "AS_TASK"
    DIRECT_CALL = "DIRECT_CALL"


# ---------------------------------------------------------------- actions


@dataclass(frozen=True)
class Compute:
    cycles: int


@dataclass(frozen=True)
class Atomic:
    """Non-interruptible work; ``channel`` adds jitter (e.g. memory wait states)."""

    cycles: int
    channel: str | None = None


@dataclass(frozen=True)
class Activate:
    task: str


@dataclass(frozen=True)
class Terminate:
    pass


@dataclass(frozen=True)
class DisableAll:
    pass


@dataclass(frozen=True)
class EnableAll:
    pass


@dataclass(frozen=True)
class Probe:
    name: str


@dataclass(frozen=True)
class Raise:
    device: str


@dataclass(frozen=True)
class Clear:
    device: str


@dataclass(frozen=True)
class Call:
    fn: Callable[[], None]
    cycles: int = 0
    label: str = "call"


@dataclass(frozen=True)
class Loop:
    pass


Action = Compute | Atomic | Activate | Terminate | DisableAll | EnableAll | Probe | Raise | Clear | Call | Loop
SERVICE_ACTIONS = (Activate, Terminate)


def parse_action(text: str) -> Action:
    """Parse the textual form used in scenario files, e.g. ``"compute 40"``."""
    parts = text.split()
    if not parts:
        raise ConfigError("empty action")
    op, args = parts[0].lower(), parts[1:]

    def need(n_min: int, n_max: int | None = None) -> None:
        n_max = n_min if n_max is None else n_max
        if not n_min <= len(args) <= n_max:
            raise ConfigError(f"action {text!r}: wrong number of arguments")

    def cycles(s: str) -> int:
        try:
            v = int(s)
        except ValueError:
            raise ConfigError(f"action {text!r}: {s!r} is not an integer") from None
        if v < 0:
            raise ConfigError(f"action {text!r}: negative cycle count")
        return v

    if op == "compute":
        need(1)
        return Compute(cycles(args[0]))
    if op == "atomic":
        need(1, 2)
        return Atomic(cycles(args[0]), args[1] if len(args) > 1 else None)
    if op == "activate":
        need(1)
        return Activate(args[0])
    if op == "terminate":
        need(0)
        return Terminate()
    if op == "disable_all":
        need(0)
        return DisableAll()
    if op == "enable_all":
        need(0)
        return EnableAll()
    if op == "probe":
        need(1)
        return Probe(args[0])
    if op == "raise":
        need(1)
        return Raise(args[0])
    if op == "clear":
        need(1)
        return Clear(args[0])
    if op == "loop":
        need(0)
        return Loop()
    raise ConfigError(f"unknown action {op!r} in {text!r}")


def parse_body(body: Sequence[str | Action]) -> tuple[Action, ...]:
    return tuple(parse_action(a) if isinstance(a, str) else a for a in body)


# ---------------------------------------------------------------- config


@dataclass
class TaskConfig:
    name: str
    priority: int
    body: Sequence[Action] = ()
    max_activations: int = 1
    autostart: bool = False


@dataclass
class IsrConfig:
    name: str
    category: IsrCategory
    device: str
    level: int
    handler: Sequence[Action] = ()
    dispatch: Isr2Dispatch = Isr2Dispatch.AS_TASK
    priority: int = 0
    shv: bool = True


@dataclass
class KernelConfig:
    tasks: Sequence[TaskConfig]
    isrs: Sequence[IsrConfig] = ()
    mode: Mode = Mode.CLINT_PLIC
    isr2_optimized: bool = False
    tail_chaining: bool = True
    level_array: Mapping[str, int] = field(init=False)

    def __post_init__(self) -> None:
        self.mode = Mode(self.mode)
        self.tasks = tuple(self.tasks)
        self.isrs = tuple(self.isrs)
        names = [t.name for t in self.tasks]
        if len(set(names)) != len(names):
            raise ConfigError("duplicate task names")
        isr_names = [i.name for i in self.isrs]
        if len(set(isr_names)) != len(isr_names):
            raise ConfigError("duplicate ISR names")
        devices = [i.device for i in self.isrs]
        if len(set(devices)) != len(devices):
            raise ConfigError("two ISRs bound to the same interrupt source")
        known = set(names)
        for t in self.tasks:
            if t.max_activations < 1:
                raise ConfigError(f"task {t.name}: max_activations must be >= 1")
            self._check_body(t.name, t.body, known)
        for i in self.isrs:
            if not 1 <= i.level <= MAX_LEVEL:
                raise ConfigError(f"ISR {i.name}: level must be in 1..{MAX_LEVEL}")
            if i.category is IsrCategory.ISR1 and any(isinstance(a, SERVICE_ACTIONS) for a in i.handler):
                raise ConfigError(f"ISR1 {i.name} cannot call kernel services")
            if any(isinstance(a, (Terminate, Loop)) for a in i.handler):
                raise ConfigError(f"ISR {i.name}: handlers cannot terminate or loop")
            self._check_body(i.name, i.handler, known)
        # Emulated interrupt levels, generated once from the ISR table.
        object.__setattr__(self, "level_array", MappingProxyType({i.device: i.level for i in self.isrs}))

    @staticmethod
    def _check_body(owner: str, body: Sequence[Action], tasks: set[str]) -> None:
        for a in body:
            if isinstance(a, Activate) and a.task not in tasks:
                raise ConfigError(f"{owner}: activates unknown task {a.task!r}")

    def effective_dispatch(self, isr: IsrConfig) -> Isr2Dispatch:
        return Isr2Dispatch.DIRECT_CALL if self.isr2_optimized else isr.dispatch


# ---------------------------------------------------------------- runtime


class TaskControlBlock:
    __slots__ = ("cfg", "name", "priority", "state", "stamps", "pc", "saved", "resume_compute")

    def __init__(self, cfg: TaskConfig):
        self.cfg = cfg
        self.name = cfg.name
        self.priority = cfg.priority
        self.state = TaskState.SUSPENDED
        self.stamps: deque[int] = deque()  # one per outstanding activation
        self.pc = 0
        self.saved: str | None = None  # None (fresh), "sync" or "trap"
        self.resume_compute = 0

    @property
    def pending_activations(self) -> int:
        return len(self.stamps)

    @property
    def body(self) -> Sequence[Action]:
        return self.cfg.body


class IsrContext:
    __slots__ = ("isr", "trap", "pc", "resume_compute", "name")

    def __init__(self, isr: IsrConfig, trap: "TrapRecord"):
        self.isr = isr
        self.trap = trap
        self.pc = 0
        self.resume_compute = 0
        self.name = isr.name

    @property
    def body(self) -> Sequence[Action]:
        return self.isr.handler


class TrapRecord:
    """Kernel view of one hardware trap frame."""

    __slots__ = ("cause", "plic_src", "interrupted")

    def __init__(self, cause: TrapCause, interrupted):
        self.cause = cause
        self.plic_src = 0
        self.interrupted = interrupted


class Kernel:
    def __init__(self, platform: "Platform", config: KernelConfig):
        self.p = platform
        self.cfg = config
        self.hart = platform.hart
        self.cost = platform.hart.cost
        self.engine = platform.engine
        self.tcbs = {t.name: TaskControlBlock(t) for t in config.tasks}
        self.isr_by_device = {i.device: i for i in config.isrs}
        self.ready: list[tuple[int, int, str]] = []
        self.running: TaskControlBlock | None = None
        self.isr_stack: list[IsrContext] = []
        self.traps: list[TrapRecord] = []
        self.ucode: deque = deque()
        self.errors: list[tuple[int, str, str]] = []
        self.all_disabled = False
        self._saved_thresh = 0
        self._stamp = 0
        self._op = None  # (event, kind, cycles, effect, start, interruptible, ctx)
        self._idle_since: int | None = None
        self._in_run = False
        self._episode_resched = False
        self.started = False
        self.engine.on("cpu", self._on_op_done)
        lock = self.cost.csr_access
        if config.mode is Mode.CLINT_PLIC:
            # Emulated levels: mie update plus a PLIC threshold write.
            lock += self.cost.plic_complete_access
        self.lock_cycles = lock

    # ------------------------------------------------------------ helpers

    def record(self, event: str, data: dict | None = None) -> None:
        self.engine.record("kernel", event, data)

    def os_error(self, code: str, detail: str) -> None:
        self.errors.append((self.engine.now, code, detail))
        self.record("os_error", {"code": code, "detail": detail})

    def _op_item(self, kind: str, effect: Callable[[], None] | None = None):
        return (kind, self.cost.cost_of(kind), effect)

    def _lock(self):
        return ("kernel_lock", self.lock_cycles, None)

    def _unlock(self, effect=None):
        return ("kernel_unlock", self.lock_cycles, effect)

    def _push_front(self, items) -> None:
        self.ucode.extendleft(reversed(items))

    def _enqueue_ready(self, tcb: TaskControlBlock) -> None:
        bisect.insort(self.ready, (-tcb.priority, tcb.stamps[0], tcb.name))
        tcb.state = TaskState.READY

    def _top_ready(self) -> TaskControlBlock | None:
        return self.tcbs[self.ready[0][2]] if self.ready else None

    def _pop_ready(self) -> TaskControlBlock:
        return self.tcbs[self.ready.pop(0)[2]]

    def current(self):
        if self.isr_stack:
            return self.isr_stack[-1]
        return self.running

    @property
    def in_isr(self) -> bool:
        return bool(self.isr_stack)

    # ------------------------------------------------------------ boot

    def start(self) -> None:
        """Activate autostart tasks and dispatch the first one at no cost."""
        if self.started:
            raise KernelError("kernel already started")
        self.started = True
        for t in self.cfg.tasks:
            if t.autostart:
                self._activate_state(self.tcbs[t.name])
        if self.ready:
            nxt = self._pop_ready()
            nxt.state = TaskState.RUNNING
            self.running = nxt
            self.record("task_run", {"task": nxt.name, "how": "start"})
        self._run()

    # ------------------------------------------------------------ services

    def _activate_state(self, tcb: TaskControlBlock) -> bool:
        if tcb.pending_activations >= tcb.cfg.max_activations:
            self.os_error(E_OS_LIMIT, f"activation overflow for {tcb.name}")
            return False
        self._stamp += 1
        tcb.stamps.append(self._stamp)
        if tcb.state is TaskState.SUSPENDED:
            self._enqueue_ready(tcb)
        return True

    def _switch_in(self, tcb: TaskControlBlock, how: str, from_trap: bool) -> list:
        """Micro-ops that make ``tcb`` the executing context."""
        items = []
        if tcb.saved is None:
            items.append(self._op_item("csr_access"))  # fresh start: stack/entry setup
        else:
            items.append(self._op_item("context_restore"))
            if tcb.saved == "trap" and not from_trap:
                # Resuming an interrupted task still needs an mret.
                items.append(("trap_exit", self.cost.trap_exit, None))
        tcb.saved = None
        return items

    def activate_task(self, caller, target: str) -> None:
        tcb = self.tcbs.get(target)
        if tcb is None:
            self.os_error(E_OS_ID, f"unknown task {target}")
            return
        from_task = isinstance(caller, TaskControlBlock)
        items = [self._lock(), self._op_item("kernel_op", lambda: self.record("activate", {"task": target, "by": caller.name}))]
        ok = self._activate_state(tcb)
        if ok and from_task and self._top_ready() is not None and self._top_ready().priority > caller.priority:
            nxt = self._pop_ready()
            items.append(self._op_item("context_save"))
            caller.saved = "sync"
            caller.state = TaskState.READY
            bisect.insort(self.ready, (-caller.priority, caller.stamps[0], caller.name))
            nxt.state = TaskState.RUNNING
            self.running = nxt
            items += self._switch_in(nxt, "preempt", from_trap=False)
            items.append(self._unlock(self._task_run_effect(nxt, "preempt")))
        else:
            items.append(self._unlock())
        self._push_front(items)

    def _task_run_effect(self, tcb: TaskControlBlock, how: str):
        return lambda: self.record("task_run", {"task": tcb.name, "how": how})

    def terminate_task(self, caller) -> None:
        if not isinstance(caller, TaskControlBlock) or self.in_isr:
            self.os_error(E_OS_CALLEVEL, "TerminateTask called from interrupt level")
            return
        if self.all_disabled:
            self.os_error(E_OS_STATE, "TerminateTask with interrupts disabled")
            return
        items = [self._lock(), self._op_item("kernel_op", lambda: self.record("terminate", {"task": caller.name}))]
        caller.stamps.popleft()
        caller.pc = 0
        caller.resume_compute = 0
        caller.saved = None
        if caller.stamps:
            self._enqueue_ready(caller)
        else:
            caller.state = TaskState.SUSPENDED
        if self.ready:
            nxt = self._pop_ready()
            nxt.state = TaskState.RUNNING
            self.running = nxt
            how = "resume" if nxt.saved else "start"
            items.append(self._unlock())
            items += self._switch_in(nxt, how, from_trap=False)
            last = items.pop()
            items.append((last[0], last[1], _chain(last[2], self._task_run_effect(nxt, how))))
        else:
            self.running = None
            items.append(self._unlock(lambda: self.record("idle")))
        self._push_front(items)

    def disable_all(self, ctx) -> None:
        if self.all_disabled:
            self.os_error(E_OS_STATE, "DisableAllInterrupts while already disabled")
            return
        self.all_disabled = True
        self._mask(True)
        self._push_front([self._op_item("csr_access"),
                          self._op_item("kernel_op", lambda: self.record("disable_all"))])

    def enable_all(self, ctx) -> None:
        if not self.all_disabled:
            self.os_error(E_OS_STATE, "EnableAllInterrupts without matching disable")
            return

        def done():
            self.all_disabled = False
            self._mask(False)
            self.record("enable_all")

        self._push_front([self._op_item("csr_access"), self._op_item("kernel_op", done)])

    def _mask(self, on: bool) -> None:
        if self.cfg.mode is Mode.CLINT_PLIC:
            # Inside a handler MIE is already clear; _trap_return keeps it clear.
            if not self.in_isr:
                self.hart.csr.mie = not on
        else:
            clic = self.p.clic
            if on:
                self._saved_thresh = clic.mintthresh[0]
                clic.set_mintthresh(MAX_LEVEL)
            else:
                clic.set_mintthresh(self._saved_thresh)

    # ------------------------------------------------------------ executor

    def _run(self) -> None:
        if self._in_run:
            return
        self._in_run = True
        try:
            while True:
                if not self.ucode and self._try_interrupt():
                    continue
                if self.ucode:
                    kind, cycles, effect = self.ucode.popleft()
                    if cycles == 0:
                        self._complete(kind, 0, effect)
                        continue
                    self._start_op(kind, cycles, effect, False, None)
                    return
                ctx = self.current()
                if ctx is None:
                    if self._idle_since is None:
                        self._idle_since = self.engine.now
                    return
                if ctx.resume_compute:
                    n, ctx.resume_compute = ctx.resume_compute, 0
                    self._start_op("compute", n, None, True, ctx)
                    return
                body = ctx.body
                if ctx.pc >= len(body):
                    self._end_of_body(ctx)
                    continue
                action = body[ctx.pc]
                ctx.pc += 1
                if self._exec(action, ctx):
                    return
        finally:
            self._in_run = False

    def _exec(self, a, ctx) -> bool:
        """Interpret one action; True when a timed operation was started."""
        t = type(a)
        if t is Compute:
            if a.cycles:
                self._start_op("compute", a.cycles, None, True, ctx)
                return True
            return False
        if t is Atomic:
            n = a.cycles + (self.engine.jitter.draw(a.channel) if a.channel else 0)
            if n:
                self._start_op("atomic", n, None, False, ctx)
                return True
            return False
        if t is Probe:
            self.record("probe", {"name": a.name, "ctx": ctx.name})
            return False
        if t is Activate:
            self.activate_task(ctx, a.task)
            return False
        if t is Terminate:
            self.terminate_task(ctx)
            return False
        if t is Loop:
            ctx.pc = 0
            return False
        if t is DisableAll:
            self.disable_all(ctx)
            return False
        if t is EnableAll:
            self.enable_all(ctx)
            return False
        if t is Raise:
            self.ucode.append(self._op_item("csr_access", lambda: self.p.raise_device(a.device)))
            return False
        if t is Clear:
            self.ucode.append(self._op_item("csr_access", lambda: self.p.clear_device(a.device)))
            return False
        if t is Call:
            self.ucode.append((a.label, a.cycles, a.fn))
            return False
        raise KernelError(f"unknown action {a!r}")

    def _start_op(self, kind, cycles, effect, interruptible, ctx) -> None:
        self._wake_from_idle()
        ev = self.engine.schedule(cycles, "cpu")
        self._op = (ev, kind, cycles, effect, self.engine.now, interruptible, ctx)

    def _wake_from_idle(self) -> None:
        if self._idle_since is not None:
            idle = self.engine.now - self._idle_since
            self._idle_since = None
            if idle:
                self.hart.charge("idle", idle)

    def _on_op_done(self, ev) -> None:
        op = self._op
        if op is None or op[0] is not ev:
            return
        self._op = None
        _, kind, cycles, effect, _, _, _ = op
        self._complete(kind, cycles, effect)
        self._run()

    def _complete(self, kind, cycles, effect) -> None:
        if kind == "context_save":
            self.hart.context_save()
        elif kind == "context_restore":
            self.hart.context_restore()
        elif kind == "mnxti":
            pass  # charged by Hart.read_mnxti inside the effect
        elif cycles:
            self.hart.charge(kind, cycles)
        if effect is not None:
            effect()

    def notify_irq(self) -> None:
        """Called by the platform whenever an interrupt input changes."""
        if self._in_run:
            return
        op = self._op
        if op is not None:
            ev, kind, cycles, effect, start, interruptible, ctx = op
            if not interruptible or self.hart.pending_cause() is None:
                return
            self.engine.cancel(ev)
            self._op = None
            done = self.engine.now - start
            if done:
                self.hart.charge("compute", done)
            ctx.resume_compute = cycles - done
            self._run()
            return
        if self._idle_since is not None and self.hart.pending_cause() is not None:
            self._wake_from_idle()
            self._run()

    # ------------------------------------------------------------ interrupts

    def _try_interrupt(self) -> bool:
        cause = self.hart.accept()
        if cause is None:
            return False
        self._wake_from_idle()
        path = self.hart.take_trap(cause)
        trap = TrapRecord(cause, self.current())
        self.traps.append(trap)
        if isinstance(trap.interrupted, TaskControlBlock):
            trap.interrupted.saved = "trap"
        self.record("irq_accept", {"cause": cause.code, "level": cause.level, "shv": cause.shv})
        items = []
        for prim in path:
            if prim == "plic_claim_access":
                items.append(self._op_item(prim, lambda: self._claim(trap)))
            else:
                items.append(self._op_item(prim))
        items.append(self._op_item("context_save", lambda: self._dispatch(trap)))
        self._push_front(items)
        return True

    def _claim(self, trap: TrapRecord) -> None:
        trap.plic_src = self.p.plic.claim(0)
        self.record("plic_claim", {"src": trap.plic_src})

    def _device_for(self, trap: TrapRecord) -> str | None:
        if trap.cause.code == MEIP_LINE:
            return self.p.device_for_plic(trap.plic_src) if trap.plic_src else None
        return self.p.device_for_cause(trap.cause.code)

    def _dispatch(self, trap: TrapRecord) -> None:
        if self.cfg.mode is Mode.CLIC:
            # The entry stub re-enables interrupts so higher levels can nest.
            self.hart.csr.mie = True
        if trap.cause.code == MEIP_LINE and not trap.plic_src:
            self.record("spurious_claim")
            self._push_front(self._exit_items(trap))
            return
        device = self._device_for(trap)
        isr = self.isr_by_device.get(device) if device else None
        if isr is None:
            raise SpuriousInterruptError(f"interrupt {trap.cause.code} ({device}) has no configured ISR")
        self.dispatch_isr(isr, trap)

    def dispatch_isr(self, isr: IsrConfig, trap: TrapRecord) -> None:
        ctx = IsrContext(isr, trap)
        self.isr_stack.append(ctx)
        self.record("isr_enter", {"isr": isr.name, "category": isr.category.value})
        if isr.category is IsrCategory.ISR2:
            items = [self._lock(), self._op_item("kernel_op")]
            if self.cfg.effective_dispatch(isr) is Isr2Dispatch.AS_TASK:
                items += [
                    self._op_item("kernel_op"),  # activate the ISR as a task
                    ("queue_op", self.cost.csr_access, None),
                    ("queue_op", self.cost.csr_access, None),
                ]
            items.append(self._unlock())
            self._push_front(items)

    def _end_of_body(self, ctx) -> None:
        if isinstance(ctx, TaskControlBlock):
            # Falling off the end of a task body is an implicit TerminateTask.
            self.terminate_task(ctx)
            return
        trap = ctx.trap
        items = []
        if trap.plic_src:
            src = trap.plic_src
            trap.plic_src = 0
            items.append(self._op_item("plic_complete_access", lambda: self.p.plic.complete(src)))
        if ctx.isr.category is IsrCategory.ISR2:
            items += [self._lock(), self._op_item("kernel_op"), self._unlock()]
            self._episode_resched = True
        items.append(("isr_done", 0, lambda: self._after_isr(ctx)))
        self._push_front(items)

    def _after_isr(self, ctx: IsrContext) -> None:
        self.isr_stack.pop()
        self.record("isr_exit", {"isr": ctx.isr.name})
        trap = ctx.trap
        if self.cfg.mode is Mode.CLIC and self.cfg.tail_chaining and not trap.cause.shv:
            self._push_front([("mnxti", self.cost.csr_access, lambda: self._on_mnxti(trap))])
        else:
            self._push_front(self._exit_items(trap))

    def _on_mnxti(self, trap: TrapRecord) -> None:
        nxt = self.hart.read_mnxti()
        if nxt is None:
            self._push_front(self._exit_items(trap))
            return
        trap.cause = nxt
        self.record("tail_chain", {"cause": nxt.code, "level": nxt.level})
        if nxt.code == MEIP_LINE:
            self._push_front([self._op_item(
                "plic_claim_access", _chain(lambda: self._claim(trap), lambda: self._dispatch(trap)))])
        else:
            self._dispatch(trap)

    def _exit_items(self, trap: TrapRecord) -> list:
        outermost = len(self.traps) == 1
        interrupted = trap.interrupted
        if outermost and self._episode_resched and not isinstance(interrupted, IsrContext):
            self._episode_resched = False
            cur = self.running
            best = self._top_ready()
            if best is not None and (cur is None or best.priority > cur.priority):
                nxt = self._pop_ready()
                if cur is not None:
                    cur.state = TaskState.READY
                    bisect.insort(self.ready, (-cur.priority, cur.stamps[0], cur.name))
                nxt.state = TaskState.RUNNING
                self.running = nxt
                how = "resume" if nxt.saved else "start"
                self.record("reschedule", {"from": cur.name if cur else None, "to": nxt.name})
                items = self._switch_in(nxt, how, from_trap=True)
                items.append(("trap_exit", self.cost.trap_exit, _chain(self._trap_return, self._task_run_effect(nxt, how))))
                return items
        if outermost:
            self._episode_resched = False
        items = [self._op_item("context_restore")]
        after = self._trap_return
        if isinstance(interrupted, TaskControlBlock):
            interrupted.saved = None
            after = _chain(self._trap_return, self._task_run_effect(interrupted, "return"))
        elif interrupted is None:
            after = _chain(self._trap_return, lambda: self.record("idle"))
        items.append(("trap_exit", self.cost.trap_exit, after))
        return items

    def _trap_return(self) -> None:
        self.hart.trap_return()
        self.traps.pop()
        self.record("trap_return", {"depth": len(self.traps)})
        if self.all_disabled and self.cfg.mode is Mode.CLINT_PLIC and not self.hart.stack:
            self.hart.csr.mie = False

    # ------------------------------------------------------------ audit

    def task_states(self) -> dict[str, tuple[str, int]]:
        return {n: (t.state.value, t.pending_activations) for n, t in self.tcbs.items()}


def _chain(*fns):
    fns = [f for f in fns if f is not None]
    if not fns:
        return None
    if len(fns) == 1:
        return fns[0]

    def run():
        for f in fns:
            f()

    return run
