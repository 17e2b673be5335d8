import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from clicsim.fabric import Mode
from clicsim.kernel import (
    E_OS_CALLEVEL,
    E_OS_LIMIT,
    E_OS_STATE,
    ConfigError,
    IsrCategory,
    IsrConfig,
    IsrContext,
    KernelConfig,
    SpuriousInterruptError,
    TaskConfig,
    TrapRecord,
    parse_action,
    parse_body,
)
from clicsim.hart import TrapCause
from clicsim.platform import Device, Platform
from helpers import COMBOS, build_random, schedule_matches
from oracles import random_scenario

DEVICES = [Device(f"d{j}", plic_source=j + 1, clic_line=16 + j) for j in range(4)]


def task(name, prio, body=(), max_act=1, auto=False):
    return TaskConfig(name, prio, parse_body(body), max_act, auto)


def isr(name, cat, dev, level=1, handler=(), shv=True):
    return IsrConfig(name, IsrCategory(cat), dev, level, parse_body(handler), shv=shv)


def platform(tasks, isrs=(), mode=Mode.CLINT_PLIC, **kw):
    return Platform(KernelConfig(tasks, isrs, mode=mode, **kw), DEVICES)


def runs(trace):
    return [e.data["task"] for e in trace if e.event == "task_run"]


def events(trace, name):
    return [e for e in trace if e.src == "kernel" and e.event == name]


# ---------------------------------------------------------------- parsing


def test_parse_actions():
    assert parse_action("compute 40").cycles == 40
    assert parse_action("atomic 8 mem_wait").channel == "mem_wait"
    for bad in ["", "compute", "compute -1", "compute x", "jump 3", "terminate now"]:
        with pytest.raises(ConfigError):
            parse_action(bad)


def test_config_validation():
    with pytest.raises(ConfigError):
        KernelConfig([task("A", 1), task("A", 2)])
    with pytest.raises(ConfigError):
        KernelConfig([task("A", 1, ["activate Ghost"])])
    with pytest.raises(ConfigError):
        KernelConfig([task("A", 1)], [isr("I", "ISR1", "d0", handler=["activate A"])])
    with pytest.raises(ConfigError):
        KernelConfig([task("A", 1)], [isr("I", "ISR2", "d0", level=0)])
    with pytest.raises(ConfigError):
        KernelConfig([task("A", 1)], [isr("I", "ISR2", "d0"), isr("J", "ISR1", "d0")])


def test_level_array_generated_from_isr_table():
    cfg = KernelConfig([task("A", 1)], [isr("I", "ISR2", "d0", level=3), isr("J", "ISR1", "d1", level=5)])
    assert dict(cfg.level_array) == {"d0": 3, "d1": 5}


# ---------------------------------------------------------------- services


def test_low_activates_high_preempts():
    p = platform([task("Low", 1, ["compute 10", "activate High", "compute 10"], auto=True),
                  task("High", 5, ["compute 10"])])
    trace = p.run(5000)
    assert runs(trace) == ["Low", "High", "Low"]
    assert [e.data["how"] for e in events(trace, "task_run")] == ["start", "preempt", "resume"]


def test_high_activates_low_caller_continues():
    p = platform([task("High", 5, ["activate Low", "probe after"], auto=True),
                  task("Low", 1, ["compute 10"])])
    trace = p.run(5000)
    probe = events(trace, "probe")[0]
    assert probe.data["ctx"] == "High"
    assert runs(trace) == ["High", "Low"]


def test_high_terminates_low_runs():
    p = platform([task("High", 5, ["compute 5"], auto=True), task("Low", 1, ["compute 5"], auto=True)])
    assert runs(p.run(5000)) == ["High", "Low"]


def test_multiple_activation_redispatches_once():
    p = platform([task("Boss", 1, ["activate W", "activate W", "activate W"], auto=True),
                  task("W", 3, ["compute 5"], max_act=2)])
    trace = p.run(10_000)
    assert runs(trace).count("W") == 3
    assert not p.kernel.errors


def test_activation_overflow_is_os_error():
    p = platform([task("Boss", 5, ["activate W", "activate W"], auto=True), task("W", 1)])
    p.run(5000)
    assert [e[1] for e in p.kernel.errors] == [E_OS_LIMIT]


def test_pending_two_activations_dispatch_same_task_twice():
    p = platform([task("Boss", 5, ["activate W", "activate W"], auto=True),
                  task("W", 1, ["compute 5"], max_act=2)])
    trace = p.run(5000)
    assert runs(trace) == ["Boss", "W", "W"]


def test_terminate_from_isr_is_error_without_dispatch():
    with pytest.raises(ConfigError):
        KernelConfig([task("A", 1)], [isr("I", "ISR2", "d0", handler=["terminate"])])
    p = platform([task("A", 1, ["compute 5"], auto=True)], [isr("I", "ISR2", "d0")])
    p.run(2)
    k = p.kernel
    ctx = IsrContext(k.isr_by_device["d0"], TrapRecord(TrapCause(11), k.running))
    before = (k.task_states(), len(k.ucode))
    k.terminate_task(ctx)
    assert [e[1] for e in k.errors] == [E_OS_CALLEVEL]
    assert (k.task_states(), len(k.ucode)) == before


def test_double_disable_and_unmatched_enable():
    p = platform([task("A", 1, ["disable_all", "disable_all", "enable_all", "enable_all"], auto=True)])
    p.run(5000)
    assert [e[1] for e in p.kernel.errors] == [E_OS_STATE, E_OS_STATE]


@pytest.mark.parametrize("mode", list(Mode))
def test_disable_holds_interrupt_until_enable(mode):
    p = platform([task("A", 1, ["disable_all", "compute 500", "enable_all", "compute 500"], auto=True)],
                 [isr("I", "ISR1", "d0", level=2, handler=["clear d0"])], mode=mode)
    p.schedule_raise("d0", 100)
    trace = list(p.run(5000))
    enabled = next(i for i, e in enumerate(trace) if e.event == "enable_all")
    entered = next(i for i, e in enumerate(trace) if e.event == "isr_enter")
    assert entered > enabled
    assert trace[entered].cycle > 500


@pytest.mark.parametrize("mode", list(Mode))
def test_isr1_never_touches_ready_queue(mode):
    p = platform([task("A", 1, ["compute 3000"], auto=True), task("B", 2)],
                 [isr("I", "ISR1", "d0", handler=["clear d0", "compute 30"])], mode=mode)
    p.schedule_raise("d0", 500)
    p.run(400)
    before = (p.kernel.task_states(), list(p.kernel.ready))
    p.run(1500)
    assert events(p.engine.trace, "isr_exit")
    assert (p.kernel.task_states(), list(p.kernel.ready)) == before
    assert not events(p.engine.trace, "reschedule")


def test_unconfigured_interrupt_is_spurious():
    p = Platform(KernelConfig([task("A", 1, ["compute 500"], auto=True)], mode=Mode.CLIC), DEVICES)
    p.clic.configure(16, level=1)
    p.schedule_raise("d0", 100)
    with pytest.raises(SpuriousInterruptError):
        p.run(2000)


@pytest.mark.parametrize("mode", list(Mode))
def test_isr2_activated_task_runs_after_handler(mode):
    p = platform([task("Low", 1, ["compute 3000"], auto=True), task("High", 5, ["probe hi"])],
                 [isr("I", "ISR2", "d0", handler=["clear d0", "activate High"])], mode=mode)
    p.schedule_raise("d0", 200)
    trace = list(p.run(6000))
    exit_i = next(i for i, e in enumerate(trace) if e.event == "isr_exit")
    hi = next(i for i, e in enumerate(trace) if e.event == "probe")
    assert hi > exit_i
    assert runs(trace) == ["Low", "High", "Low"]


def test_isr2_without_activation_resumes_preempted():
    p = platform([task("Low", 1, ["compute 3000"], auto=True)],
                 [isr("I", "ISR2", "d0", handler=["clear d0"])])
    p.schedule_raise("d0", 200)
    trace = p.run(6000)
    assert runs(trace) == ["Low", "Low"]
    assert events(trace, "task_run")[1].data["how"] == "return"


@pytest.mark.parametrize("mode", list(Mode))
def test_direct_call_same_final_state_fewer_cycles(mode):
    def go(opt):
        p = platform([task("Low", 1, ["compute 3000"], auto=True), task("High", 5, ["compute 100"])],
                     [isr("I", "ISR2", "d0", handler=["clear d0", "activate High"])],
                     mode=mode, isr2_optimized=opt)
        p.schedule_raise("d0", 200)
        trace = p.run(20_000)
        done = max(e.cycle for e in trace if e.event == "terminate" and e.data["task"] == "Low")
        return p.kernel.task_states(), runs(trace), done

    slow, fast = go(False), go(True)
    assert slow[:2] == fast[:2]
    assert fast[2] <= slow[2]


def test_nested_isr2_single_reschedule_at_outermost_exit():
    p = platform(
        [task("Low", 1, ["compute 5000"], auto=True), task("A", 3, ["compute 50"]), task("B", 4, ["compute 50"])],
        [isr("Outer", "ISR2", "d0", level=1, handler=["clear d0", "compute 300", "activate A"]),
         isr("Inner", "ISR2", "d1", level=3, handler=["clear d1", "activate B"])],
        mode=Mode.CLIC,
    )
    p.schedule_raise("d0", 100)
    p.schedule_raise("d1", 200)
    trace = list(p.run(20_000))
    depths = [e.data["depth"] for e in trace if e.event == "trap_return"]
    assert depths[:2] == [1, 0]
    resched = events(trace, "reschedule")
    assert len(resched) == 1
    outer_ret = next(e for e in trace if e.event == "trap_return" and e.data["depth"] == 0)
    assert resched[0].cycle <= outer_ret.cycle
    assert runs(trace)[:3] == ["Low", "B", "A"]


@pytest.mark.parametrize("k", [2, 5])
def test_tail_chained_burst_one_save_one_restore(k):
    isrs = [isr(f"I{j}", "ISR1", f"d{j}", level=2, handler=[f"clear d{j}", "compute 20"], shv=False)
            for j in range(k)]
    devs = [Device(f"d{j}", clic_line=16 + j) for j in range(k)]
    p = Platform(KernelConfig([task("A", 1, ["compute 5000"], auto=True)], isrs, mode=Mode.CLIC), devs)
    for j in range(k):
        p.schedule_raise(f"d{j}", 100)
    trace = p.run(5000)
    assert len(events(trace, "isr_enter")) == k
    assert len(events(trace, "tail_chain")) == k - 1
    assert (p.hart.saves, p.hart.restores) == (1, 1)


@pytest.mark.parametrize("mode, opt", COMBOS)
def test_mcycle_equals_elapsed_cycles(mode, opt):
    sc = random_scenario(random.Random(3))
    p = build_random(sc, mode, opt)
    p.run(4000)
    p.settle()
    op = p.kernel._op
    in_flight = p.engine.now - op[4] if op else 0
    assert p.hart.csr.mcycle + in_flight == p.engine.now
    assert p.hart.csr.mcycle == sum(p.hart.charged.values())


# ---------------------------------------------------------------- properties


def _legal_transitions(trace):
    state = {}
    for e in trace:
        if e.src != "kernel":
            continue
        if e.event == "task_run":
            state[e.data["task"]] = "RUNNING"
        elif e.event == "terminate":
            if state.get(e.data["task"]) != "RUNNING":
                return False
            state[e.data["task"]] = "SUSPENDED"
    return True


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from(COMBOS))
def test_schedule_matches_reference_scheduler(seed, combo):
    sc = random_scenario(random.Random(seed))
    p = build_random(sc, *combo)
    p.run(4000)
    ok, exp, got = schedule_matches(sc, p.engine.trace)
    assert ok, (exp, got)
    assert _legal_transitions(p.engine.trace)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from(COMBOS))
def test_only_highest_ready_runs_and_depth_balanced(seed, combo):
    sc = random_scenario(random.Random(seed))
    p = build_random(sc, *combo)
    p.run(4000)
    k = p.kernel
    if k.running is not None and not k.isr_stack and k.ready and not k.ucode:
        assert k.running.priority >= k._top_ready().priority
    accepts = len(events(p.engine.trace, "irq_accept"))
    returns = len(events(p.engine.trace, "trap_return"))
    assert accepts - returns == len(k.traps) == p.hart.depth
