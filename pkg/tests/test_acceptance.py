"""Acceptance criteria AC-1..AC-7.

Each test prints one ``AC-n PASS|FAIL`` line (visible even under output
capture) and then asserts the same condition, wall-clock budget included.
"""

import itertools
import random
import time

import pytest

from clicsim.bench import RTOS_METRICS, default_configs, run_suite, simulate_once, with_name
from clicsim.fabric import Clic, Mode, Plic
from clicsim.hart import CostModel
from clicsim.kernel import IsrCategory, IsrConfig, KernelConfig, TaskConfig, parse_body
from clicsim.pingpong import PingPongConfig, run_pingpong
from clicsim.platform import Device, Platform
from clicsim.runner import run_scenario
from clicsim.scenario import load
from helpers import COMBOS, build_random, schedule_matches
from oracles import clic_argmax, clic_patterns, plic_argmax, plic_patterns, random_scenario


@pytest.fixture
def verdict(capsys):
    def report(ac: str, ok: bool, elapsed: float, budget: float, detail: str) -> None:
        ok_all = ok and elapsed < budget
        with capsys.disabled():
            print(f"\n{ac} {'PASS' if ok_all else 'FAIL'} ({elapsed:.2f}s / budget {budget:.0f}s) {detail}")
        assert ok, detail
        assert elapsed < budget, f"{ac} took {elapsed:.2f}s, budget {budget}s"

    return report


def test_ac1_clic_improvement(verdict):
    t0 = time.perf_counter()
    rep = run_suite(default_configs(), runs=100, seed=42, metrics=RTOS_METRICS)
    elapsed = time.perf_counter() - t0
    c = CostModel()
    worst = {m.value: (rep.get(m, "CLINT_PLIC").max, rep.get(m, "CLIC").max) for m in RTOS_METRICS}
    strict = all(worst[m][1] < worst[m][0] for m in ("isrentry", "isr2entry", "actl"))
    leq = all(b <= a for a, b in worst.values())
    needed = c.plic_claim_access + c.software_cause_decode - c.vector_table_fetch
    reduction = worst["isrentry"][0] - worst["isrentry"][1]
    detail = f"isrentry -{reduction} cyc (need >= {needed}); worst CLINT/CLIC {worst}"
    verdict("AC-1", strict and leq and reduction >= needed, elapsed, 10, detail)


def _burst(k: int, tail_chaining: bool) -> Platform:
    isrs = [IsrConfig(f"I{j}", IsrCategory.ISR1, f"d{j}", 2, parse_body([f"clear d{j}", "compute 20"]), shv=False)
            for j in range(k)]
    devs = [Device(f"d{j}", clic_line=16 + j) for j in range(k)]
    victim = TaskConfig("Victim", 1, parse_body(["compute 10000"]), autostart=True)
    p = Platform(KernelConfig([victim], isrs, mode=Mode.CLIC, tail_chaining=tail_chaining), devs)
    for j in range(k):
        p.schedule_raise(f"d{j}", 500)
    p.run(20_000)
    return p


def test_ac2_tail_chaining(verdict):
    t0 = time.perf_counter()
    bad = []
    for k in range(2, 9):
        for chained, want in ((True, 1), (False, k)):
            trace = _burst(k, chained).engine.trace
            saves = sum(1 for e in trace if e.src == "hart" and e.event == "context_save")
            restores = sum(1 for e in trace if e.src == "hart" and e.event == "context_restore")
            handled = sum(1 for e in trace if e.event == "isr_exit")
            if (saves, restores, handled) != (want, want, k):
                bad.append((k, chained, saves, restores, handled))
    elapsed = time.perf_counter() - t0
    verdict("AC-2", not bad, elapsed, 5, f"k=2..8 with/without mnxti; mismatches={bad}")


def test_ac3_isr2_optimization(verdict):
    t0 = time.perf_counter()
    ok, notes = True, []
    for base in default_configs():
        opt = with_name(base, base.name + "+opt", isr2_optimized=True)
        slow, fast, same_state = [], [], True
        for run in range(100):
            c_slow, p_slow = simulate_once("isr2entry", base, 42, run)
            c_fast, p_fast = simulate_once("isr2entry", opt, 42, run)
            slow.append(c_slow)
            fast.append(c_fast)
            same_state &= p_slow.kernel.task_states() == p_fast.kernel.task_states()
        ok &= max(fast) < max(slow) and same_state
        notes.append(f"{base.name} AS_TASK {max(slow)} vs DIRECT_CALL {max(fast)}, same final state={same_state}")
    elapsed = time.perf_counter() - t0
    verdict("AC-3", ok, elapsed, 5, "; ".join(notes))


def test_ac4_pingpong(verdict):
    t0 = time.perf_counter()
    res = {p: run_pingpong(1000, PingPongConfig(spin_period_us=p), seed=42) for p in (500, 1000, 2000)}
    elapsed = time.perf_counter() - t0
    r = res[1000]
    lo, avg, hi = r.min_ms, r.avg_ms, r.max_ms
    half, double = res[500].min_ms / lo, res[2000].min_ms / lo
    ok = (
        len(r.rtt_ns) >= 1000 and r.timeouts == 0
        and 1.5 <= lo <= 2.5 and 1.8 <= avg <= 2.8 and hi <= 4.5 and lo <= avg <= hi
        and abs(half - 0.5) <= 0.05 and abs(double - 2.0) <= 0.2
    )
    detail = (f"P=1ms min/avg/max {lo:.3f}/{avg:.3f}/{hi:.3f} ms over {len(r.rtt_ns)} rounds; "
              f"min scale x{half:.3f} (P/2), x{double:.3f} (2P)")
    verdict("AC-4", ok, elapsed, 30, detail)


def test_ac5_scheduler_oracle(verdict):
    t0 = time.perf_counter()
    rng = random.Random(20_240_601)
    failures, per_combo = [], dict.fromkeys(range(4), 0)
    for i in range(10_000):
        sc = random_scenario(rng, max_tasks=6, max_isrs=4, max_events=50)
        combo = i % 4
        p = build_random(sc, *COMBOS[combo])
        p.run(4000)
        ok, exp, got = schedule_matches(sc, p.engine.trace)
        per_combo[combo] += 1
        if not ok:
            failures.append((i, COMBOS[combo], exp, got))
    elapsed = time.perf_counter() - t0
    detail = f"10000 scenarios ({'/'.join(map(str, per_combo.values()))} per mode x flavor), mismatches={len(failures)}"
    if failures:
        detail += f"; first: {failures[0]}"
    verdict("AC-5", not failures, elapsed, 60, detail)


def _plic_check(prios, th, masks) -> int:
    n = len(prios)
    p = Plic(n)
    for s, pr in enumerate(prios, 1):
        p.set_priority(s, pr)
    p.set_threshold(th)
    bad = 0
    for pend, en in masks:
        p.pending = [False] + [bool(pend >> i & 1) for i in range(n)]
        p.claimed = [False] * (n + 1)
        for s in range(1, n + 1):
            p.enable[0][s] = bool(en >> (s - 1) & 1)
        want = plic_argmax([0, *prios], p.pending, p.enable[0], p.claimed, th)
        bad += p.claim() != want
    return bad


def _clic_check(levels, prios, floor, masks) -> int:
    n = len(levels)
    c = Clic(n)
    for i in range(n):
        c.configure(i, level=levels[i], priority=prios[i], enable=False)
    if floor >= 0:
        c.set_mintthresh(floor)
    bad = 0
    for pend, en in masks:
        pd = [bool(pend >> i & 1) for i in range(n)]
        ed = [bool(en >> i & 1) for i in range(n)]
        for i in range(n):
            c.set_pending(i, pd[i])
            c.set_enable(i, ed[i])
        w = c.arbitrate(0) if floor >= 0 else c.best(-1)
        bad += (w.id if w else None) != clic_argmax(levels, prios, pd, ed, floor)
    return bad


def test_ac6_arbitration_oracles(verdict):
    t0 = time.perf_counter()
    masks = {n: list(itertools.product(range(1 << n), repeat=2)) for n in range(1, 5)}
    plic_bad = plic_cases = clic_bad = clic_cases = 0
    # Every order relation among <= 4 priorities and the threshold (complete
    # for a comparison-based arbiter) x every pending/enable combination.
    for prios, th in plic_patterns(4):
        plic_bad += _plic_check(prios, th, masks[len(prios)])
        plic_cases += len(masks[len(prios)])
    for levels, prios, floor in clic_patterns(4):
        clic_bad += _clic_check(levels, prios, floor, masks[len(levels)])
        clic_cases += len(masks[len(levels)])
    # Raw values, exhaustively, where the space is small enough.
    for n in (1, 2, 3):
        for prios in itertools.product(range(8), repeat=n):
            for th in range(8):
                plic_bad += _plic_check(prios, th, masks[n])
                plic_cases += len(masks[n])
    keys = list(itertools.product(range(4), range(8)))
    for n in (1, 2):
        for combo in itertools.product(keys, repeat=n):
            levels, prios = zip(*combo)
            for floor in range(-1, 4):
                clic_bad += _clic_check(levels, prios, floor, masks[n])
                clic_cases += len(masks[n])
    elapsed = time.perf_counter() - t0
    detail = f"PLIC {plic_cases} cases, {plic_bad} mismatches; CLIC {clic_cases} cases, {clic_bad} mismatches"
    verdict("AC-6", plic_bad == 0 and clic_bad == 0, elapsed, 60, detail)


def test_ac7_determinism(verdict, tmp_path):
    t0 = time.perf_counter()
    outs = []
    for tag in ("a", "b"):
        outcome = run_scenario(load("clint_vs_clic", seed=42))
        outcome.write(tmp_path / tag)
        outs.append({f: (tmp_path / tag / f).read_bytes() for f in ("samples.csv", "summary.json")})
    elapsed = time.perf_counter() - t0
    same = outs[0] == outs[1]
    rows = outs[0]["samples.csv"].count(b"\n") - 1
    verdict("AC-7", same, elapsed, 10, f"two seed-42 runs, {rows} CSV rows, byte-identical={same}")
