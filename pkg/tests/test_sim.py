import json
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from clicsim.sim import (
    Engine,
    JitterSource,
    LivelockError,
    SimClock,
    SimError,
    TraceLog,
    UnknownChannelError,
    derive_seed,
)
from oracles import naive_delivery_order


def collecting_engine(**kw):
    eng = Engine(**kw)
    fired = []
    eng.on("x", lambda ev: fired.append(ev.payload))
    return eng, fired


def test_zero_delay_fires_at_current_cycle():
    eng, fired = collecting_engine()
    eng.run_until(40)
    eng.schedule(0, "x", "a")
    ev = eng.step()
    assert fired == ["a"] and ev.fire_at == 40 and eng.now == 40


def test_equal_time_events_are_fifo():
    eng, fired = collecting_engine()
    eng.schedule(5, "x", "A")
    eng.schedule(5, "x", "B")
    eng.run_until(10)
    assert fired == ["A", "B"]


def test_thousand_random_schedules_match_naive_sort():
    rng = random.Random(7)
    eng, fired = collecting_engine()
    plan = [(rng.randint(0, 50), i) for i in range(1000)]
    for t, label in plan:
        eng.schedule(t, "x", label)
    eng.run_until(100)
    assert fired == naive_delivery_order(plan)


def test_negative_delay_rejected():
    with pytest.raises(SimError):
        Engine().schedule(-1, "x")


def test_cancelled_event_never_fires():
    eng, fired = collecting_engine()
    ev = eng.schedule(3, "x", "gone")
    eng.schedule(4, "x", "kept")
    assert eng.cancel(ev)
    assert not eng.cancel(ev)
    eng.run_until(10)
    assert fired == ["kept"]
    assert eng.scheduled == eng.fired + eng.cancelled + eng.pending


def test_run_until_empty_queue_advances_clock():
    eng = Engine()
    trace = eng.run_until(100)
    assert eng.now == 100 and len(trace) == 0


def test_one_event_gives_one_trace_entry():
    eng = Engine()
    eng.schedule(50, "ping")
    trace = eng.run_until(100)
    assert [(e.cycle, e.src, e.event) for e in trace] == [(50, "engine", "ping")]


def test_run_until_rejects_past_limit():
    eng = Engine()
    eng.run_until(10)
    with pytest.raises(SimError):
        eng.run_until(5)


def test_livelock_detected():
    eng = Engine(max_same_cycle=100)
    eng.on("loop", lambda ev: eng.schedule(0, "loop"))
    eng.schedule(0, "loop")
    with pytest.raises(LivelockError):
        eng.run_until(10)


def test_default_livelock_threshold_allows_ten_thousand():
    eng = Engine()
    count = [0]

    def h(ev):
        count[0] += 1
        if count[0] < 10_000:
            eng.schedule(0, "loop")

    eng.on("loop", h)
    eng.schedule(0, "loop")
    eng.run_until(1)
    assert count[0] == 10_000


def _replay_trace(seed):
    eng = Engine(seed=seed, jitter={"j": (0, 20)})

    def h(ev):
        eng.record("model", "tick", {"n": ev.payload, "j": eng.jitter.draw("j")})
        if ev.payload < 50:
            eng.schedule(eng.jitter.draw("j"), "t", ev.payload + 1)

    eng.on("t", h)
    eng.schedule(0, "t", 0)
    return eng.run_until(5000).to_jsonl()


def test_same_seed_gives_byte_identical_trace():
    assert _replay_trace(11) == _replay_trace(11)
    assert _replay_trace(11) != _replay_trace(12)


def test_stop_predicate_ends_early():
    eng, fired = collecting_engine()
    for t in (1, 2, 3):
        eng.schedule(t, "x", t)
    eng.run_until(10, stop=lambda: len(fired) == 2)
    assert fired == [1, 2] and eng.now == 2


# -- clock


def test_cycles_to_ns_rounds_down():
    clk = SimClock()
    assert clk.cycles_to_ns(1) == 20
    assert SimClock(0, 3).cycles_to_ns(1) == 333_333_333
    assert clk.ns_to_cycles(1_000_000) == 50_000


def test_clock_cannot_go_backward():
    clk = SimClock(10)
    with pytest.raises(SimError):
        clk.advance_to(9)


# -- jitter


def test_degenerate_jitter_interval():
    assert JitterSource(1, {"z": (0, 0)}).draw("z") == 0


def test_jitter_draws_stay_in_bounds():
    js = JitterSource(3, {"c": (2, 7)})
    draws = [js.draw("c") for _ in range(10_000)]
    assert set(draws) == set(range(2, 8))


def test_jitter_is_deterministic_per_seed():
    a = JitterSource(99, {"c": (0, 1000)})
    b = JitterSource(99, {"c": (0, 1000)})
    assert [a.draw("c") for _ in range(100)] == [b.draw("c") for _ in range(100)]


def test_jitter_channels_are_independent_streams():
    a = JitterSource(5, {"p": (0, 100), "q": (0, 100)})
    b = JitterSource(5, {"p": (0, 100), "q": (0, 100)})
    for _ in range(17):
        b.draw("q")
    assert [a.draw("p") for _ in range(20)] == [b.draw("p") for _ in range(20)]


def test_unknown_jitter_channel():
    with pytest.raises(UnknownChannelError):
        JitterSource(0).draw("nope")


def test_bad_jitter_bounds():
    with pytest.raises(ValueError):
        JitterSource(0, {"c": (5, 2)})


def test_derive_seed_is_stable():
    assert derive_seed(42, "isrentry", 3) == derive_seed(42, "isrentry", 3)
    assert derive_seed(42, "isrentry", 3) != derive_seed(42, "isrentry", 4)


# -- trace


def test_trace_jsonl_round_trip():
    log = TraceLog()
    log.append(1, "a", "x", {"k": 1})
    log.append(1, "b", "y")
    log.append(5, "a", "z", {"s": "t"})
    text = log.to_jsonl()
    first = json.loads(text.splitlines()[0])
    assert first == {"cycle": 1, "src": "a", "event": "x", "data": {"k": 1}}
    assert TraceLog.from_jsonl(text).to_jsonl() == text


def test_trace_rejects_out_of_order_append():
    log = TraceLog()
    log.append(5, "a", "x")
    with pytest.raises(SimError):
        log.append(4, "a", "y")


# -- properties


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 30), st.booleans()), max_size=60))
def test_no_event_lost_and_order_total(plan):
    eng, fired = collecting_engine()
    handles = []
    for i, (delay, cancel) in enumerate(plan):
        handles.append((eng.schedule(delay, "x", i), cancel))
    for ev, cancel in handles:
        if cancel:
            eng.cancel(ev)
    assert eng.scheduled == eng.fired + eng.cancelled + eng.pending
    last = -1
    times = []
    while eng.step() is not None:
        assert eng.now >= last
        last = eng.now
        times.append(eng.now)
        assert eng.scheduled == eng.fired + eng.cancelled + eng.pending
    kept = [(d, i) for i, (d, c) in enumerate(plan) if not c]
    assert fired == naive_delivery_order(kept)
    assert eng.pending == 0


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**64 - 1), st.integers(0, 50), st.integers(0, 50))
def test_jitter_property_bounds_and_replay(seed, lo, span):
    a = JitterSource(seed, {"c": (lo, lo + span)})
    b = JitterSource(seed, {"c": (lo, lo + span)})
    xs = [a.draw("c") for _ in range(30)]
    assert xs == [b.draw("c") for _ in range(30)]
    assert all(lo <= x <= lo + span for x in xs)
