"""Glue between oracle-side plain data and package objects."""

from clicsim.fabric import Mode
from clicsim.kernel import IsrCategory, IsrConfig, KernelConfig, TaskConfig, parse_body
from clicsim.platform import Device, Platform

import oracles

COMBOS = [(Mode.CLINT_PLIC, False), (Mode.CLINT_PLIC, True), (Mode.CLIC, False), (Mode.CLIC, True)]


def build_random(scenario, mode, optimized, seed=1):
    tasks, isrs, stimuli = scenario
    tc = [TaskConfig(n, p, parse_body(b), m, a) for n, p, m, a, b in tasks]
    ic = [IsrConfig(n, IsrCategory(c), d, lvl, parse_body(h), shv=s) for n, c, d, lvl, s, h in isrs]
    devs = [Device(f"d{j}", plic_source=j + 1, clic_line=16 + j) for j in range(len(isrs))]
    p = Platform(KernelConfig(tc, ic, mode=mode, isr2_optimized=optimized), devs, seed=seed)
    for dev, at in stimuli:
        p.schedule_raise(dev, at)
    return p


def schedule_matches(scenario, trace):
    """Observed dispatches equal the reference schedule.

    The horizon may cut the run right after a logical event whose dispatch
    has not completed yet, so the simulator may trail by one dispatch.
    """
    tasks = {n: (pr, m, a) for n, pr, m, a, _ in scenario[0]}
    cats = {n: c for n, c, *_ in scenario[1]}
    exp = oracles.replay(trace, tasks, cats)
    got = oracles.observed_dispatches(trace)
    return got == exp[: len(got)] and len(exp) - len(got) <= 1, exp, got
