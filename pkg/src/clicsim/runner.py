"""Executes a loaded scenario: the library behind every CLI command."""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

from .bench import (
    BenchError,
    LatencyReport,
    MetricId,
    MetricResult,
    PlatformConfig,
    extract,
    probe,
    run_metric,
    simulate_once,
)
from .kernel import KernelConfig
from .pingpong import PingPong
from .platform import Platform
from .scenario import CustomScenario, Scenario, ScenarioError
from .sim import TraceLog, derive_seed


@dataclass
class RunOutcome:
    report: LatencyReport
    timeouts: int

    def write(self, out: str | Path) -> list[Path]:
        out = Path(out)
        out.mkdir(parents=True, exist_ok=True)
        files = {
            "samples.csv": self.report.to_csv(),
            "summary.json": self.report.to_json(),
            "worst_case.dat": self.report.to_gnuplot(),
            "table.txt": self.report.table(),
        }
        paths = []
        for name, text in files.items():
            path = out / name
            path.write_text(text, encoding="utf-8", newline="\n")
            paths.append(path)
        return paths


def _custom_platform(c: CustomScenario, pl: PlatformConfig, seed: int) -> Platform:
    kcfg = KernelConfig(c.tasks, c.isrs, mode=pl.mode, isr2_optimized=pl.isr2_optimized,
                        tail_chaining=pl.tail_chaining)
    jitter = {k: tuple(v) for k, v in pl.jitter.items()}
    p = Platform(kcfg, c.devices, cost=pl.cost, seed=seed, jitter=jitter, n_lines=c.n_lines,
                 legacy_lines=c.legacy_lines)
    phase = p.engine.jitter.draw("arrival_phase")
    for st in c.stimuli:
        p.schedule_raise(st.device, st.at + phase)
        if st.clear_at is not None:
            p.schedule_clear(st.device, st.clear_at + phase)
    return p


def custom_run(c: CustomScenario, pl: PlatformConfig, seed: int, run: int) -> Platform:
    p = _custom_platform(c, pl, derive_seed(seed, "custom", run))
    p.run(c.horizon)
    return p


def _job(item) -> tuple[MetricResult | list[MetricResult], int]:
    kind, scen, metric, pl = item
    if kind == "rtos":
        return run_metric(metric, pl, scen.runs, scen.seed), 0
    if kind == "pingpong":
        res = PingPong(scen.pingpong_config(pl), derive_seed(scen.seed, "pingpong")).run(scen.runs)
        return MetricResult("pingpong", pl.name, res.rtt_ns, unit="ns", failed=res.timeouts), res.timeouts
    # custom: one simulation per run serves every probe pair
    c = scen.custom
    samples = {m: [] for m in scen.metrics}
    for r in range(scen.runs):
        trace = custom_run(c, pl, scen.seed, r).engine.trace
        for m in scen.metrics:
            start, stop = c.measure[m]
            samples[m].append(extract(trace, probe(start), probe(stop)))
    return [MetricResult(m, pl.name, s) for m, s in samples.items()], 0


def run_scenario(scen: Scenario, jobs: int = 1, platforms: list[PlatformConfig] | None = None) -> RunOutcome:
    platforms = platforms or scen.platforms
    if scen.custom is not None:
        work = [("custom", scen, None, pl) for pl in platforms]
    else:
        work = [("pingpong" if m == "pingpong" else "rtos", scen, m, pl)
                for m in scen.metrics for pl in platforms]
    if jobs > 1 and len(work) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_job, work))
    else:
        results = [_job(w) for w in work]
    report = LatencyReport([p.name for p in platforms])
    timeouts = 0
    collected = []
    for res, t in results:
        timeouts += t
        collected += res if isinstance(res, list) else [res]
    # Deterministic order: metric order from the scenario, then platform order.
    order = {m: i for i, m in enumerate(scen.metrics)}
    pidx = {p.name: i for i, p in enumerate(platforms)}
    for r in sorted(collected, key=lambda r: (order[r.metric], pidx[r.config])):
        report.add(r)
    return RunOutcome(report, timeouts)


def compare(scen: Scenario, jobs: int = 1) -> RunOutcome:
    if len(scen.platforms) < 2:
        raise ScenarioError("compare needs at least 2 platform configs (add a [[platforms]] list)")
    return run_scenario(scen, jobs)


def trace_one(scen: Scenario, metric: str, run: int = 0, platform: str | None = None) -> TraceLog:
    """Full trace of one run of ``metric`` on the first (or named) platform."""
    pl = scen.platforms[0]
    if platform is not None:
        match = [p for p in scen.platforms if p.name == platform]
        if not match:
            raise ScenarioError(f"unknown platform {platform!r}")
        pl = match[0]
    if scen.custom is not None:
        if metric not in scen.custom.measure:
            valid = ", ".join(sorted(scen.custom.measure))
            raise ScenarioError(f"unknown metric {metric!r}; valid metrics: {valid}")
        return custom_run(scen.custom, pl, scen.seed, run).engine.trace
    try:
        m = MetricId.parse(metric)
    except BenchError as exc:
        raise ScenarioError(str(exc)) from None
    if m is MetricId.PINGPONG:
        return PingPong(scen.pingpong_config(pl), derive_seed(scen.seed, "pingpong")).run(scen.runs).trace
    return simulate_once(m, pl, scen.seed, run)[1].engine.trace
