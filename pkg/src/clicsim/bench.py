"""Latency benchmark: canonical scenarios for the ten RTOS metrics, run sweeps
and report export."""

from __future__ import annotations

import csv
import io
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Iterable, Sequence

from .fabric import Mode
from .hart import CostModel
from .kernel import (
    Activate,
    Atomic,
    Clear,
    Compute,
    DisableAll,
    EnableAll,
    IsrCategory,
    IsrConfig,
    KernelConfig,
    Loop,
    Probe,
    TaskConfig,
    Terminate,
)
from .platform import Device, Platform
from .sim import DEFAULT_FREQ_HZ, TraceEntry, TraceLog, derive_seed


class BenchError(Exception):
    pass


class ProbeNotFound(BenchError):
    pass


class MetricId(str, Enum):
    ACT = "act"
    ACTL = "actl"
    INTDISABLE = "intdisable"
    INTENABLE = "intenable"
    ISRENTRY = "isrentry"
    ISR2ENTRY = "isr2entry"
    ISREXIT = "isrexit"
    ISTENTRY = "istentry"
    ISTEXIT = "istexit"
    TERML = "terml"
    PINGPONG = "pingpong"

    @classmethod
    def parse(cls, name: str) -> "MetricId":
        try:
            return cls(name)
        except ValueError:
            valid = ", ".join(m.value for m in cls)
            raise BenchError(f"unknown metric {name!r}; valid metrics: {valid}") from None


RTOS_METRICS = tuple(m for m in MetricId if m is not MetricId.PINGPONG)

DEFAULT_JITTER = {"arrival_phase": (0, 99), "mem_wait": (0, 6)}


@dataclass(frozen=True)
class PlatformConfig:
    name: str
    mode: Mode = Mode.CLINT_PLIC
    isr2_optimized: bool = False
    tail_chaining: bool = True
    cost: CostModel = field(default_factory=CostModel)
    jitter: dict = field(default_factory=lambda: dict(DEFAULT_JITTER))

    def __post_init__(self) -> None:
        object.__setattr__(self, "mode", Mode(self.mode))


# ---------------------------------------------------------------- scenarios


@dataclass(frozen=True)
class Match:
    """Selects trace entries by source, event and a subset of data fields."""

    src: str
    event: str
    data: tuple[tuple[str, object], ...] = ()

    def __call__(self, e: TraceEntry) -> bool:
        return e.src == self.src and e.event == self.event and all(e.data.get(k) == v for k, v in self.data)


def probe(name: str) -> Match:
    return Match("kernel", "probe", (("name", name),))


RAISE_BENCH = Match("platform", "irq_raise", (("device", "bench"),))


@dataclass(frozen=True)
class Scenario:
    tasks: tuple[TaskConfig, ...]
    isrs: tuple[IsrConfig, ...]
    start: Match
    stop: Match
    arrival: bool  # whether the bench device fires
    final_task: str | None = None  # task expected to be running at the end


WARMUP = 200
HORIZON = 2_000

# The interrupted "victim": a main loop with an occasional memory stall
# that cannot be interrupted.
VICTIM_LOOP = (Compute(40), Atomic(8, "mem_wait"), Compute(30), Atomic(4), Loop())


def _victim(priority: int = 1) -> TaskConfig:
    return TaskConfig("Low", priority, VICTIM_LOOP, autostart=True)


def _isr(category: IsrCategory, handler, level: int = 1) -> IsrConfig:
    return IsrConfig("BenchIsr", category, "bench", level, tuple(handler))


def canonical_scenario(metric: MetricId) -> Scenario:
    m = MetricId(metric)
    high_stop = TaskConfig("High", 2, (Probe("stop"), Terminate()))
    if m is MetricId.ISRENTRY:
        return Scenario((_victim(),), (_isr(IsrCategory.ISR1, [Probe("stop"), Clear("bench")]),),
                        RAISE_BENCH, probe("stop"), True, "Low")
    if m is MetricId.ISR2ENTRY:
        return Scenario((_victim(),), (_isr(IsrCategory.ISR2, [Probe("stop"), Clear("bench")]),),
                        RAISE_BENCH, probe("stop"), True, "Low")
    if m is MetricId.ISREXIT:
        isr = _isr(IsrCategory.ISR2, [Clear("bench"), Probe("start")])
        return Scenario((_victim(),), (isr,), probe("start"),
                        Match("kernel", "task_run", (("task", "Low"), ("how", "return"))), True, "Low")
    if m is MetricId.ISTENTRY:
        isr = _isr(IsrCategory.ISR2, [Clear("bench"), Activate("High"), Probe("start")])
        return Scenario((_victim(), high_stop), (isr,), probe("start"), probe("stop"), True, "Low")
    if m is MetricId.ISTEXIT:
        isr = _isr(IsrCategory.ISR2, [Clear("bench"), Activate("High")])
        high = TaskConfig("High", 2, (Compute(10), Probe("start"), Terminate()))
        return Scenario((_victim(), high), (isr,), probe("start"),
                        Match("kernel", "task_run", (("task", "Low"), ("how", "resume"))), True, "Low")
    # Service metrics: no interrupt involved.
    if m is MetricId.ACT:
        low = TaskConfig("Low", 1, (Compute(WARMUP), Probe("start"), Activate("High"), Compute(50), Loop()),
                         autostart=True)
        return Scenario((low, high_stop), (), probe("start"), probe("stop"), False)
    if m is MetricId.ACTL:
        high = TaskConfig("High", 2, (Compute(WARMUP), Probe("start"), Activate("Low"), Probe("stop"), Terminate()),
                          autostart=True)
        low = TaskConfig("Low", 1, VICTIM_LOOP)
        return Scenario((high, low), (), probe("start"), probe("stop"), False)
    if m is MetricId.TERML:
        low = TaskConfig("Low", 1, (Compute(WARMUP), Activate("High"), Probe("stop"), Compute(50), Loop()),
                         autostart=True)
        high = TaskConfig("High", 2, (Compute(10), Probe("start"), Terminate()))
        return Scenario((low, high), (), probe("start"), probe("stop"), False)
    if m is MetricId.INTDISABLE:
        low = TaskConfig("Low", 1, (Compute(WARMUP), Probe("start"), DisableAll(), Probe("stop"), EnableAll(),
                                    Compute(50), Loop()), autostart=True)
        return Scenario((low,), (), probe("start"), probe("stop"), False)
    if m is MetricId.INTENABLE:
        low = TaskConfig("Low", 1, (Compute(WARMUP), DisableAll(), Probe("start"), EnableAll(), Probe("stop"),
                                    Compute(50), Loop()), autostart=True)
        return Scenario((low,), (), probe("start"), probe("stop"), False)
    raise BenchError(f"{m.value} has no kernel scenario; use run_pingpong")


def build_platform(scenario: Scenario, config: PlatformConfig, seed: int) -> Platform:
    kcfg = KernelConfig(scenario.tasks, scenario.isrs, mode=config.mode,
                        isr2_optimized=config.isr2_optimized, tail_chaining=config.tail_chaining)
    jitter = {k: tuple(v) for k, v in config.jitter.items()}
    jitter.setdefault("mem_wait", (0, 0))
    jitter.setdefault("arrival_phase", (0, 0))
    return Platform(kcfg, [Device("bench", plic_source=1, clic_line=16)], cost=config.cost,
                    seed=seed, jitter=jitter)


def extract(trace: TraceLog | Iterable[TraceEntry], start: Match, stop: Match) -> int:
    """Cycles from the first ``start`` entry to the first ``stop`` entry after it."""
    t0 = None
    for e in trace:
        if t0 is None:
            if start(e):
                t0 = e.cycle
        elif stop(e):
            return e.cycle - t0
    missing = "start" if t0 is None else "stop"
    raise ProbeNotFound(f"{missing} probe {start if t0 is None else stop} not found in trace")


def run_seed(seed: int, metric: MetricId, run: int) -> int:
    # Independent of the platform config so that configs see paired arrivals.
    return derive_seed(seed, MetricId(metric).value, run)


def simulate_once(metric: MetricId, config: PlatformConfig, seed: int, run: int = 0) -> tuple[int, Platform]:
    scen = canonical_scenario(metric)
    p = build_platform(scen, config, run_seed(seed, metric, run))
    if scen.arrival:
        p.schedule_raise("bench", WARMUP + p.engine.jitter.draw("arrival_phase"))
    p.run(WARMUP + HORIZON)
    cycles = extract(p.engine.trace, scen.start, scen.stop)
    if scen.final_task is not None:
        cur = p.kernel.running
        if p.kernel.in_isr or cur is None or cur.name != scen.final_task:
            raise BenchError(f"{MetricId(metric).value}: scenario did not end in task {scen.final_task}")
    return cycles, p


# ---------------------------------------------------------------- reports


@dataclass
class MetricResult:
    metric: str
    config: str
    samples: list[int]
    unit: str = "cycles"
    failed: int = 0

    @property
    def runs(self) -> int:
        return len(self.samples)

    @property
    def min(self) -> int:
        return min(self.samples)

    @property
    def max(self) -> int:
        return max(self.samples)

    worst_case = max

    @property
    def avg(self) -> float:
        return sum(self.samples) / len(self.samples)

    def summary(self) -> dict:
        if not self.samples:
            return {"min": None, "avg": None, "max": None, "runs": 0, "failed": self.failed}
        return {"min": self.min, "avg": round(self.avg, 3), "max": self.max, "runs": self.runs,
                "failed": self.failed}


@dataclass
class LatencyReport:
    configs: list[str]
    results: dict[tuple[str, str], MetricResult] = field(default_factory=dict)
    freq_hz: int = DEFAULT_FREQ_HZ

    def add(self, r: MetricResult) -> None:
        self.results[(r.metric, r.config)] = r

    @property
    def metrics(self) -> list[str]:
        seen = []
        for m, _ in self.results:
            if m not in seen:
                seen.append(m)
        return seen

    def get(self, metric: str, config: str) -> MetricResult:
        return self.results[(getattr(metric, "value", metric), config)]

    def ratio(self, metric: str, config: str, base: str | None = None) -> float:
        base = base or self.configs[0]
        b = self.get(metric, base).max
        return self.get(metric, config).max / b if b else float("nan")

    def to_ns(self, r: MetricResult, value: int | float) -> int | float:
        if r.unit == "ns":
            return value
        return value * 1_000_000_000 // self.freq_hz if isinstance(value, int) else value * 1e9 / self.freq_hz

    def summary(self) -> dict:
        out: dict = {}
        for (m, c), r in self.results.items():
            out.setdefault(m, {})[c] = r.summary()
        return out

    def to_json(self) -> str:
        return json.dumps(self.summary(), indent=2, sort_keys=True) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["metric", "config", "run", "cycles", "ns"])
        for (m, c), r in self.results.items():
            for i, s in enumerate(r.samples):
                if r.unit == "ns":
                    w.writerow([m, c, i, s * self.freq_hz // 1_000_000_000, s])
                else:
                    w.writerow([m, c, i, s, self.to_ns(r, s)])
        return buf.getvalue()

    def table(self) -> str:
        """Worst-case table: one row per metric, one column per config, plus ratios."""
        head = ["metric"] + self.configs + [f"{c}/{self.configs[0]}" for c in self.configs[1:]]
        rows = [head]
        for m in self.metrics:
            row = [m]
            for c in self.configs:
                r = self.results.get((m, c))
                row.append("-" if r is None or not r.samples else str(r.max))
            for c in self.configs[1:]:
                try:
                    row.append(f"{self.ratio(m, c):.3f}")
                except (KeyError, ValueError):
                    row.append("-")
            rows.append(row)
        widths = [max(len(r[i]) for r in rows) for i in range(len(head))]
        return "\n".join("  ".join(v.ljust(w) for v, w in zip(r, widths)).rstrip() for r in rows) + "\n"

    def to_gnuplot(self) -> str:
        """Whitespace-separated worst cases, usable with ``plot ... using 2:xtic(1)``."""
        lines = ["# metric " + " ".join(self.configs)]
        for m in self.metrics:
            vals = []
            for c in self.configs:
                r = self.results.get((m, c))
                vals.append(str(r.max) if r is not None and r.samples else "NaN")
            lines.append(f"{m} " + " ".join(vals))
        return "\n".join(lines) + "\n"


# ---------------------------------------------------------------- runners


def run_metric(metric: MetricId | str, config: PlatformConfig, runs: int = 100, seed: int = 0) -> MetricResult:
    m = MetricId(metric)
    if runs < 1:
        raise BenchError("runs must be >= 1")
    if m is MetricId.PINGPONG:
        raise BenchError("pingpong is run with run_pingpong")
    samples = [simulate_once(m, config, seed, i)[0] for i in range(runs)]
    return MetricResult(m.value, config.name, samples)


def _job(args) -> MetricResult:
    metric, config, runs, seed = args
    return run_metric(metric, config, runs, seed)


def run_suite(
    configs: Sequence[PlatformConfig],
    runs: int = 100,
    seed: int = 0,
    metrics: Sequence[MetricId | str] = RTOS_METRICS,
    jobs: int = 1,
) -> LatencyReport:
    if not configs:
        raise BenchError("run_suite needs at least one platform config")
    names = [c.name for c in configs]
    if len(set(names)) != len(names):
        raise BenchError("platform config names must be unique")
    metrics = [MetricId(m) for m in metrics]
    work = [(m, c, runs, seed) for m in metrics for c in configs]
    if jobs > 1 and len(work) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_job, work))  # map keeps submission order
    else:
        results = [_job(w) for w in work]
    report = LatencyReport(names)
    for r in results:
        report.add(r)
    return report


def default_configs(cost: CostModel | None = None, jitter: dict | None = None) -> list[PlatformConfig]:
    cost = cost or CostModel()
    jitter = dict(DEFAULT_JITTER if jitter is None else jitter)
    return [
        PlatformConfig("CLINT_PLIC", Mode.CLINT_PLIC, cost=cost, jitter=jitter),
        PlatformConfig("CLIC", Mode.CLIC, cost=cost, jitter=jitter),
    ]


def with_name(config: PlatformConfig, name: str, **changes) -> PlatformConfig:
    return replace(config, name=name, **changes)

