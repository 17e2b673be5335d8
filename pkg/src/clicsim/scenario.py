"""Scenario files: TOML (or JSON) with sections bench, cost_model, interrupt,
kernel, xrce and platforms."""

from __future__ import annotations

import copy
import json
import sys
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .bench import DEFAULT_JITTER, RTOS_METRICS, MetricId, PlatformConfig
from .fabric import Mode
from .hart import CostModel
from .kernel import (
    ConfigError,
    IsrCategory,
    IsrConfig,
    Isr2Dispatch,
    KernelConfig,
    Probe,
    TaskConfig,
    parse_body,
)
from .pingpong import PingPongConfig
from .platform import Device

BUNDLED = ("clint_vs_clic", "isr2_optimization", "pingpong_paper")


class ScenarioError(Exception):
    """Parse or validation failure; exit code 2 in the CLI."""


SECTIONS = {"bench", "cost_model", "interrupt", "kernel", "xrce", "platforms"}
BENCH_KEYS = {"seed", "runs", "metrics", "jitter", "horizon", "measure"}
INTERRUPT_KEYS = {"mode", "n_lines", "legacy_lines", "devices", "stimuli"}
KERNEL_KEYS = {"isr2_optimized", "tail_chaining", "tasks", "isrs"}
TASK_KEYS = {"name", "priority", "body", "max_activations", "autostart"}
ISR_KEYS = {"name", "category", "line", "level", "dispatch", "priority", "shv", "handler"}
DEVICE_KEYS = {"name", "plic_source", "clic_line"}
STIMULUS_KEYS = {"device", "at", "clear_at"}
PLATFORM_KEYS = {"name", "mode", "isr2_optimized", "tail_chaining"}
XRCE_KEYS = {"spin_period_us", "hop_cost_us", "hop_jitter_us", "spin_jitter_us", "think_us", "timeout_us",
             "ring_slots", "slot_size", "spin_cycles"}


@dataclass(frozen=True)
class Stimulus:
    device: str
    at: int
    clear_at: int | None = None


@dataclass(frozen=True)
class CustomScenario:
    """A user-defined kernel configuration measured between probe pairs."""

    tasks: tuple[TaskConfig, ...]
    isrs: tuple[IsrConfig, ...]
    devices: tuple[Device, ...]
    stimuli: tuple[Stimulus, ...]
    measure: dict[str, tuple[str, str]]
    horizon: int
    n_lines: int = 256
    legacy_lines: dict[str, int] | None = None


@dataclass
class Scenario:
    seed: int
    runs: int
    metrics: list[str]
    platforms: list[PlatformConfig]
    cost: CostModel
    xrce: dict = field(default_factory=dict)
    custom: CustomScenario | None = None
    source: str = "<scenario>"
    raw: dict = field(default_factory=dict)

    def pingpong_config(self, platform: PlatformConfig) -> PingPongConfig:
        return PingPongConfig(mode=platform.mode, isr2_optimized=platform.isr2_optimized, cost=self.cost,
                              **self.xrce)


# ---------------------------------------------------------------- parsing


def parse_text(text: str, fmt: str = "toml", source: str = "<scenario>") -> dict:
    try:
        if fmt == "json":
            data = json.loads(text)
        else:
            data = tomllib.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"{source}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ScenarioError(f"{source}: {exc}") from None
    if not isinstance(data, dict):
        raise ScenarioError(f"{source}: top level must be a table")
    return data


def read_file(path: str | Path) -> dict:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ScenarioError(f"cannot read {path}: {exc.strerror}") from None
    return parse_text(text, "json" if path.suffix.lower() == ".json" else "toml", str(path))


def bundled_path(name: str):
    return resources.files("clicsim").joinpath("scenarios", f"{name}.toml")


def load(path_or_name: str | Path, overrides: list[str] | None = None, seed: int | None = None) -> Scenario:
    """Load a scenario file, or a bundled scenario by name."""
    p = Path(path_or_name)
    if not p.exists() and str(path_or_name) in BUNDLED:
        ref = bundled_path(str(path_or_name))
        data = parse_text(ref.read_text(encoding="utf-8"), "toml", str(path_or_name))
        source = str(path_or_name)
    else:
        data = read_file(p)
        source = str(p)
    data = apply_overrides(data, overrides or [])
    if seed is not None:
        data.setdefault("bench", {})["seed"] = seed
    return validate(data, source)


def _parse_value(text: str) -> Any:
    try:
        return tomllib.loads(f"v = {text}")["v"]
    except tomllib.TOMLDecodeError:
        return text


def apply_overrides(data: dict, overrides: list[str]) -> dict:
    """Apply ``section.key=value`` overrides; values use TOML syntax, bare words are strings."""
    data = copy.deepcopy(data)
    for item in overrides:
        key, sep, value = item.partition("=")
        if not sep or not key.strip():
            raise ScenarioError(f"override {item!r} is not of the form key=value")
        parts = key.strip().split(".")
        node = data
        for part in parts[:-1]:
            nxt = node.setdefault(part, {})
            if not isinstance(nxt, dict):
                raise ScenarioError(f"override {item!r}: {part!r} is not a table")
            node = nxt
        node[parts[-1]] = _parse_value(value.strip())
    return data


# ---------------------------------------------------------------- validation


def _table(data: Any, where: str) -> dict:
    if not isinstance(data, dict):
        raise ScenarioError(f"{where}: expected a table")
    return data


def _keys(data: dict, allowed: set[str], where: str) -> None:
    for k in data:
        if k not in allowed:
            hint = ", ".join(sorted(allowed))
            raise ScenarioError(f"{where}: unknown key {k!r} (allowed: {hint})")


def _int(value: Any, where: str, lo: int | None = 0) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ScenarioError(f"{where}: expected an integer, got {value!r}")
    if lo is not None and value < lo:
        raise ScenarioError(f"{where}: must be >= {lo}")
    return value


def _bool(value: Any, where: str) -> bool:
    if not isinstance(value, bool):
        raise ScenarioError(f"{where}: expected true or false, got {value!r}")
    return value


def _str(value: Any, where: str) -> str:
    if not isinstance(value, str) or not value:
        raise ScenarioError(f"{where}: expected a non-empty string")
    return value


def _enum(cls, value: Any, where: str):
    try:
        return cls(value)
    except ValueError:
        valid = ", ".join(m.value for m in cls)
        raise ScenarioError(f"{where}: {value!r} is not one of {valid}") from None


def _list(value: Any, where: str) -> list:
    if not isinstance(value, list):
        raise ScenarioError(f"{where}: expected a list")
    return value


def validate(data: dict, source: str = "<scenario>") -> Scenario:
    _keys(data, SECTIONS, source)
    bench = _table(data.get("bench", {}), "bench")
    _keys(bench, BENCH_KEYS, "bench")
    if "seed" not in bench:
        raise ScenarioError("bench.seed is required for reproducibility")
    seed = _int(bench["seed"], "bench.seed")
    if seed >= 2**64:
        raise ScenarioError("bench.seed must fit in 64 bits")
    runs = _int(bench.get("runs", 100), "bench.runs", 1)

    try:
        cost = CostModel.from_dict(_table(data.get("cost_model", {}), "cost_model"))
    except (TypeError, ValueError) as exc:
        raise ScenarioError(f"cost_model: {exc}") from None

    jitter = dict(DEFAULT_JITTER)
    for ch, bounds in _table(bench.get("jitter", {}), "bench.jitter").items():
        b = _list(bounds, f"bench.jitter.{ch}")
        if len(b) != 2:
            raise ScenarioError(f"bench.jitter.{ch}: expected [lo, hi]")
        lo, hi = (_int(v, f"bench.jitter.{ch}") for v in b)
        if lo > hi:
            raise ScenarioError(f"bench.jitter.{ch}: lo > hi")
        jitter[ch] = (lo, hi)

    intr = _table(data.get("interrupt", {}), "interrupt")
    _keys(intr, INTERRUPT_KEYS, "interrupt")
    mode = _enum(Mode, intr.get("mode", "CLINT_PLIC"), "interrupt.mode")
    kern = _table(data.get("kernel", {}), "kernel")
    _keys(kern, KERNEL_KEYS, "kernel")
    isr2_opt = _bool(kern.get("isr2_optimized", False), "kernel.isr2_optimized")
    tail = _bool(kern.get("tail_chaining", True), "kernel.tail_chaining")

    platforms = []
    for i, pl in enumerate(_list(data.get("platforms", []), "platforms")):
        where = f"platforms[{i}]"
        pl = _table(pl, where)
        _keys(pl, PLATFORM_KEYS, where)
        platforms.append(PlatformConfig(
            _str(pl.get("name"), f"{where}.name"),
            _enum(Mode, pl.get("mode", mode.value), f"{where}.mode"),
            _bool(pl.get("isr2_optimized", isr2_opt), f"{where}.isr2_optimized"),
            _bool(pl.get("tail_chaining", tail), f"{where}.tail_chaining"),
            cost, jitter,
        ))
    if not platforms:
        platforms.append(PlatformConfig(mode.value, mode, isr2_opt, tail, cost, jitter))
    names = [p.name for p in platforms]
    if len(set(names)) != len(names):
        raise ScenarioError("platforms: duplicate platform names")

    xrce = _table(data.get("xrce", {}), "xrce")
    _keys(xrce, XRCE_KEYS, "xrce")
    xrce = {k: _int(v, f"xrce.{k}") for k, v in xrce.items()}
    try:
        PingPongConfig(**xrce)
    except ValueError as exc:
        raise ScenarioError(f"xrce: {exc}") from None

    custom = None
    if "tasks" in kern or "isrs" in kern:
        custom = _custom(kern, intr, bench, platforms)
        default_metrics = list(custom.measure)
    else:
        for k in ("devices", "stimuli"):
            if k in intr:
                raise ScenarioError(f"interrupt.{k} requires kernel.tasks")
        if "measure" in bench:
            raise ScenarioError("bench.measure requires kernel.tasks")
        default_metrics = [m.value for m in RTOS_METRICS]

    metrics = [str(m) for m in _list(bench.get("metrics", default_metrics), "bench.metrics")]
    if not metrics:
        raise ScenarioError("bench.metrics: at least one metric is required")
    valid = set(custom.measure) if custom else {m.value for m in MetricId}
    for m in metrics:
        if m not in valid:
            raise ScenarioError(f"bench.metrics: unknown metric {m!r}; valid metrics: {', '.join(sorted(valid))}")
    if len(set(metrics)) != len(metrics):
        raise ScenarioError("bench.metrics: duplicate metric")
    return Scenario(seed, runs, metrics, platforms, cost, xrce, custom, source, data)


def _custom(kern: dict, intr: dict, bench: dict, platforms: list[PlatformConfig]) -> CustomScenario:
    tasks = []
    for i, t in enumerate(_list(kern.get("tasks", []), "kernel.tasks")):
        where = f"kernel.tasks[{i}]"
        t = _table(t, where)
        _keys(t, TASK_KEYS, where)
        try:
            body = parse_body(_list(t.get("body", []), f"{where}.body"))
        except ConfigError as exc:
            raise ScenarioError(f"{where}.body: {exc}") from None
        tasks.append(TaskConfig(_str(t.get("name"), f"{where}.name"), _int(t.get("priority"), f"{where}.priority"),
                                body, _int(t.get("max_activations", 1), f"{where}.max_activations", 1),
                                _bool(t.get("autostart", False), f"{where}.autostart")))
    if not tasks:
        raise ScenarioError("kernel.tasks: at least one task is required")
    isrs = []
    for i, s in enumerate(_list(kern.get("isrs", []), "kernel.isrs")):
        where = f"kernel.isrs[{i}]"
        s = _table(s, where)
        _keys(s, ISR_KEYS, where)
        try:
            handler = parse_body(_list(s.get("handler", []), f"{where}.handler"))
        except ConfigError as exc:
            raise ScenarioError(f"{where}.handler: {exc}") from None
        isrs.append(IsrConfig(
            _str(s.get("name"), f"{where}.name"),
            _enum(IsrCategory, s.get("category", "ISR2"), f"{where}.category"),
            _str(s.get("line"), f"{where}.line"),
            _int(s.get("level", 1), f"{where}.level", 1),
            handler,
            _enum(Isr2Dispatch, s.get("dispatch", "AS_TASK"), f"{where}.dispatch"),
            _int(s.get("priority", 0), f"{where}.priority"),
            _bool(s.get("shv", True), f"{where}.shv"),
        ))
    devices = []
    for i, d in enumerate(_list(intr.get("devices", []), "interrupt.devices")):
        where = f"interrupt.devices[{i}]"
        d = _table(d, where)
        _keys(d, DEVICE_KEYS, where)
        devices.append(Device(
            _str(d.get("name"), f"{where}.name"),
            _int(d["plic_source"], f"{where}.plic_source", 1) if "plic_source" in d else None,
            _int(d["clic_line"], f"{where}.clic_line") if "clic_line" in d else None,
        ))
    dev_names = {d.name for d in devices} | {"mtip", "msip"}
    stimuli = []
    for i, st in enumerate(_list(intr.get("stimuli", []), "interrupt.stimuli")):
        where = f"interrupt.stimuli[{i}]"
        st = _table(st, where)
        _keys(st, STIMULUS_KEYS, where)
        dev = _str(st.get("device"), f"{where}.device")
        if dev not in dev_names - {"mtip"}:
            raise ScenarioError(f"{where}.device: unknown device {dev!r}")
        at = _int(st.get("at"), f"{where}.at")
        clear_at = _int(st["clear_at"], f"{where}.clear_at") if "clear_at" in st else None
        if clear_at is not None and clear_at < at:
            raise ScenarioError(f"{where}.clear_at: before at")
        stimuli.append(Stimulus(dev, at, clear_at))
    for s in isrs:
        if s.device not in dev_names:
            raise ScenarioError(f"kernel.isrs: ISR {s.name} uses unknown line {s.device!r}")
    probes = {a.name for t in tasks for a in t.body if isinstance(a, Probe)}
    probes |= {a.name for s in isrs for a in s.handler if isinstance(a, Probe)}
    measure = {}
    for name, pair in _table(bench.get("measure", {}), "bench.measure").items():
        where = f"bench.measure.{name}"
        pair = _table(pair, where)
        _keys(pair, {"start", "stop"}, where)
        for k in ("start", "stop"):
            if pair.get(k) not in probes:
                raise ScenarioError(f"{where}.{k}: no probe named {pair.get(k)!r} in any task or ISR")
        measure[name] = (pair["start"], pair["stop"])
    if not measure:
        raise ScenarioError("bench.measure: a custom kernel needs at least one probe pair")
    legacy = intr.get("legacy_lines")
    if legacy is not None:
        legacy = {str(k): _int(v, f"interrupt.legacy_lines.{k}") for k, v in _table(legacy, "interrupt.legacy_lines").items()}
    scen = CustomScenario(tuple(tasks), tuple(isrs), tuple(devices), tuple(stimuli), measure,
                          _int(bench.get("horizon", 10_000), "bench.horizon", 1),
                          _int(intr.get("n_lines", 256), "interrupt.n_lines", 1), legacy)
    # Let the kernel and platform catch the remaining contract violations now.
    for pl in platforms:
        try:
            KernelConfig(scen.tasks, scen.isrs, mode=pl.mode)
        except ConfigError as exc:
            raise ScenarioError(f"kernel: {exc}") from None
    return scen
