"""Experiment files: JSON documents describing one simulation/sweep/comparison.

An experiment file has up to five sections: ``simulation`` (fleet and engine
parameters), ``policy`` (a policy id plus its parameters), ``workload``
(either an inline generator spec or paths to trace files), and optionally
``sweep`` and ``compare`` directives.  Dotted overrides such as
``policy.u_up=0.8`` are applied to the raw document before validation, and
the fully resolved document is what commands echo into their output
directory.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from typing import Any, Optional

from .engine import EngineError, FleetMachine, SimulationConfig
from .model import MachineCapacity, PowerModel, UtilizationWeights
from .workload import (
    VmRequest,
    WorkloadError,
    WorkloadProfile,
    WorkloadSpec,
    generate_workload,
    load_trace_files,
)


class ConfigError(ValueError):
    """Raised for malformed or inconsistent experiment configuration."""


def _require(mapping: dict, key: str, context: str) -> Any:
    if key not in mapping:
        raise ConfigError(f"{context}: missing required key {key!r}")
    return mapping[key]


def _expect_mapping(value: Any, context: str) -> dict:
    if not isinstance(value, dict):
        raise ConfigError(f"{context}: expected a mapping, got {type(value).__name__}")
    return value


def load_raw_config(path: str) -> dict:
    """Read a JSON experiment file.  I/O errors propagate as OSError."""
    with open(path) as fh:
        text = fh.read()
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from None
    return _expect_mapping(raw, path)


def parse_override(expr: str) -> tuple[list[str], Any]:
    """Parse one ``dotted.path=value`` override; values are JSON literals."""
    key, sep, raw_value = expr.partition("=")
    if not sep or not key:
        raise ConfigError(f"override {expr!r} is not of the form KEY=VALUE")
    try:
        value = json.loads(raw_value)
    except json.JSONDecodeError:
        value = raw_value
    return key.split("."), value


def apply_overrides(raw: dict, overrides: list[str]) -> dict:
    """Apply dotted-path overrides onto a raw config document."""
    for expr in overrides:
        path, value = parse_override(expr)
        node = raw
        for part in path[:-1]:
            nxt = node.get(part)
            if nxt is None:
                nxt = node[part] = {}
            elif not isinstance(nxt, dict):
                raise ConfigError(
                    f"override {expr!r}: {part!r} is not a mapping and cannot be descended"
                )
            node = nxt
        node[path[-1]] = value
    return raw


def _parse_capacity(raw: Any, context: str) -> MachineCapacity:
    raw = _expect_mapping(raw, context)
    try:
        return MachineCapacity(
            cpu=float(_require(raw, "cpu", context)),
            mem=float(_require(raw, "mem", context)),
            disk=float(_require(raw, "disk", context)),
            bw=float(_require(raw, "bw", context)),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{context}: {exc}") from None


def _parse_weights(raw: Any, context: str) -> UtilizationWeights:
    raw = _expect_mapping(raw, context)
    try:
        return UtilizationWeights(**{k: float(v) for k, v in raw.items()})
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{context}: {exc}") from None


def build_simulation_config(raw: dict) -> SimulationConfig:
    section = _expect_mapping(_require(raw, "simulation", "config"), "simulation")
    fleet_raw = _require(section, "fleet", "simulation")
    if not isinstance(fleet_raw, list) or not fleet_raw:
        raise ConfigError("simulation.fleet: expected a non-empty list of machine groups")
    fleet: list[FleetMachine] = []
    for index, group in enumerate(fleet_raw):
        context = f"simulation.fleet[{index}]"
        group = _expect_mapping(group, context)
        count = int(group.get("count", 1))
        if count < 1:
            raise ConfigError(f"{context}: count must be >= 1")
        capacity = _parse_capacity(_require(group, "capacity", context), f"{context}.capacity")
        try:
            peak = float(_require(group, "peak_power_watts", context))
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{context}: {exc}") from None
        fleet.extend(FleetMachine(capacity, peak) for _ in range(count))

    power_raw = section.get("power_model", {})
    power_raw = _expect_mapping(power_raw, "simulation.power_model")
    try:
        power = PowerModel(
            idle_fraction=float(power_raw.get("idle_fraction", 0.5)),
            standby_watts=float(power_raw.get("standby_watts", 0.0)),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"simulation.power_model: {exc}") from None

    energy_weights = UtilizationWeights()
    if "energy_weights" in section:
        energy_weights = _parse_weights(section["energy_weights"], "simulation.energy_weights")

    try:
        return SimulationConfig(
            fleet=tuple(fleet),
            duration_ticks=int(_require(section, "duration_ticks", "simulation")),
            tick_length_seconds=float(section.get("tick_length_seconds", 60.0)),
            initial_running_count=int(section.get("initial_running_count", 1)),
            power_model=power,
            migration_cost_ticks=int(section.get("migration_cost_ticks", 0)),
            energy_weights=energy_weights,
        )
    except (EngineError, TypeError, ValueError) as exc:
        raise ConfigError(f"simulation: {exc}") from None


def build_workload_spec(raw_spec: dict, seed_override: Optional[int] = None) -> WorkloadSpec:
    spec = dict(_expect_mapping(raw_spec, "workload.spec"))
    if seed_override is not None:
        spec["seed"] = seed_override
    if "profile" in spec:
        try:
            spec["profile"] = WorkloadProfile(spec["profile"])
        except ValueError:
            raise ConfigError(
                f"workload.spec.profile: unknown profile {spec['profile']!r}; known: "
                + ", ".join(p.value for p in WorkloadProfile)
            ) from None
    if "reference_capacity" in spec:
        spec["reference_capacity"] = _parse_capacity(
            spec["reference_capacity"], "workload.spec.reference_capacity"
        )
    try:
        return WorkloadSpec(**spec)
    except (TypeError, WorkloadError) as exc:
        raise ConfigError(f"workload.spec: {exc}") from None


@dataclass(slots=True)
class Experiment:
    """A fully validated experiment: engine config plus policy and workload."""

    raw: dict
    sim_config: SimulationConfig
    policy_spec: Any
    workload_section: dict
    base_dir: str
    sweep: Optional[dict] = None
    compare: Optional[dict] = None
    output_dir: Optional[str] = None
    _workload_cache: Optional[list[VmRequest]] = field(default=None, repr=False)

    def materialize_workload(self, seed_override: Optional[int] = None) -> list[VmRequest]:
        if self._workload_cache is not None:
            return self._workload_cache
        section = self.workload_section
        if "spec" in section:
            spec = build_workload_spec(section["spec"], seed_override)
            workload = generate_workload(spec)
        elif "trace" in section and "meta" in section:
            trace = os.path.join(self.base_dir, section["trace"])
            meta = os.path.join(self.base_dir, section["meta"])
            try:
                workload = load_trace_files(trace, meta)
            except WorkloadError as exc:
                raise ConfigError(str(exc)) from None
        else:
            raise ConfigError(
                "workload: needs either a 'spec' mapping or 'trace'+'meta' file paths"
            )
        self._workload_cache = workload
        return workload


def build_experiment(raw: dict, base_dir: str = ".") -> Experiment:
    sim_config = build_simulation_config(raw)
    policy_spec = _require(raw, "policy", "config")
    if not isinstance(policy_spec, (dict, str)):
        raise ConfigError("policy: expected a mapping or a policy id string")
    workload_section = _expect_mapping(_require(raw, "workload", "config"), "workload")
    sweep = raw.get("sweep")
    if sweep is not None:
        sweep = _expect_mapping(sweep, "sweep")
        _require(sweep, "parameter", "sweep")
    compare = raw.get("compare")
    if compare is not None:
        compare = _expect_mapping(compare, "compare")
        policies = _require(compare, "policies", "compare")
        if not isinstance(policies, list) or len(policies) < 2:
            raise ConfigError("compare.policies: expected a list of at least two policies")
    output_dir = raw.get("output_dir")
    return Experiment(
        raw=raw,
        sim_config=sim_config,
        policy_spec=policy_spec,
        workload_section=workload_section,
        base_dir=base_dir,
        sweep=sweep,
        compare=compare,
        output_dir=output_dir,
    )


def effective_config_json(raw: dict) -> str:
    """Canonical serialization of the resolved config for output metadata."""
    return json.dumps(raw, sort_keys=True, indent=2) + "\n"
