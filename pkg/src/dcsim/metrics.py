"""Experiment harness: parameter sweeps, policy comparisons and file output.

Every sweep point runs one full simulation against the *same* workload, so
curves reflect only the swept parameter.  CSV output carries a versioned
schema comment and uses round-trip float formatting; writing, reading and
re-writing a file reproduces it byte for byte.
"""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Optional, Union

from .engine import SimulationConfig, SimulationReport, run_simulation
from .policies import build_policy
from .workload import VmRequest

log = logging.getLogger("dcsim.metrics")

#: Default value grids for the swept policy parameters (step 0.05).
DEFAULT_GRIDS: dict[str, list[float]] = {
    "u_up": [round(0.25 + 0.05 * i, 2) for i in range(16)],
    "u_down": [round(0.0 + 0.05 * i, 2) for i in range(9)],
    "buffer": [round(0.05 + 0.05 * i, 2) for i in range(10)],
    "similarity_threshold": [round(0.05 * i, 2) for i in range(21)],
}

SWEEP_SCHEMA = "dcsim sweep v1"
COMPARISON_SCHEMA = "dcsim comparison v1"
RUN_SCHEMA = "dcsim run v1"


@dataclass(frozen=True, slots=True)
class SweepPoint:
    """Aggregates of one simulation at one parameter value."""

    value: Union[float, str]
    energy_kwh: float
    sla_violations: int
    mean_running_machines: float
    migrations: int


@dataclass(slots=True)
class SweepResult:
    """Outcome of sweeping one parameter over a grid."""

    parameter: str
    points: list[SweepPoint] = field(default_factory=list)
    skipped: list[tuple[Union[float, str], str]] = field(default_factory=list)

    def values(self) -> list[Union[float, str]]:
        return [p.value for p in self.points]

    def energies(self) -> list[float]:
        return [p.energy_kwh for p in self.points]

    def violations(self) -> list[int]:
        return [p.sla_violations for p in self.points]


@dataclass(frozen=True, slots=True)
class ComparisonRow:
    """One policy's aggregates plus savings relative to the baseline row."""

    policy: str
    energy_kwh: float
    sla_violations: int
    migrations: int
    mean_running_machines: float
    energy_savings_pct: Optional[float]
    violation_reduction_pct: Optional[float]


@dataclass(slots=True)
class ComparisonResult:
    baseline: str
    rows: list[ComparisonRow] = field(default_factory=list)

    def row(self, policy: str) -> ComparisonRow:
        for row in self.rows:
            if row.policy == policy:
                return row
        raise KeyError(policy)


def _derive_policy_spec(
    policy_spec: Union[dict[str, Any], str], parameter: str, value: Union[float, str]
) -> Union[dict[str, Any], str]:
    if parameter == "policy":
        return value if isinstance(value, (str, dict)) else str(value)
    spec = {"id": policy_spec} if isinstance(policy_spec, str) else dict(policy_spec)
    spec[parameter] = value
    return spec


def _run_point(
    sim_config: SimulationConfig,
    workload: list[VmRequest],
    policy_spec: Union[dict[str, Any], str],
) -> SimulationReport:
    # Policies are stateful; every run gets a freshly built instance.
    return run_simulation(sim_config, workload, build_policy(policy_spec))


def _sweep_worker(payload) -> tuple[int, Optional[SweepPoint], Optional[str]]:
    index, sim_config, workload, spec, value = payload
    try:
        report = _run_point(sim_config, workload, spec)
    except ValueError as exc:
        return index, None, str(exc)
    return (
        index,
        SweepPoint(
            value=value,
            energy_kwh=report.total_energy_kwh,
            sla_violations=report.sla_violation_count,
            mean_running_machines=report.mean_running_machines,
            migrations=report.migration_count,
        ),
        None,
    )


def run_sweep(
    sim_config: SimulationConfig,
    workload: list[VmRequest],
    policy_spec: Union[dict[str, Any], str],
    parameter: str,
    values: Optional[list] = None,
    jobs: int = 1,
) -> SweepResult:
    """Run one simulation per parameter value against a shared workload.

    ``values`` defaults to the standard grid for the parameter.  Points
    whose configuration is invalid (e.g. a ``u_up`` too close to ``u_down``)
    are skipped with a warning and recorded in ``result.skipped``.
    """
    if values is None:
        if parameter not in DEFAULT_GRIDS:
            raise ValueError(
                f"no default grid for parameter {parameter!r}; pass values explicitly"
            )
        values = DEFAULT_GRIDS[parameter]
    if not values:
        raise ValueError("sweep needs at least one value")
    if len(set(map(repr, values))) != len(values):
        raise ValueError("sweep values must be unique")
    numeric = all(isinstance(v, (int, float)) for v in values)
    if numeric:
        values = sorted(values)

    payloads = [
        (i, sim_config, workload, _derive_policy_spec(policy_spec, parameter, v), v)
        for i, v in enumerate(values)
    ]
    if jobs > 1 and len(payloads) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(_sweep_worker, payloads))
    else:
        outcomes = [_sweep_worker(p) for p in payloads]
    outcomes.sort(key=lambda item: item[0])

    result = SweepResult(parameter=parameter)
    for index, point, error in outcomes:
        if point is not None:
            result.points.append(point)
        else:
            value = values[index]
            log.warning("skipping %s=%r: %s", parameter, value, error)
            result.skipped.append((value, error))
    return result


def compare_policies(
    sim_config: SimulationConfig,
    workload: list[VmRequest],
    policy_specs: list[Union[dict[str, Any], str]],
    baseline: Optional[str] = None,
    jobs: int = 1,
) -> ComparisonResult:
    """Run each policy on the same inputs and report savings vs a baseline.

    Savings are ``(baseline - ours) / baseline * 100``; a policy compared
    against itself reports 0.  When the baseline count is zero the
    percentage is undefined and reported as ``None``.
    """
    names = []
    specs = []
    for spec in policy_specs:
        if isinstance(spec, dict):
            spec = dict(spec)
            label = spec.pop("label", None) or spec.get("id", "policy")
        else:
            label = spec
        if label in names:
            raise ValueError(f"duplicate policy label {label!r}; add distinct 'label' keys")
        names.append(label)
        specs.append(spec)
    if baseline is None:
        baseline = names[0]
    if baseline not in names:
        raise ValueError(f"baseline {baseline!r} is not among the compared policies")

    payloads = list(enumerate(zip(names, specs)))
    if jobs > 1 and len(payloads) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            reports = list(
                pool.map(_compare_worker, [(i, sim_config, workload, s) for i, (_, s) in payloads])
            )
    else:
        reports = [_compare_worker((i, sim_config, workload, s)) for i, (_, s) in payloads]
    reports.sort(key=lambda item: item[0])
    by_name = {names[i]: report for i, report in reports}

    base = by_name[baseline]
    result = ComparisonResult(baseline=baseline)
    for name in names:
        report = by_name[name]
        result.rows.append(
            ComparisonRow(
                policy=name,
                energy_kwh=report.total_energy_kwh,
                sla_violations=report.sla_violation_count,
                migrations=report.migration_count,
                mean_running_machines=report.mean_running_machines,
                energy_savings_pct=_savings(base.total_energy_kwh, report.total_energy_kwh),
                violation_reduction_pct=_savings(
                    float(base.sla_violation_count), float(report.sla_violation_count)
                ),
            )
        )
    return result


def _compare_worker(payload) -> tuple[int, SimulationReport]:
    index, sim_config, workload, spec = payload
    return index, _run_point(sim_config, workload, spec)


def _savings(baseline: float, ours: float) -> Optional[float]:
    if baseline == 0.0:
        return 0.0 if ours == 0.0 else None
    return (baseline - ours) / baseline * 100.0


# ---------------------------------------------------------------------------
# File output
# ---------------------------------------------------------------------------


def _fmt(value) -> str:
    if isinstance(value, float):
        return repr(value)
    if value is None:
        return ""
    return str(value)


def write_csv(result, path: str) -> None:
    """Write a sweep, comparison or run report as versioned CSV."""
    if isinstance(result, SweepResult):
        lines = [f"# {SWEEP_SCHEMA}", f"# parameter: {result.parameter}"]
        for value, reason in result.skipped:
            lines.append(f"# skipped: {_fmt(value)}: {reason}")
        lines.append("value,energy_kwh,sla_violations,mean_running_machines,migrations")
        for p in result.points:
            lines.append(
                f"{_fmt(p.value)},{_fmt(p.energy_kwh)},{p.sla_violations},"
                f"{_fmt(p.mean_running_machines)},{p.migrations}"
            )
    elif isinstance(result, ComparisonResult):
        lines = [f"# {COMPARISON_SCHEMA}", f"# baseline: {result.baseline}"]
        lines.append(
            "policy,energy_kwh,sla_violations,migrations,mean_running_machines,"
            "energy_savings_pct,violation_reduction_pct"
        )
        for row in result.rows:
            lines.append(
                f"{row.policy},{_fmt(row.energy_kwh)},{row.sla_violations},"
                f"{row.migrations},{_fmt(row.mean_running_machines)},"
                f"{_fmt(row.energy_savings_pct)},{_fmt(row.violation_reduction_pct)}"
            )
    elif isinstance(result, SimulationReport):
        lines = [f"# {RUN_SCHEMA}"]
        lines.append("tick,running_machines,total_power_watts,sla_violations")
        for tick in range(len(result.running_machines)):
            lines.append(
                f"{tick},{result.running_machines[tick]},"
                f"{_fmt(result.total_power_watts[tick])},{result.violations_per_tick[tick]}"
            )
    else:
        raise TypeError(f"cannot serialize {type(result).__name__} to CSV")
    with open(path, "w", newline="") as fh:
        fh.write("\n".join(lines) + "\n")


def read_sweep_csv(path: str) -> SweepResult:
    """Read a sweep CSV written by :func:`write_csv` (exact round trip)."""
    with open(path, newline="") as fh:
        lines = [line.rstrip("\n") for line in fh]
    if not lines or lines[0] != f"# {SWEEP_SCHEMA}":
        raise ValueError(f"{path}: not a {SWEEP_SCHEMA} file")
    if len(lines) < 2 or not lines[1].startswith("# parameter: "):
        raise ValueError(f"{path}: missing parameter comment")
    result = SweepResult(parameter=lines[1][len("# parameter: "):])
    body_start = 2
    for line in lines[2:]:
        if not line.startswith("# skipped: "):
            break
        body_start += 1
        payload = line[len("# skipped: "):]
        value_raw, _, reason = payload.partition(": ")
        result.skipped.append((_parse_value(value_raw), reason))
    header = lines[body_start] if body_start < len(lines) else ""
    if header != "value,energy_kwh,sla_violations,mean_running_machines,migrations":
        raise ValueError(f"{path}: unexpected header {header!r}")
    for line in lines[body_start + 1 :]:
        if not line:
            continue
        parts = line.split(",")
        if len(parts) != 5:
            raise ValueError(f"{path}: malformed row {line!r}")
        result.points.append(
            SweepPoint(
                value=_parse_value(parts[0]),
                energy_kwh=float(parts[1]),
                sla_violations=int(parts[2]),
                mean_running_machines=float(parts[3]),
                migrations=int(parts[4]),
            )
        )
    return result


def _parse_value(raw: str) -> Union[float, str]:
    try:
        return float(raw)
    except ValueError:
        return raw


def write_plot_data(result, path_prefix: str) -> list[str]:
    """Write gnuplot-style ``x y`` series files; returns the paths written."""
    paths = []
    if isinstance(result, SweepResult):
        series = [
            ("energy", [(p.value, p.energy_kwh) for p in result.points], "energy_kwh"),
            ("violations", [(p.value, p.sla_violations) for p in result.points], "sla_violations"),
            (
                "machines",
                [(p.value, p.mean_running_machines) for p in result.points],
                "mean_running_machines",
            ),
        ]
        for suffix, rows, ylabel in series:
            path = f"{path_prefix}_{suffix}.dat"
            lines = [f"# x: {result.parameter}", f"# y: {ylabel}"]
            for x, y in rows:
                lines.append(f"{_fmt(x)} {_fmt(y)}")
            with open(path, "w", newline="") as fh:
                fh.write("\n".join(lines) + "\n")
            paths.append(path)
    elif isinstance(result, ComparisonResult):
        path = f"{path_prefix}_policies.dat"
        lines = ["# columns: policy energy_kwh sla_violations"]
        for row in result.rows:
            lines.append(f"{row.policy} {_fmt(row.energy_kwh)} {row.sla_violations}")
        with open(path, "w", newline="") as fh:
            fh.write("\n".join(lines) + "\n")
        paths.append(path)
    else:
        raise TypeError(f"cannot write plot data for {type(result).__name__}")
    return paths
