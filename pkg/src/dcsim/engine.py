"""Discrete-time simulation engine for a fleet of physical machines.

Each tick runs a fixed pipeline:

1. land migrations whose transfer delay has elapsed;
2. process VM departures;
3. offer new arrivals (and earlier rejections) to the policy;
4. advance demand traces and arbitrate each machine's resources — when a
   machine is over-committed every contender receives its proportional
   share and each shorted (vm, resource) pair produces one SLA violation;
5. measure per-machine unified utilization and track threshold-breach
   episodes;
6. run the policy's rebalance pass, executing each emitted action as it is
   produced;
7. integrate energy from the power model;
8. advance last-used clocks.

The engine draws no random numbers and iterates every collection in a fixed
order, so a run is a pure function of (config, workload, policy).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

from .model import (
    MachineCapacity,
    MachineState,
    BreachSide,
    PhysicalMachine,
    PowerModel,
    ResourceVector,
    UtilizationWeights,
    VirtualMachine,
    power_draw,
)
from .policies.base import ActionKind, DecisionKind, RebalanceAction, SchedulerPolicy
from .workload import VmRequest

_USAGE_ZERO = (0.0, 0.0, 0.0, 0.0)


class EngineError(ValueError):
    """Raised for invalid simulation configurations or policy decisions."""


@dataclass(frozen=True, slots=True)
class FleetMachine:
    """Static description of one physical machine."""

    capacity: MachineCapacity
    peak_power_watts: float


@dataclass(frozen=True, slots=True)
class SimulationConfig:
    """Static parameters of a simulation run."""

    fleet: tuple[FleetMachine, ...]
    duration_ticks: int
    tick_length_seconds: float = 60.0
    initial_running_count: int = 1
    power_model: PowerModel = field(default_factory=PowerModel)
    migration_cost_ticks: int = 0
    energy_weights: UtilizationWeights = field(default_factory=UtilizationWeights)

    def __post_init__(self) -> None:
        if not self.fleet:
            raise EngineError("fleet must contain at least one machine")
        if self.duration_ticks < 1:
            raise EngineError("duration_ticks must be >= 1")
        if not math.isfinite(self.tick_length_seconds) or self.tick_length_seconds <= 0:
            raise EngineError("tick_length_seconds must be > 0")
        if not 1 <= self.initial_running_count <= len(self.fleet):
            raise EngineError(
                f"initial_running_count must be in [1, {len(self.fleet)}], "
                f"got {self.initial_running_count}"
            )
        if self.migration_cost_ticks < 0:
            raise EngineError("migration_cost_ticks must be >= 0")


class SlaViolationEvent(NamedTuple):
    """One resource shortfall: a VM got less than it asked for, for one tick."""

    tick: int
    vm_id: str
    resource: str
    demanded: float
    delivered: float


def proportional_delivery(
    demands: list[tuple[float, float, float, float]],
    capacity: tuple[float, float, float, float],
) -> tuple[list[tuple[float, float, float, float]], list[tuple[int, int]]]:
    """Fair-share arbitration of one machine's resources for one tick.

    Per resource: if total demand fits, everyone gets what they asked;
    otherwise each contender receives ``demand * capacity / total``.
    Returns the delivered tuples plus ``(vm_index, resource_index)`` pairs
    for every shorted demand.
    """
    totals = [0.0, 0.0, 0.0, 0.0]
    for demand in demands:
        for r in range(4):
            totals[r] += demand[r]
    factors = [1.0, 1.0, 1.0, 1.0]
    shorted_resources = []
    for r in range(4):
        if totals[r] > capacity[r]:
            factors[r] = capacity[r] / totals[r]
            shorted_resources.append(r)
    if not shorted_resources:
        return list(demands), []
    delivered = []
    shorted = []
    for i, demand in enumerate(demands):
        values = list(demand)
        for r in shorted_resources:
            if demand[r] > 0.0:
                values[r] = demand[r] * factors[r]
                shorted.append((i, r))
        delivered.append((values[0], values[1], values[2], values[3]))
    return delivered, shorted


@dataclass(slots=True)
class SimulationReport:
    """Aggregated outcome of one run plus per-tick series."""

    total_energy_kwh: float
    sla_violation_count: int
    migration_count: int
    wake_count: int
    standby_count: int
    rejected_requests: int
    dropped_actions: int
    running_machines: list[int]
    total_power_watts: list[float]
    violations_per_tick: list[int]
    per_machine_energy_kwh: dict[int, float]
    policy_stats: dict[str, int]

    @property
    def mean_running_machines(self) -> float:
        if not self.running_machines:
            return 0.0
        return sum(self.running_machines) / len(self.running_machines)

    @property
    def peak_running_machines(self) -> int:
        return max(self.running_machines) if self.running_machines else 0


class Simulation:
    """One mutable simulation run.  Also serves as the policy's cluster view."""

    def __init__(
        self,
        config: SimulationConfig,
        workload: list[VmRequest],
        policy: SchedulerPolicy,
    ) -> None:
        self.config = config
        self.policy = policy
        self.tick = 0

        ids = [req.vm_id for req in workload]
        if len(set(ids)) != len(ids):
            raise EngineError("workload contains duplicate vm ids")

        self.machines: list[PhysicalMachine] = []
        for index, spec in enumerate(config.fleet):
            state = (
                MachineState.RUNNING
                if index < config.initial_running_count
                else MachineState.STANDBY
            )
            self.machines.append(
                PhysicalMachine(
                    id=index,
                    capacity=spec.capacity,
                    peak_power_watts=spec.peak_power_watts,
                    state=state,
                    last_used_tick=0 if state is MachineState.RUNNING else -1,
                )
            )

        self._window_ticks = max(
            1, math.ceil(policy.usage_window_seconds / config.tick_length_seconds)
        )
        self._requests = {req.vm_id: req for req in workload}
        self._arrivals: dict[int, list[str]] = {}
        for req in sorted(workload, key=lambda r: r.vm_id):
            if req.arrival_tick < config.duration_ticks:
                self._arrivals.setdefault(req.arrival_tick, []).append(req.vm_id)

        self.vms: dict[str, VirtualMachine] = {}
        self._demand_idx: dict[str, int] = {}
        self._pending: list[str] = []
        self._departures: dict[int, list[str]] = {}

        # In-flight migrations (only with migration_cost_ticks > 0).
        self._inflight: dict[str, tuple[int, int]] = {}  # vm -> (target, land tick)
        self._inbound: dict[int, set[str]] = {}
        self._landings: dict[int, list[str]] = {}
        self._deferred_standby: list[int] = []

        self._delivered: dict[int, tuple[float, float, float, float]] = {}
        self._machine_ws: list[float] = [0.0] * len(self.machines)

        self.migration_count = 0
        self.wake_count = 0
        self.standby_count = 0
        self.rejected_requests = 0
        self.dropped_actions = 0
        self.sla_violation_count = 0

        self._series_running: list[int] = []
        self._series_power: list[float] = []
        self._series_violations: list[int] = []

    # ------------------------------------------------------------------
    # Cluster view (read-only by convention; policies hold this object)
    # ------------------------------------------------------------------

    @property
    def current_tick(self) -> int:
        return self.tick

    @property
    def power_model(self) -> PowerModel:
        return self.config.power_model

    def all_machines(self) -> list[PhysicalMachine]:
        return self.machines

    def machine(self, machine_id: int) -> PhysicalMachine:
        return self.machines[machine_id]

    def running_machines(self) -> list[PhysicalMachine]:
        return [pm for pm in self.machines if pm.state is MachineState.RUNNING]

    def standby_machines(self) -> list[PhysicalMachine]:
        return [pm for pm in self.machines if pm.state is MachineState.STANDBY]

    def vm_host(self, vm_id: str) -> Optional[int]:
        vm = self.vms.get(vm_id)
        return vm.host_id if vm is not None else None

    def vm_in_flight(self, vm_id: str) -> bool:
        return vm_id in self._inflight

    def has_inbound(self, machine_id: int) -> bool:
        return bool(self._inbound.get(machine_id))

    def vm_nominal(self, vm_id: str) -> MachineCapacity:
        return self._requests[vm_id].nominal

    def vm_window_mean(self, vm_id: str) -> Optional[tuple[float, float, float, float]]:
        vm = self.vms.get(vm_id)
        if vm is None or not vm.has_history:
            return None
        return vm.window_mean()

    def vm_rv_on(self, vm_id: str, machine_id: int) -> ResourceVector:
        """The VM's usage share relative to one machine's capacity.

        Falls back to the policy's assumed default vector when the VM has
        no delivered-usage history yet.
        """
        mean = self.vm_window_mean(vm_id)
        if mean is None:
            return self.policy.default_rv
        cap = self.machines[machine_id].capacity.as_tuple()
        return ResourceVector(
            min(1.0, mean[0] / cap[0]),
            min(1.0, mean[1] / cap[1]),
            min(1.0, mean[2] / cap[2]),
            min(1.0, mean[3] / cap[3]),
        )

    def vm_nominal_rv_on(self, vm_id: str, machine_id: int) -> ResourceVector:
        nom = self._requests[vm_id].nominal.as_tuple()
        cap = self.machines[machine_id].capacity.as_tuple()
        return ResourceVector(
            min(1.0, nom[0] / cap[0]),
            min(1.0, nom[1] / cap[1]),
            min(1.0, nom[2] / cap[2]),
            min(1.0, nom[3] / cap[3]),
        )

    def machine_rv(self, machine_id: int) -> ResourceVector:
        """Used share of a machine as placement logic should see it.

        Hosted VMs contribute their latest delivered usage; VMs placed this
        tick (no samples yet) and VMs inbound through a delayed migration
        contribute their estimated share, so back-to-back placements within
        one tick are accounted against the machine.
        """
        pm = self.machines[machine_id]
        cap = pm.capacity.as_tuple()
        totals = [0.0, 0.0, 0.0, 0.0]
        estimated: list[ResourceVector] = []
        for vm_id in pm.hosted_vm_ids:
            vm = self.vms[vm_id]
            if vm.usage_window:
                last = vm.usage_window[-1]
                for r in range(4):
                    totals[r] += last[r]
            else:
                estimated.append(self.policy.default_rv)
        for vm_id in sorted(self._inbound.get(machine_id, ())):
            estimated.append(self.vm_rv_on(vm_id, machine_id))
        rv = ResourceVector(
            min(1.0, totals[0] / cap[0]),
            min(1.0, totals[1] / cap[1]),
            min(1.0, totals[2] / cap[2]),
            min(1.0, totals[3] / cap[3]),
        )
        for extra in estimated:
            rv = rv.add_clamped(extra)
        return rv

    def machine_free(self, machine_id: int) -> ResourceVector:
        return self.machine_rv(machine_id).complement()

    def nominal_free(self, machine_id: int) -> tuple[float, float, float, float]:
        """Capacity minus nominal sizes of hosted plus inbound VMs."""
        pm = self.machines[machine_id]
        free = list(pm.capacity.as_tuple())
        vm_ids = list(pm.hosted_vm_ids)
        vm_ids.extend(self._inbound.get(machine_id, ()))
        for vm_id in vm_ids:
            nom = self._requests[vm_id].nominal.as_tuple()
            for r in range(4):
                free[r] -= nom[r]
        return (free[0], free[1], free[2], free[3])

    def cpu_used_abs(self, machine_id: int) -> float:
        """Absolute CPU demand attributed to a machine (usage, else nominal)."""
        pm = self.machines[machine_id]
        total = 0.0
        vm_ids = list(pm.hosted_vm_ids)
        vm_ids.extend(self._inbound.get(machine_id, ()))
        for vm_id in vm_ids:
            mean = self.vm_window_mean(vm_id)
            total += mean[0] if mean is not None else self._requests[vm_id].nominal.cpu
        return total

    # ------------------------------------------------------------------
    # State transitions
    # ------------------------------------------------------------------

    def _wake(self, pm: PhysicalMachine) -> None:
        if pm.state is not MachineState.STANDBY:
            raise EngineError(f"machine {pm.id} is not standby; cannot wake")
        pm.state = MachineState.RUNNING
        pm.last_used_tick = self.tick
        pm.current_utilization = 0.0
        self.wake_count += 1

    def _standby(self, pm: PhysicalMachine) -> None:
        if pm.hosted_vm_ids or self.has_inbound(pm.id):
            raise EngineError(f"machine {pm.id} is not empty; cannot standby")
        pm.state = MachineState.STANDBY
        pm.last_used_tick = self.tick
        pm.current_utilization = 0.0
        pm.clear_breach()
        self.standby_count += 1

    def _place(self, vm: VirtualMachine, pm: PhysicalMachine) -> None:
        vm.host_id = pm.id
        pm.add_vm(vm.id)
        pm.last_used_tick = self.tick

    def _unhost(self, vm: VirtualMachine) -> None:
        if vm.host_id is not None:
            self.machines[vm.host_id].remove_vm(vm.id)
            vm.host_id = None

    def _move(self, vm: VirtualMachine, target: PhysicalMachine) -> None:
        source = self.machines[vm.host_id]
        source.remove_vm(vm.id)
        source.clear_breach()
        vm.host_id = target.id
        target.add_vm(vm.id)
        target.last_used_tick = self.tick
        self.migration_count += 1

    # ------------------------------------------------------------------
    # Tick pipeline
    # ------------------------------------------------------------------

    def run(self) -> SimulationReport:
        for _ in range(self.config.duration_ticks):
            self._step()
        return self._report()

    def _step(self) -> None:
        tick = self.tick
        self._land_migrations(tick)
        self._process_departures(tick)
        self._process_arrivals(tick)
        violations = self._arbitrate(tick)
        self._measure(tick)
        self._rebalance(tick)
        self._integrate_energy(tick, violations)
        for pm in self.machines:
            if pm.state is MachineState.RUNNING:
                pm.last_used_tick = tick
        self.tick = tick + 1

    # -- step 1: migration landings -------------------------------------

    def _land_migrations(self, tick: int) -> None:
        for vm_id in self._landings.pop(tick, ()):
            flight = self._inflight.get(vm_id)
            if flight is None:
                continue
            target_id, land_tick = flight
            if land_tick != tick:
                continue
            del self._inflight[vm_id]
            self._inbound[target_id].discard(vm_id)
            vm = self.vms.get(vm_id)
            if vm is None or vm.host_id is None:
                continue  # departed mid-flight
            target = self.machines[target_id]
            if target.state is not MachineState.RUNNING or not self.policy.migration_landing_ok(
                vm_id, target_id, self
            ):
                self.dropped_actions += 1
                continue
            self._move(vm, target)

    # -- step 2: departures ----------------------------------------------

    def _process_departures(self, tick: int) -> None:
        for vm_id in self._departures.pop(tick, ()):
            vm = self.vms.get(vm_id)
            if vm is None:
                continue
            if vm_id in self._inflight:
                target_id, _ = self._inflight.pop(vm_id)
                self._inbound[target_id].discard(vm_id)
            host_id = vm.host_id
            self._unhost(vm)
            del self.vms[vm_id]
            self._demand_idx.pop(vm_id, None)
            if host_id is not None:
                self.policy.notify_departure(vm_id, host_id, self, tick)
            elif vm_id in self._pending:
                self._pending.remove(vm_id)

    # -- step 3: arrivals --------------------------------------------------

    def _process_arrivals(self, tick: int) -> None:
        queue = list(self._pending)
        queue.extend(self._arrivals.pop(tick, ()))
        if not queue:
            return
        self._pending = []
        for vm_id in queue:
            vm = self.vms.get(vm_id)
            if vm is None:
                req = self._requests[vm_id]
                vm = VirtualMachine(
                    id=vm_id,
                    nominal=req.nominal,
                    arrival_tick=req.arrival_tick,
                    departure_tick=req.departure_tick,
                    window_ticks=self._window_ticks,
                )
                self.vms[vm_id] = vm
                self._demand_idx[vm_id] = 0
                if req.departure_tick is not None and req.departure_tick < self.config.duration_ticks:
                    self._departures.setdefault(req.departure_tick, []).append(vm_id)
            decision = self.policy.allocate(vm_id, self)
            if decision.kind is DecisionKind.REJECT:
                self.rejected_requests += 1
                self._pending.append(vm_id)
                continue
            target = self.machines[decision.machine_id]
            if decision.kind is DecisionKind.WAKE_AND_PLACE:
                self._wake(target)
            elif target.state is not MachineState.RUNNING:
                raise EngineError(
                    f"policy {self.policy.name!r} placed {vm_id} on standby machine {target.id}"
                )
            self._place(vm, target)

    # -- step 4: demand + arbitration --------------------------------------

    def _current_demand(self, vm_id: str, tick: int) -> tuple[float, float, float, float]:
        trace = self._requests[vm_id].trace
        idx = self._demand_idx[vm_id]
        n = len(trace)
        while idx + 1 < n and trace[idx + 1].tick <= tick:
            idx += 1
        self._demand_idx[vm_id] = idx
        if n == 0 or trace[idx].tick > tick:
            return _USAGE_ZERO
        sample = trace[idx]
        return (sample.cpu, sample.mem, sample.disk, sample.bw)

    def _arbitrate(self, tick: int) -> int:
        violations = 0
        self._delivered = {}
        for pm in self.machines:
            if pm.state is not MachineState.RUNNING:
                continue
            hosted = pm.hosted_vm_ids
            if not hosted:
                self._delivered[pm.id] = _USAGE_ZERO
                continue
            demands = [self._current_demand(vm_id, tick) for vm_id in hosted]
            delivered, shorted = proportional_delivery(demands, pm.capacity.as_tuple())
            for i, vm_id in enumerate(hosted):
                self.vms[vm_id].record_usage(delivered[i])
            violations += len(shorted)
            totals = [0.0, 0.0, 0.0, 0.0]
            for values in delivered:
                for r in range(4):
                    totals[r] += values[r]
            self._delivered[pm.id] = (totals[0], totals[1], totals[2], totals[3])
        self.sla_violation_count += violations
        return violations

    # -- step 5: measurement + breach episodes ------------------------------

    def _measure(self, tick: int) -> None:
        thresholds = self.policy.breach_thresholds
        weights = self.policy.utilization_weights.as_tuple()
        for pm in self.machines:
            if pm.state is not MachineState.RUNNING:
                continue
            totals = self._delivered.get(pm.id, _USAGE_ZERO)
            cap = pm.capacity.as_tuple()
            u = 0.0
            for r in range(4):
                share = totals[r] / cap[r]
                if share > 1.0:
                    share = 1.0
                u += weights[r] * share
            pm.current_utilization = u
            if thresholds is None:
                continue
            u_up, u_down = thresholds
            if u > u_up:
                side = BreachSide.OVER
            elif u < u_down:
                side = BreachSide.UNDER
            else:
                side = None
            if side is not pm.breach_side:
                pm.breach_side = side
                pm.threshold_breach_since = tick if side is not None else None

    # -- step 6: rebalance ---------------------------------------------------

    def _rebalance(self, tick: int) -> None:
        for action in self.policy.rebalance(self, tick):
            self._execute_action(action, tick)
        if self._deferred_standby:
            still_waiting = []
            for pm_id in self._deferred_standby:
                pm = self.machines[pm_id]
                if pm.state is not MachineState.RUNNING:
                    continue
                if not pm.hosted_vm_ids and not self.has_inbound(pm_id):
                    self._standby(pm)
                elif all(vm_id in self._inflight for vm_id in pm.hosted_vm_ids):
                    still_waiting.append(pm_id)
                else:
                    self.dropped_actions += 1
            self._deferred_standby = still_waiting

    def _execute_action(self, action: RebalanceAction, tick: int) -> None:
        if action.kind is ActionKind.STANDBY_MACHINE:
            pm = self.machines[action.target_id]
            if pm.state is not MachineState.RUNNING:
                self.dropped_actions += 1
                return
            if pm.id not in self._deferred_standby:
                self._deferred_standby.append(pm.id)
            return

        vm = self.vms.get(action.vm_id)
        target = self.machines[action.target_id]
        if (
            vm is None
            or vm.host_id != action.source_id
            or action.vm_id in self._inflight
        ):
            self.dropped_actions += 1
            return
        if action.kind is ActionKind.WAKE_AND_MIGRATE:
            if target.state is not MachineState.STANDBY:
                self.dropped_actions += 1
                return
            self._wake(target)
        elif target.state is not MachineState.RUNNING:
            self.dropped_actions += 1
            return

        cost = self.config.migration_cost_ticks
        if cost == 0:
            self._move(vm, target)
            return
        land_tick = tick + cost
        self._inflight[vm.id] = (target.id, land_tick)
        self._inbound.setdefault(target.id, set()).add(vm.id)
        self._landings.setdefault(land_tick, []).append(vm.id)
        self.machines[vm.host_id].clear_breach()

    # -- step 7: energy -------------------------------------------------------

    def _integrate_energy(self, tick: int, violations: int) -> None:
        model = self.config.power_model
        weights = self.config.energy_weights.as_tuple()
        dt = self.config.tick_length_seconds
        total = 0.0
        running = 0
        for pm in self.machines:
            if pm.state is MachineState.RUNNING:
                running += 1
                totals = self._delivered.get(pm.id, _USAGE_ZERO)
                cap = pm.capacity.as_tuple()
                u = 0.0
                for r in range(4):
                    share = totals[r] / cap[r]
                    if share > 1.0:
                        share = 1.0
                    u += weights[r] * share
                watts = power_draw(pm, u, model)
            else:
                watts = model.standby_watts
            self._machine_ws[pm.id] += watts * dt
            total += watts
        self._series_running.append(running)
        self._series_power.append(total)
        self._series_violations.append(violations)

    # ------------------------------------------------------------------

    def _report(self) -> SimulationReport:
        per_machine = {
            pm.id: self._machine_ws[pm.id] / 3.6e6 for pm in self.machines
        }
        total_kwh = sum(self._machine_ws) / 3.6e6
        return SimulationReport(
            total_energy_kwh=total_kwh,
            sla_violation_count=self.sla_violation_count,
            migration_count=self.migration_count,
            wake_count=self.wake_count,
            standby_count=self.standby_count,
            rejected_requests=self.rejected_requests,
            dropped_actions=self.dropped_actions,
            running_machines=self._series_running,
            total_power_watts=self._series_power,
            violations_per_tick=self._series_violations,
            per_machine_energy_kwh=per_machine,
            policy_stats=dict(self.policy.stats),
        )


# Policies receive the live simulation as their (read-only) cluster view.
ClusterView = Simulation


def run_simulation(
    config: SimulationConfig, workload: list[VmRequest], policy: SchedulerPolicy
) -> SimulationReport:
    """Build and run one simulation; convenience wrapper around Simulation."""
    return Simulation(config, workload, policy).run()
