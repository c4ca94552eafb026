"""Baseline placement policies the consolidation policy is measured against.

The round-robin family admits VMs by *nominal* (requested) size: a machine
fits a VM when its capacity minus the nominal sizes of everything already
assigned covers the request.  Machines are woken on demand and — except for
the power-save and retirement variants — never put back to standby.
"""

from __future__ import annotations

from typing import TYPE_CHECKING, Iterator, Optional

from ..model import MachineCapacity, PhysicalMachine, UtilizationWeights, unified_utilization
from .base import ActionKind, PlacementDecision, RebalanceAction, SchedulerPolicy

if TYPE_CHECKING:  # pragma: no cover - typing only
    from ..engine import ClusterView


def _fits_nominal(free: tuple[float, float, float, float], nominal: MachineCapacity) -> bool:
    return (
        nominal.cpu <= free[0]
        and nominal.mem <= free[1]
        and nominal.disk <= free[2]
        and nominal.bw <= free[3]
    )


def _admit(pm: PhysicalMachine) -> PlacementDecision:
    if pm.is_running:
        return PlacementDecision.place(pm.id)
    return PlacementDecision.wake_and_place(pm.id)


class RoundRobinPolicy(SchedulerPolicy):
    """Cycle through the fleet in id order, waking machines as needed."""

    name = "round_robin"

    def __init__(self) -> None:
        super().__init__()
        self._cursor = 0

    def allocate(self, vm_id: str, view: "ClusterView") -> PlacementDecision:
        machines = view.all_machines()
        nominal = view.vm_nominal(vm_id)
        n = len(machines)
        for step in range(n):
            pm = machines[(self._cursor + step) % n]
            if _fits_nominal(view.nominal_free(pm.id), nominal):
                self._cursor = (self._cursor + step + 1) % n
                return _admit(pm)
        return PlacementDecision.reject()


class GreedyPolicy(SchedulerPolicy):
    """First fit by machine id, waking machines as needed."""

    name = "greedy"

    def allocate(self, vm_id: str, view: "ClusterView") -> PlacementDecision:
        nominal = view.vm_nominal(vm_id)
        for pm in view.all_machines():
            if _fits_nominal(view.nominal_free(pm.id), nominal):
                return _admit(pm)
        return PlacementDecision.reject()


class PowerSavePolicy(SchedulerPolicy):
    """Greedy over running machines first; parks machines that host nothing."""

    name = "power_save"

    def allocate(self, vm_id: str, view: "ClusterView") -> PlacementDecision:
        nominal = view.vm_nominal(vm_id)
        for pm in view.running_machines():
            if _fits_nominal(view.nominal_free(pm.id), nominal):
                return PlacementDecision.place(pm.id)
        for pm in view.standby_machines():
            if _fits_nominal(view.nominal_free(pm.id), nominal):
                return PlacementDecision.wake_and_place(pm.id)
        return PlacementDecision.reject()

    def rebalance(self, view: "ClusterView", tick: int) -> Iterator[RebalanceAction]:
        for pm in view.running_machines():
            if not pm.hosted_vm_ids and not view.has_inbound(pm.id):
                yield RebalanceAction.standby_machine(pm.id, reason="idle")


class DynamicRoundRobinPolicy(SchedulerPolicy):
    """Round robin plus machine retirement.

    A machine that loses a VM while still hosting others stops accepting
    placements.  Once it has been retiring for ``retirement_threshold``
    ticks its remaining VMs are force-migrated (first fit over non-retiring
    machines) and the machine is put on standby as soon as it is empty.
    """

    name = "dynamic_round_robin"

    def __init__(self, retirement_threshold: int = 10) -> None:
        super().__init__()
        if retirement_threshold < 1:
            raise ValueError("retirement_threshold must be >= 1")
        self.retirement_threshold = retirement_threshold
        self._cursor = 0
        self._retiring: dict[int, int] = {}

    def allocate(self, vm_id: str, view: "ClusterView") -> PlacementDecision:
        machines = [pm for pm in view.all_machines() if pm.id not in self._retiring]
        if not machines:
            return PlacementDecision.reject()
        nominal = view.vm_nominal(vm_id)
        n = len(machines)
        for step in range(n):
            pm = machines[(self._cursor + step) % n]
            if _fits_nominal(view.nominal_free(pm.id), nominal):
                self._cursor = (self._cursor + step + 1) % n
                return _admit(pm)
        return PlacementDecision.reject()

    def notify_departure(self, vm_id: str, machine_id: int, view: "ClusterView", tick: int) -> None:
        pm = view.machine(machine_id)
        if pm.hosted_vm_ids and machine_id not in self._retiring:
            self._retiring[machine_id] = tick

    def rebalance(self, view: "ClusterView", tick: int) -> Iterator[RebalanceAction]:
        for pm_id in sorted(self._retiring):
            pm = view.machine(pm_id)
            if pm.hosted_vm_ids and tick - self._retiring[pm_id] >= self.retirement_threshold:
                for vm_id in list(pm.hosted_vm_ids):
                    if view.vm_in_flight(vm_id):
                        continue
                    target = self._find_target(vm_id, view)
                    if target is None:
                        self._count("retirement_stuck")
                        continue
                    if target.is_running:
                        yield RebalanceAction.migrate(vm_id, pm_id, target.id, reason="retirement")
                    else:
                        yield RebalanceAction.wake_and_migrate(
                            vm_id, pm_id, target.id, reason="retirement"
                        )
            if not pm.hosted_vm_ids and not view.has_inbound(pm_id):
                yield RebalanceAction.standby_machine(pm_id, reason="retirement")
                del self._retiring[pm_id]

    def _find_target(self, vm_id: str, view: "ClusterView") -> Optional[PhysicalMachine]:
        nominal = view.vm_nominal(vm_id)
        for pm in view.all_machines():
            if pm.id in self._retiring:
                continue
            if _fits_nominal(view.nominal_free(pm.id), nominal):
                return pm
        return None


class SingleThresholdPolicy(SchedulerPolicy):
    """Utilization-sorted best-fit packing under a CPU utilization cap.

    Every ``epoch_ticks`` ticks the policy replans the whole assignment:
    VMs are taken in decreasing order of current CPU demand and each goes
    to the machine whose power draw grows least, subject to the machine's
    planned CPU utilization staying strictly below ``threshold``.  Machines
    are woken when nothing running fits, and are never put back to standby.
    """

    name = "single_threshold"

    def __init__(
        self,
        threshold: float = 0.75,
        epoch_ticks: int = 5,
        weights: Optional[UtilizationWeights] = None,
    ) -> None:
        super().__init__()
        if not 0.0 < threshold <= 1.0:
            raise ValueError("threshold must be in (0, 1]")
        if epoch_ticks < 1:
            raise ValueError("epoch_ticks must be >= 1")
        self.threshold = threshold
        self.epoch_ticks = epoch_ticks
        self.weights = weights or UtilizationWeights()
        self.utilization_weights = self.weights

    # -- helpers -----------------------------------------------------------

    def _vm_cpu_abs(self, vm_id: str, view: "ClusterView") -> float:
        usage = view.vm_window_mean(vm_id)
        if usage is not None:
            return usage[0]
        return view.vm_nominal(vm_id).cpu

    def _footprint(self, vm_id: str, pm: PhysicalMachine, view: "ClusterView") -> float:
        if view.vm_window_mean(vm_id) is not None:
            rv = view.vm_rv_on(vm_id, pm.id)
        else:
            rv = view.vm_nominal_rv_on(vm_id, pm.id)
        return unified_utilization(rv, self.weights)

    def _power_increase(
        self, vm_id: str, pm: PhysicalMachine, view: "ClusterView", plan_on: bool
    ) -> float:
        model = view.power_model
        slope = pm.peak_power_watts * (1.0 - model.idle_fraction)
        increase = slope * self._footprint(vm_id, pm, view)
        if not plan_on:
            increase += pm.peak_power_watts * model.idle_fraction - model.standby_watts
        return increase

    # -- placement ---------------------------------------------------------

    def allocate(self, vm_id: str, view: "ClusterView") -> PlacementDecision:
        vm_cpu = self._vm_cpu_abs(vm_id, view)
        best = None
        for pm in view.all_machines():
            used_cpu = view.cpu_used_abs(pm.id)
            if (used_cpu + vm_cpu) / pm.capacity.cpu >= self.threshold:
                continue
            increase = self._power_increase(vm_id, pm, view, plan_on=pm.is_running)
            if best is None or (increase, pm.id) < (best[0], best[1]):
                best = (increase, pm.id, pm)
        if best is None:
            return PlacementDecision.reject()
        return _admit(best[2])

    # -- epoch replanning ----------------------------------------------------

    def rebalance(self, view: "ClusterView", tick: int) -> Iterator[RebalanceAction]:
        if tick % self.epoch_ticks != 0:
            return
        machines = view.all_machines()
        plan_cpu = {pm.id: 0.0 for pm in machines}
        plan_on = {pm.id: pm.is_running for pm in machines}
        by_id = {pm.id: pm for pm in machines}

        placed: list[tuple[str, int]] = []
        skipped: list[str] = []
        for pm in machines:
            for vm_id in pm.hosted_vm_ids:
                if view.vm_in_flight(vm_id):
                    skipped.append(vm_id)
                else:
                    placed.append((vm_id, pm.id))
        for vm_id in skipped:
            host = view.vm_host(vm_id)
            if host is not None:
                plan_cpu[host] += self._vm_cpu_abs(vm_id, view)

        order = sorted(placed, key=lambda item: (-self._vm_cpu_abs(item[0], view), item[0]))
        moves = []
        for vm_id, current_host in order:
            vm_cpu = self._vm_cpu_abs(vm_id, view)
            best = None
            for pm in machines:
                if (plan_cpu[pm.id] + vm_cpu) / pm.capacity.cpu >= self.threshold:
                    continue
                increase = self._power_increase(vm_id, pm, view, plan_on[pm.id])
                if best is None or (increase, pm.id) < (best[0], best[1]):
                    best = (increase, pm.id)
            target = best[1] if best is not None else current_host
            if best is None:
                self._count("replan_stuck")
            plan_cpu[target] += vm_cpu
            needs_wake = not plan_on[target]
            plan_on[target] = True
            if target != current_host:
                moves.append((vm_id, current_host, target, needs_wake))

        for vm_id, source, target, needs_wake in moves:
            if needs_wake and not by_id[target].is_running:
                yield RebalanceAction.wake_and_migrate(vm_id, source, target, reason="replan")
            else:
                yield RebalanceAction.migrate(vm_id, source, target, reason="replan")
