"""Scheduler policy interface and the decision/action types policies emit.

Policies are pure deciders: they inspect a cluster view and return decisions
or actions; the simulation engine owns all state changes.  ``rebalance`` may
be a generator — the engine executes each yielded action before resuming it,
so a policy always plans against the cluster state its earlier actions
produced.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import TYPE_CHECKING, Iterable, Optional

from ..model import DEFAULT_RV, ResourceVector, UtilizationWeights

if TYPE_CHECKING:  # pragma: no cover - import cycle guard, typing only
    from ..engine import ClusterView


class DecisionKind(Enum):
    PLACE = "place"
    WAKE_AND_PLACE = "wake-and-place"
    REJECT = "reject"


@dataclass(frozen=True, slots=True)
class PlacementDecision:
    """Outcome of an allocation request for one VM."""

    kind: DecisionKind
    machine_id: Optional[int] = None

    def __post_init__(self) -> None:
        if self.kind is DecisionKind.REJECT:
            if self.machine_id is not None:
                raise ValueError("a rejection names no machine")
        elif self.machine_id is None:
            raise ValueError(f"{self.kind.value} requires a machine id")

    @classmethod
    def place(cls, machine_id: int) -> "PlacementDecision":
        return cls(DecisionKind.PLACE, machine_id)

    @classmethod
    def wake_and_place(cls, machine_id: int) -> "PlacementDecision":
        return cls(DecisionKind.WAKE_AND_PLACE, machine_id)

    @classmethod
    def reject(cls) -> "PlacementDecision":
        return cls(DecisionKind.REJECT)


class ActionKind(Enum):
    MIGRATE = "migrate"
    WAKE_AND_MIGRATE = "wake-and-migrate"
    STANDBY_MACHINE = "standby-machine"


@dataclass(frozen=True, slots=True)
class RebalanceAction:
    """One state change requested by a policy's rebalance pass."""

    kind: ActionKind
    vm_id: Optional[str] = None
    source_id: Optional[int] = None
    target_id: Optional[int] = None
    reason: str = ""

    def __post_init__(self) -> None:
        if self.kind is ActionKind.STANDBY_MACHINE:
            if self.target_id is None or self.vm_id is not None:
                raise ValueError("standby action names a machine and no VM")
        else:
            if self.vm_id is None or self.source_id is None or self.target_id is None:
                raise ValueError(f"{self.kind.value} requires vm, source and target")
            if self.source_id == self.target_id:
                raise ValueError("migration source and target must differ")

    @classmethod
    def migrate(cls, vm_id: str, source_id: int, target_id: int, reason: str = "") -> "RebalanceAction":
        return cls(ActionKind.MIGRATE, vm_id, source_id, target_id, reason)

    @classmethod
    def wake_and_migrate(
        cls, vm_id: str, source_id: int, target_id: int, reason: str = ""
    ) -> "RebalanceAction":
        return cls(ActionKind.WAKE_AND_MIGRATE, vm_id, source_id, target_id, reason)

    @classmethod
    def standby_machine(cls, machine_id: int, reason: str = "") -> "RebalanceAction":
        return cls(ActionKind.STANDBY_MACHINE, target_id=machine_id, reason=reason)


class SchedulerPolicy:
    """Base class for placement policies.

    Subclasses must implement :meth:`allocate`; the remaining hooks have
    neutral defaults so simple policies stay simple.
    """

    name = "base"

    #: Length in seconds of the usage observation window behind VM resource
    #: vectors.  The engine sizes per-VM windows from this.
    usage_window_seconds: float = 300.0

    #: Assumed resource vector for VMs without usage history.
    default_rv: ResourceVector = DEFAULT_RV

    #: Weights used for the utilization the engine measures per machine.
    utilization_weights: UtilizationWeights = UtilizationWeights()

    def __init__(self) -> None:
        self.stats: dict[str, int] = {}

    @property
    def breach_thresholds(self) -> Optional[tuple[float, float]]:
        """``(u_up, u_down)`` if the policy reacts to utilization breaches."""
        return None

    def allocate(self, vm_id: str, view: "ClusterView") -> PlacementDecision:
        raise NotImplementedError

    def rebalance(self, view: "ClusterView", tick: int) -> Iterable[RebalanceAction]:
        return ()

    def notify_departure(self, vm_id: str, machine_id: int, view: "ClusterView", tick: int) -> None:
        """Called by the engine when a VM departs while hosted."""

    def migration_landing_ok(self, vm_id: str, machine_id: int, view: "ClusterView") -> bool:
        """Re-validate a delayed migration at landing time."""
        return True

    def _count(self, key: str) -> None:
        self.stats[key] = self.stats.get(key, 0) + 1
