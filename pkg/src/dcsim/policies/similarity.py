"""Consolidation policy driven by resource-vector cosine similarity.

Placement scores every running machine by how a VM's resource shape relates
to the machine's current usage, and packs VMs as long as the machine's
estimated unified utilization stays a safety buffer below the scale-up
threshold.  Two scoring modes are supported:

* ``dissimilar`` — score against the machine's *used* vector and prefer the
  least similar machine, spreading complementary shapes so no single
  resource saturates first.
* ``free-fit`` — score against the machine's *free* vector and prefer the
  most similar machine, slotting each VM where the leftover capacity has
  the VM's shape.

Machines that stay above ``u_up`` for a consistency period hand off their
hottest VM; machines that stay below ``u_down`` are fully evacuated onto
running peers and put on standby.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import TYPE_CHECKING, Iterator, Optional

from ..model import (
    DEFAULT_RV,
    BreachSide,
    PhysicalMachine,
    ResourceVector,
    UtilizationWeights,
    unified_utilization,
)
from .base import PlacementDecision, RebalanceAction, SchedulerPolicy

if TYPE_CHECKING:  # pragma: no cover - typing only
    from ..engine import ClusterView


class SimilarityMethod(Enum):
    """How a candidate machine is scored against an incoming VM."""

    DISSIMILAR = "dissimilar"
    FREE_FIT = "free-fit"


def cosine_similarity(a: ResourceVector, b: ResourceVector) -> float:
    """Cosine of the angle between two resource vectors, in [0, 1].

    Resource vectors are componentwise non-negative, so the cosine is never
    negative.  If either vector has zero length the similarity is defined
    as 0 (nothing aligns with an absent shape).
    """
    denom = a.norm() * b.norm()
    if denom == 0.0:
        return 0.0
    value = a.dot(b) / denom
    if value < 0.0:
        return 0.0
    if value > 1.0:
        return 1.0
    return value


def score_candidate(
    vm_rv: ResourceVector, machine_used_rv: ResourceVector, method: SimilarityMethod
) -> float:
    """Similarity score of one candidate machine for one VM.

    ``dissimilar`` compares against the machine's used share (lower is
    better); ``free-fit`` compares against its free share (higher is
    better).  Ranking and eligibility live in the policy; this is just the
    raw score.
    """
    if method is SimilarityMethod.DISSIMILAR:
        return cosine_similarity(vm_rv, machine_used_rv)
    return cosine_similarity(vm_rv, machine_used_rv.complement())


@dataclass(frozen=True, slots=True)
class PolicyConfig:
    """Tunables of the similarity consolidation policy.

    ``u_up``/``u_down`` bound the band of acceptable machine utilization,
    ``buffer`` is the safety margin kept below ``u_up`` at placement time
    and ``consistency_ticks`` is how long a breach must persist before the
    policy reacts.  ``min_threshold_gap`` documents the smallest allowed
    distance between the two thresholds; narrower gaps thrash machines
    between scale-up and scale-down.
    """

    u_up: float = 0.75
    u_down: float = 0.15
    buffer: float = 0.15
    similarity_method: SimilarityMethod = SimilarityMethod.FREE_FIT
    similarity_threshold: float = 0.6
    consistency_ticks: int = 3
    weights: UtilizationWeights = field(default_factory=UtilizationWeights)
    default_rv: ResourceVector = DEFAULT_RV
    delta_window_seconds: float = 300.0
    min_threshold_gap: float = 0.2

    def __post_init__(self) -> None:
        if not 0.0 <= self.u_down < self.u_up <= 1.0:
            raise ValueError(
                f"need 0 <= u_down < u_up <= 1, got u_down={self.u_down!r} u_up={self.u_up!r}"
            )
        if self.u_up - self.u_down < self.min_threshold_gap - 1e-12:
            raise ValueError(
                f"u_up - u_down = {self.u_up - self.u_down:.4f} is below the "
                f"minimum gap {self.min_threshold_gap}"
            )
        if not 0.0 <= self.buffer < self.u_up:
            raise ValueError(f"need 0 <= buffer < u_up, got buffer={self.buffer!r}")
        if not 0.0 <= self.similarity_threshold <= 1.0:
            raise ValueError("similarity_threshold must be in [0, 1]")
        if self.consistency_ticks < 1:
            raise ValueError("consistency_ticks must be >= 1")
        if not math.isfinite(self.delta_window_seconds) or self.delta_window_seconds <= 0:
            raise ValueError("delta_window_seconds must be > 0")
        if not 0.0 <= self.min_threshold_gap <= 1.0:
            raise ValueError("min_threshold_gap must be in [0, 1]")


class SimilarityPolicy(SchedulerPolicy):
    """Similarity-scored packing with threshold-driven rebalancing."""

    name = "similarity"

    def __init__(self, config: Optional[PolicyConfig] = None) -> None:
        super().__init__()
        self.config = config or PolicyConfig()
        self.usage_window_seconds = self.config.delta_window_seconds
        self.default_rv = self.config.default_rv
        self.utilization_weights = self.config.weights

    @property
    def breach_thresholds(self) -> tuple[float, float]:
        return (self.config.u_up, self.config.u_down)

    # -- placement ---------------------------------------------------------

    def allocate(self, vm_id: str, view: "ClusterView") -> PlacementDecision:
        return self._pick(vm_id, view, exclude=frozenset(), extras=None, allow_wake=True)

    def _pick(
        self,
        vm_id: str,
        view: "ClusterView",
        exclude: frozenset[int],
        extras: Optional[dict[int, ResourceVector]],
        allow_wake: bool,
    ) -> PlacementDecision:
        """Rank eligible running machines and take the first that fits.

        ``extras`` layers hypothetical, not-yet-executed placements on top
        of the view so multi-VM plans stay internally consistent.
        """
        cfg = self.config
        cap_u = cfg.u_up - cfg.buffer
        ranked = []
        for pm in view.running_machines():
            if pm.id in exclude:
                continue
            vm_rv = view.vm_rv_on(vm_id, pm.id)
            used = view.machine_rv(pm.id)
            if extras is not None and pm.id in extras:
                used = used.add_clamped(extras[pm.id])
            score = score_candidate(vm_rv, used, cfg.similarity_method)
            if cfg.similarity_method is SimilarityMethod.DISSIMILAR:
                if score > cfg.similarity_threshold:
                    continue
                ranked.append((score, pm.id, vm_rv, used))
            else:
                if score < cfg.similarity_threshold:
                    continue
                ranked.append((-score, pm.id, vm_rv, used))
        ranked.sort(key=lambda item: (item[0], item[1]))

        for _, pm_id, vm_rv, used in ranked:
            estimated = unified_utilization(used.add_clamped(vm_rv), cfg.weights)
            if estimated < cap_u:
                return PlacementDecision.place(pm_id)

        if allow_wake:
            standby = view.standby_machines()
            if standby:
                chosen = min(standby, key=lambda pm: (pm.last_used_tick, pm.id))
                return PlacementDecision.wake_and_place(chosen.id)
        return PlacementDecision.reject()

    # -- rebalancing -------------------------------------------------------

    def rebalance(self, view: "ClusterView", tick: int) -> Iterator[RebalanceAction]:
        for pm_id in [pm.id for pm in view.running_machines()]:
            pm = view.machine(pm_id)
            if not pm.is_running:
                continue
            action = self.scale_up_check(pm, tick, view)
            if action is not None:
                yield action
                continue
            plan = self.scale_down_check(pm, tick, view)
            if plan is not None:
                yield from plan

    def _breach_mature(self, pm: PhysicalMachine, side: BreachSide, tick: int) -> bool:
        return (
            pm.breach_side is side
            and pm.threshold_breach_since is not None
            and tick - pm.threshold_breach_since + 1 >= self.config.consistency_ticks
        )

    def scale_up_check(
        self, pm: PhysicalMachine, tick: int, view: "ClusterView"
    ) -> Optional[RebalanceAction]:
        """Hand off the hottest VM of a persistently overloaded machine.

        Moves at most one VM.  If no peer passes the buffer check a standby
        machine is woken for the VM; with the whole fleet running and full,
        the VM stays put and the episode is only counted.
        """
        if not self._breach_mature(pm, BreachSide.OVER, tick):
            return None
        hottest = None
        for vm_id in pm.hosted_vm_ids:
            if view.vm_in_flight(vm_id):
                continue
            u = unified_utilization(view.vm_rv_on(vm_id, pm.id), self.config.weights)
            if hottest is None or u > hottest[0]:
                hottest = (u, vm_id)
        if hottest is None:
            return None
        vm_id = hottest[1]
        decision = self._pick(
            vm_id, view, exclude=frozenset((pm.id,)), extras=None, allow_wake=True
        )
        if decision.kind.value == "place":
            return RebalanceAction.migrate(vm_id, pm.id, decision.machine_id, reason="scale-up")
        if decision.kind.value == "wake-and-place":
            return RebalanceAction.wake_and_migrate(
                vm_id, pm.id, decision.machine_id, reason="scale-up"
            )
        self._count("scale_up_exhausted")
        return None

    def scale_down_check(
        self, pm: PhysicalMachine, tick: int, view: "ClusterView"
    ) -> Optional[list[RebalanceAction]]:
        """Plan a full evacuation of a persistently underloaded machine.

        All-or-nothing: either every hosted VM fits on some other *running*
        machine (waking counts as failure) and the machine goes to standby,
        or no action is taken.  Planned placements accumulate, so one peer
        absorbing several VMs is accounted correctly.
        """
        if not self._breach_mature(pm, BreachSide.UNDER, tick):
            return None
        if any(view.vm_in_flight(vm_id) for vm_id in pm.hosted_vm_ids):
            return None
        extras: dict[int, ResourceVector] = {}
        plan = []
        for vm_id in list(pm.hosted_vm_ids):
            decision = self._pick(
                vm_id, view, exclude=frozenset((pm.id,)), extras=extras, allow_wake=False
            )
            if decision.kind.value != "place":
                self._count("scale_down_blocked")
                return None
            target = decision.machine_id
            vm_rv = view.vm_rv_on(vm_id, target)
            extras[target] = extras.get(target, ResourceVector(0, 0, 0, 0)).add_clamped(vm_rv)
            plan.append(RebalanceAction.migrate(vm_id, pm.id, target, reason="scale-down"))
        plan.append(RebalanceAction.standby_machine(pm.id, reason="scale-down"))
        return plan

    # -- delayed-migration validation ---------------------------------------

    def migration_landing_ok(self, vm_id: str, machine_id: int, view: "ClusterView") -> bool:
        """A landing must still leave the target below the packing cap."""
        pm = view.machine(machine_id)
        if not pm.is_running:
            return False
        vm_rv = view.vm_rv_on(vm_id, machine_id)
        used = view.machine_rv(machine_id)
        estimated = unified_utilization(used.add_clamped(vm_rv), self.config.weights)
        return estimated < self.config.u_up - self.config.buffer
