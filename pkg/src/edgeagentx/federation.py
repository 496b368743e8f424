"""Federated round machinery: collect updates, average, broadcast.

Aggregation is the unweighted componentwise mean; the two-tier
(hierarchical) path averages per group and then takes a group-size
weighted mean of the group results, which equals the flat mean exactly.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import defense
from .nets import FlatParams, flatten, unflatten

ACTOR = "actor"
CRITIC = "critic"


@dataclass(frozen=True)
class ModelUpdate:
    agent_id: int
    round: int
    role: str  # ACTOR or CRITIC
    params: FlatParams
    sample_count: int = 0


@dataclass(frozen=True)
class AggregationPlan:
    groups: tuple[tuple[int, ...], ...]
    rounds_per_aggregation: int = 2  # local episodes per federated round

    def validate(self, n_agents: int) -> None:
        if self.rounds_per_aggregation < 1:
            raise ValueError("plan.rounds_per_aggregation must be >= 1")
        seen = sorted(i for g in self.groups for i in g)
        if seen != list(range(n_agents)):
            raise ValueError("plan.groups must partition the agent indices")
        if any(len(g) == 0 for g in self.groups):
            raise ValueError("plan.groups must not contain empty groups")

    def restricted_to(self, agent_ids) -> "AggregationPlan":
        """Plan over a subset of agents (rejected updates removed)."""
        keep = set(agent_ids)
        groups = tuple(tuple(i for i in g if i in keep) for g in self.groups)
        return AggregationPlan(tuple(g for g in groups if g),
                               self.rounds_per_aggregation)


def even_groups(n_agents: int, n_groups: int) -> AggregationPlan:
    idx = np.array_split(np.arange(n_agents), n_groups)
    return AggregationPlan(tuple(tuple(int(i) for i in g) for g in idx))


@dataclass
class GlobalModel:
    round: int
    actor_params: FlatParams
    critic_params: FlatParams


@dataclass
class RoundReport:
    round: int
    accepted: list[int]
    rejected: list[int]
    verdicts: list[defense.AnomalyVerdict]
    stalled: bool = False


def _check_updates(updates) -> None:
    if not updates:
        raise ValueError("fedavg requires a nonempty update set")
    first = updates[0]
    for u in updates:
        if u.role != first.role:
            raise ValueError("mixed roles in one aggregation")
        if u.round != first.round:
            raise ValueError("mixed rounds in one aggregation")
        if u.params.values.shape != first.params.values.shape:
            raise ValueError("mixed parameter lengths in one aggregation")


def fedavg(updates) -> FlatParams:
    """Unweighted componentwise mean of the updates' parameters."""
    _check_updates(updates)
    mean = np.mean(np.stack([u.params.values for u in updates]), axis=0)
    return FlatParams(updates[0].params.shapes, mean)


def hierarchical_aggregate(updates, plan: AggregationPlan) -> FlatParams:
    """Per-group fedavg, then a group-size weighted mean of group results."""
    _check_updates(updates)
    by_id = {u.agent_id: u for u in updates}
    total = sum(len(g) for g in plan.groups)
    acc = np.zeros_like(updates[0].params.values)
    for group in plan.groups:
        if not group:
            raise ValueError("empty aggregation group")
        missing = [i for i in group if i not in by_id]
        if missing:
            raise ValueError(f"updates missing for agents {missing}")
        group_mean = fedavg([by_id[i] for i in group])
        acc += (len(group) / total) * group_mean.values
    return FlatParams(updates[0].params.shapes, acc)


def broadcast(global_model: GlobalModel, brains) -> None:
    """Replace every brain's online actor/critic with the global parameters.

    Target networks keep soft-tracking and are not overwritten.
    """
    for brain in brains:
        if global_model.actor_params.values.size != flatten(brain.actor).values.size:
            raise ValueError("global actor parameter length mismatch")
        if global_model.critic_params.values.size != flatten(brain.critic).values.size:
            raise ValueError("global critic parameter length mismatch")
        brain.actor = unflatten(global_model.actor_params,
                                brain.actor.output_activation)
        brain.critic = unflatten(global_model.critic_params,
                                 brain.critic.output_activation)


def collect_updates(brains, round_idx: int, role: str) -> list[ModelUpdate]:
    nets = [b.actor if role == ACTOR else b.critic for b in brains]
    return [ModelUpdate(i, round_idx, role, flatten(net))
            for i, net in enumerate(nets)]


def federated_round(brains, plan: AggregationPlan, round_idx: int, *,
                    defense_on: bool = True,
                    attacker_set: frozenset[int] = frozenset(),
                    attack: defense.AttackConfig | None = None,
                    rng: np.random.Generator | None = None,
                    threshold: float = defense.DEFAULT_THRESHOLD
                    ) -> tuple[GlobalModel | None, RoundReport]:
    """One synchronization round over all brains (mutates them in place).

    Attackers' uploads are poisoned before the server sees them; with the
    defense on, each role's updates are anomaly-filtered and an agent is
    rejected when either of its uploads is. Survivors are aggregated
    hierarchically and broadcast back. If nothing survives, the previous
    global model is kept and the report flags the stall.
    """
    plan.validate(len(brains))
    aggregated: dict[str, FlatParams] = {}
    rejected_ids: set[int] = set()
    verdicts: list[defense.AnomalyVerdict] = []

    per_role_updates: dict[str, list[ModelUpdate]] = {}
    for role in (ACTOR, CRITIC):
        updates = collect_updates(brains, round_idx, role)
        if attacker_set and attack is not None:
            if rng is None:
                raise ValueError("rng required when attacks are active")
            updates = [defense.poison_update(u, attack.poison_mode,
                                             attack.poison_scale, rng)
                       if u.agent_id in attacker_set else u
                       for u in updates]
        per_role_updates[role] = updates
        if defense_on:
            accepted, role_verdicts = defense.filter_updates(updates, threshold)
            rejected_ids.update(v.agent_id for v in role_verdicts if not v.accepted)
            if role == ACTOR:
                verdicts = role_verdicts

    accepted_ids = [i for i in range(len(brains)) if i not in rejected_ids]
    report = RoundReport(round_idx, accepted_ids, sorted(rejected_ids), verdicts)
    if not accepted_ids:
        report.stalled = True
        return None, report

    sub_plan = plan.restricted_to(accepted_ids)
    for role in (ACTOR, CRITIC):
        survivors = [u for u in per_role_updates[role] if u.agent_id not in rejected_ids]
        aggregated[role] = hierarchical_aggregate(survivors, sub_plan)

    global_model = GlobalModel(round_idx, aggregated[ACTOR], aggregated[CRITIC])
    broadcast(global_model, brains)
    return global_model, report
