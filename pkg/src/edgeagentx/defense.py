"""Attacker models and anomaly filtering for federated updates.

Scoring combines a norm-ratio test against the median peer norm with a
cosine test against the coordinate-wise median of all peers; an update is
rejected when either deviation exceeds the threshold.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace

import numpy as np

from .nets import FlatParams

DEFAULT_THRESHOLD = 0.5
MIN_PEERS_FOR_SCORING = 3


class PoisonMode(enum.Enum):
    SIGN_FLIP_SCALED = "SIGN_FLIP_SCALED"
    RANDOM_NOISE = "RANDOM_NOISE"


class VerdictReason(enum.Enum):
    OK = "OK"
    NORM_OUTLIER = "NORM_OUTLIER"
    DIRECTION_OUTLIER = "DIRECTION_OUTLIER"


@dataclass(frozen=True)
class AttackConfig:
    poison_fraction: float = 0.0
    poison_mode: PoisonMode = PoisonMode.SIGN_FLIP_SCALED
    poison_scale: float = 10.0
    jam_enabled: bool = False
    seed: int = 0

    def validate(self) -> None:
        if not 0.0 <= self.poison_fraction <= 1.0:
            raise ValueError("attack.poison_fraction must be in [0,1]")
        if self.poison_scale <= 0:
            raise ValueError("attack.poison_scale must be > 0")


@dataclass(frozen=True)
class AnomalyVerdict:
    agent_id: int
    score: float
    accepted: bool
    reason: VerdictReason


def poison_update(update, mode: PoisonMode, scale: float,
                  rng: np.random.Generator):
    """Corrupt an update's parameters; metadata is left untouched."""
    values = update.params.values
    if mode is PoisonMode.SIGN_FLIP_SCALED:
        poisoned = -scale * values
    elif mode is PoisonMode.RANDOM_NOISE:
        sigma = scale * float(np.linalg.norm(values)) / math.sqrt(values.size)
        poisoned = rng.normal(0.0, sigma, size=values.size)
    else:
        raise ValueError(f"unknown poison mode {mode!r}")
    return replace(update, params=FlatParams(update.params.shapes, poisoned))


def _deviations(values: np.ndarray, peer_values: list[np.ndarray]) -> tuple[float, float]:
    norms = np.array([np.linalg.norm(v) for v in peer_values])
    own_norm = float(np.linalg.norm(values))
    median_norm = float(np.median(norms))
    if own_norm == 0.0 or median_norm == 0.0:
        return math.inf, math.inf
    norm_dev = abs(math.log(own_norm / median_norm))
    center = np.median(np.stack(peer_values), axis=0)
    center_norm = float(np.linalg.norm(center))
    if center_norm == 0.0:
        return norm_dev, math.inf
    cosine = float(values @ center) / (own_norm * center_norm)
    return norm_dev, 1.0 - cosine


def score_update(update, peers) -> float:
    """Anomaly score of one update against all updates of the round."""
    if len(peers) < MIN_PEERS_FOR_SCORING:
        return 0.0
    norm_dev, dir_dev = _deviations(update.params.values,
                                    [p.params.values for p in peers])
    return max(norm_dev, dir_dev)


def filter_updates(updates, threshold: float = DEFAULT_THRESHOLD):
    """Split a round's updates into accepted ones plus per-update verdicts.

    If nothing passes the threshold, the single lowest-score update is
    kept so aggregation never runs on an empty set.
    """
    if not updates:
        raise ValueError("filter_updates requires a nonempty update set")
    scored = []
    peer_values = [u.params.values for u in updates]
    for u in updates:
        if len(updates) < MIN_PEERS_FOR_SCORING:
            scored.append((u, 0.0, 0.0, 0.0))
            continue
        norm_dev, dir_dev = _deviations(u.params.values, peer_values)
        scored.append((u, max(norm_dev, dir_dev), norm_dev, dir_dev))

    any_accepted = any(score <= threshold for _, score, _, _ in scored)
    fallback_id = min(scored, key=lambda t: t[1])[0].agent_id if not any_accepted else None

    accepted, verdicts = [], []
    for u, score, norm_dev, dir_dev in scored:
        ok = score <= threshold or u.agent_id == fallback_id
        if score <= threshold:
            reason = VerdictReason.OK
        elif norm_dev >= dir_dev:
            reason = VerdictReason.NORM_OUTLIER
        else:
            reason = VerdictReason.DIRECTION_OUTLIER
        verdicts.append(AnomalyVerdict(u.agent_id, score, ok, reason))
        if ok:
            accepted.append(u)
    return accepted, verdicts


def perturb_observation(obs: np.ndarray, epsilon: float,
                        rng: np.random.Generator) -> np.ndarray:
    """Bounded uniform input noise for adversarial training; stays in [0,1]."""
    if epsilon < 0:
        raise ValueError("epsilon must be >= 0")
    if epsilon == 0:
        return obs.copy()
    return np.clip(obs + rng.uniform(-epsilon, epsilon, size=obs.shape), 0.0, 1.0)
