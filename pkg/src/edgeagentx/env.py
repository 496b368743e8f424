"""Discrete-time packet-level model of a mobile multi-hop mesh network.

One step: decode actions, generate traffic, forward packets toward the
gateway(s), move nodes (reflecting random walk), recompute links and
jamming. All randomness comes from the world's own generator, so a step
is a pure function of (world, actions) and trajectories are bit-identical
for a fixed (config, seed, action sequence).
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

# Neighbor slots in every observation/action vector.
NEIGHBOR_SLOTS = 5

# Observation layout: battery, queue fill, K link qualities, K neighbor
# queue fills, normalized gateway distance, jam indicator.
OBS_DIM = 2 * NEIGHBOR_SLOTS + 4
# Action layout: transmit fraction, K forwarding logits, power level.
ACT_DIM = NEIGHBOR_SLOTS + 2


class ConfigError(ValueError):
    """An EnvConfig field violates its invariant."""


@dataclass(frozen=True)
class JamEvent:
    start_step: int
    end_step: int
    center: tuple[float, float]
    radius_km: float
    loss_boost: float

    def active(self, step: int) -> bool:
        return self.start_step <= step <= self.end_step

    def covers(self, position: np.ndarray) -> bool:
        dx = position[0] - self.center[0]
        dy = position[1] - self.center[1]
        return dx * dx + dy * dy <= self.radius_km * self.radius_km


@dataclass(frozen=True)
class RewardWeights:
    alpha: float = 1.0    # per packet/s throughput
    beta: float = 0.01    # per ms mean latency
    gamma: float = 0.5    # per lost packet
    delta: float = 0.1    # per adversarial detection

    def validate(self) -> None:
        for name in ("alpha", "beta", "gamma", "delta"):
            if getattr(self, name) < 0:
                raise ConfigError(f"weights.{name} must be >= 0")


@dataclass(frozen=True)
class EnvConfig:
    n_agents: int = 20
    area_km: float = 5.0
    episode_len: int = 100
    step_seconds: float = 1.0
    n_gateways: int = 1
    traffic_rate: float = 0.3
    link_range_km: float = 2.0
    base_capacity: int = 5
    queue_limit: int = 20
    mobility_speed_kmps: float = 0.1
    jam_schedule: tuple[JamEvent, ...] = ()
    seed: int = 0

    def validate(self) -> None:
        if self.n_agents < 2:
            raise ConfigError("env.n_agents must be >= 2")
        if self.episode_len < 1:
            raise ConfigError("env.episode_len must be >= 1")
        if self.area_km <= 0:
            raise ConfigError("env.area_km must be > 0")
        if self.link_range_km <= 0:
            raise ConfigError("env.link_range_km must be > 0")
        if self.n_gateways < 1:
            raise ConfigError("env.n_gateways must be >= 1")
        if self.n_gateways >= self.n_agents:
            raise ConfigError("env.n_gateways must be < env.n_agents")
        if self.step_seconds <= 0:
            raise ConfigError("env.step_seconds must be > 0")
        if self.traffic_rate < 0:
            raise ConfigError("env.traffic_rate must be >= 0")
        if self.base_capacity < 1:
            raise ConfigError("env.base_capacity must be >= 1")
        if self.queue_limit < 1:
            raise ConfigError("env.queue_limit must be >= 1")
        if self.mobility_speed_kmps < 0:
            raise ConfigError("env.mobility_speed_kmps must be >= 0")
        for ev in self.jam_schedule:
            if ev.start_step > ev.end_step:
                raise ConfigError("jam event start_step must be <= end_step")
            if ev.radius_km <= 0:
                raise ConfigError("jam event radius_km must be > 0")
            if not 0.0 <= ev.loss_boost <= 1.0:
                raise ConfigError("jam event loss_boost must be in [0,1]")


@dataclass(frozen=True)
class Packet:
    id: int
    src: int
    created_step: int
    hops: int = 0
    size: int = 1


@dataclass
class NodeState:
    position: np.ndarray
    velocity: np.ndarray
    battery: float = 1.0
    queue: list[Packet] = field(default_factory=list)
    is_gateway: bool = False
    compromised: bool = False


@dataclass
class LinkState:
    endpoints: tuple[int, int]  # sorted (low, high)
    quality: float
    jammed: bool = False


@dataclass
class StepOutcome:
    delivered: int
    delivered_latency_sum: float  # ms
    generated: int
    dropped: int
    adversarial_detected: list[bool]
    step_seconds: float
    delivered_per_src: np.ndarray


@dataclass
class WorldState:
    config: EnvConfig
    nodes: list[NodeState]
    links: dict[tuple[int, int], LinkState]
    step_count: int
    rng: np.random.Generator
    next_packet_id: int = 0
    total_generated: int = 0
    total_delivered: int = 0
    total_dropped: int = 0

    def in_flight(self) -> int:
        return sum(len(n.queue) for n in self.nodes)


def _clone_world(world: WorldState) -> WorldState:
    """Cheap deep-enough copy: packets are immutable and can be shared."""
    nodes = [NodeState(n.position.copy(), n.velocity.copy(), n.battery,
                       list(n.queue), n.is_gateway, n.compromised)
             for n in world.nodes]
    links = {k: LinkState(l.endpoints, l.quality, l.jammed)
             for k, l in world.links.items()}
    bg = np.random.PCG64()
    bg.state = world.rng.bit_generator.state
    return WorldState(world.config, nodes, links, world.step_count,
                      np.random.Generator(bg), world.next_packet_id,
                      world.total_generated, world.total_delivered,
                      world.total_dropped)


def init_world(config: EnvConfig) -> WorldState:
    """Build the initial world from the config's seed.

    The first n_gateways nodes are gateways at planned positions spaced
    along the area diagonal (a single gateway sits at the center); mobile
    agent nodes start uniformly at random.
    """
    config.validate()
    rng = np.random.Generator(np.random.PCG64(config.seed))
    nodes = []
    for i in range(config.n_agents):
        if i < config.n_gateways:
            frac = (i + 1) / (config.n_gateways + 1)
            pos = np.array([config.area_km * frac, config.area_km * frac])
        else:
            pos = rng.uniform(0.0, config.area_km, size=2)
        nodes.append(NodeState(
            position=pos,
            velocity=np.zeros(2),
            is_gateway=i < config.n_gateways,
        ))
    world = WorldState(config=config, nodes=nodes, links={}, step_count=0, rng=rng)
    _recompute_links(world)
    apply_jamming(world)
    return world


def _recompute_links(world: WorldState) -> None:
    """Rebuild the link set from pairwise distances (no jamming applied)."""
    cfg = world.config
    links: dict[tuple[int, int], LinkState] = {}
    pos = np.stack([n.position for n in world.nodes])
    for i in range(cfg.n_agents):
        for j in range(i + 1, cfg.n_agents):
            d = float(np.hypot(*(pos[i] - pos[j])))
            if d <= cfg.link_range_km:
                q = min(max(1.0 - d / cfg.link_range_km, 0.0), 1.0)
                links[(i, j)] = LinkState((i, j), q)
    world.links = links


def apply_jamming(world: WorldState) -> WorldState:
    """Degrade links with an endpoint inside any active jam disc (in place).

    Outside jam windows all jammed flags are false.
    """
    active = [ev for ev in world.config.jam_schedule
              if ev.active(world.step_count)]
    for link in world.links.values():
        link.jammed = False
    for ev in active:
        for link in world.links.values():
            a, b = link.endpoints
            if ev.covers(world.nodes[a].position) or ev.covers(world.nodes[b].position):
                link.quality = max(0.0, link.quality - ev.loss_boost)
                link.jammed = True
    return world


def node_jammed(world: WorldState, agent: int) -> bool:
    return any(ev.active(world.step_count) and ev.covers(world.nodes[agent].position)
               for ev in world.config.jam_schedule)


def neighbors_of(world: WorldState, agent: int) -> list[int]:
    """Agents within link range, ascending distance, ties by lower index."""
    me = world.nodes[agent].position
    cand = []
    for (i, j), _link in world.links.items():
        if i == agent:
            cand.append(j)
        elif j == agent:
            cand.append(i)
    cand.sort(key=lambda k: (float(np.hypot(*(world.nodes[k].position - me))), k))
    return cand


def _link_of(world: WorldState, a: int, b: int) -> LinkState:
    return world.links[(a, b) if a < b else (b, a)]


def observe(world: WorldState, agent: int) -> np.ndarray:
    """Local observation vector; all entries normalized to [0,1]."""
    cfg = world.config
    if not 0 <= agent < cfg.n_agents:
        raise IndexError(f"agent index {agent} out of range")
    node = world.nodes[agent]
    obs = np.zeros(OBS_DIM)
    obs[0] = node.battery
    obs[1] = len(node.queue) / cfg.queue_limit
    nbrs = neighbors_of(world, agent)[:NEIGHBOR_SLOTS]
    for slot, k in enumerate(nbrs):
        obs[2 + slot] = _link_of(world, agent, k).quality
        obs[2 + NEIGHBOR_SLOTS + slot] = len(world.nodes[k].queue) / cfg.queue_limit
    gw_dist = min(
        float(np.hypot(*(world.nodes[g].position - node.position)))
        for g in range(cfg.n_gateways))
    diag = cfg.area_km * np.sqrt(2.0)
    obs[2 + 2 * NEIGHBOR_SLOTS] = min(gw_dist / diag, 1.0)
    obs[2 + 2 * NEIGHBOR_SLOTS + 1] = 1.0 if node_jammed(world, agent) else 0.0
    return obs


@dataclass(frozen=True)
class DecodedAction:
    transmit_fraction: float  # [0,1]
    forward_logits: np.ndarray  # K values in [-1,1]
    power_factor: float  # [0.5,1.0]


def decode_action(vec: np.ndarray) -> DecodedAction:
    """Decode a [-1,1]^d vector; total on the whole box."""
    vec = np.clip(np.asarray(vec, dtype=np.float64), -1.0, 1.0)
    if vec.shape != (ACT_DIM,):
        raise ValueError(f"action vector must have shape ({ACT_DIM},)")
    frac = (vec[0] + 1.0) / 2.0
    level = (vec[1 + NEIGHBOR_SLOTS] + 1.0) / 2.0
    return DecodedAction(frac, vec[1:1 + NEIGHBOR_SLOTS].copy(), 0.5 + 0.5 * level)


def step(world: WorldState,
         actions: list[np.ndarray]) -> tuple[WorldState, StepOutcome]:
    """Advance the world one step; returns a new world, input untouched."""
    cfg = world.config
    if len(actions) != cfg.n_agents:
        raise ValueError(f"expected {cfg.n_agents} actions, got {len(actions)}")
    if world.step_count >= cfg.episode_len:
        raise ValueError("episode already over")

    world = _clone_world(world)
    rng = world.rng
    decoded = [decode_action(a) for a in actions]

    generated = dropped = delivered = 0
    latency_sum = 0.0
    detected = [False] * cfg.n_agents
    delivered_per_src = np.zeros(cfg.n_agents, dtype=np.int64)

    # Traffic generation (gateways generate none).
    for i, node in enumerate(world.nodes):
        if node.is_gateway:
            continue
        k = int(rng.poisson(cfg.traffic_rate))
        generated += k
        for _ in range(k):
            if len(node.queue) < cfg.queue_limit:
                node.queue.append(Packet(world.next_packet_id, i, world.step_count))
            else:
                dropped += 1  # queue overflow
            world.next_packet_id += 1

    # Forwarding. Each node transmits on at most one link; arrivals are
    # enqueued after all transmissions so a packet moves one hop per step.
    arrivals: list[tuple[int, Packet]] = []
    for i, node in enumerate(world.nodes):
        if node.is_gateway or not node.queue:
            continue
        act = decoded[i]
        nbrs = neighbors_of(world, i)[:NEIGHBOR_SLOTS]
        if not nbrs:
            continue
        target = nbrs[int(np.argmax(act.forward_logits[:len(nbrs)]))]
        link = _link_of(world, i, target)
        n_send = min(int(act.transmit_fraction * len(node.queue) + 1e-9),
                     cfg.base_capacity)
        if n_send > 0 and link.jammed:
            detected[i] = True
        p = link.quality * act.power_factor
        for _ in range(n_send):
            pkt = node.queue.pop(0)
            if rng.random() < p:
                arrivals.append((target, replace(pkt, hops=pkt.hops + 1)))
            else:
                dropped += 1  # transmission loss
        node.battery = max(0.0, node.battery - 0.001 * n_send * act.power_factor)

    for target, pkt in arrivals:
        tnode = world.nodes[target]
        if tnode.is_gateway:
            delivered += 1
            delivered_per_src[pkt.src] += 1
            latency_sum += (world.step_count - pkt.created_step) * cfg.step_seconds * 1000.0
        elif len(tnode.queue) < cfg.queue_limit:
            tnode.queue.append(pkt)
        else:
            dropped += 1  # receive-side overflow

    # Mobility: reflecting random walk, velocity resampled each step.
    for node in world.nodes:
        if node.is_gateway:
            continue
        angle = rng.uniform(0.0, 2.0 * np.pi)
        speed = rng.uniform(0.0, cfg.mobility_speed_kmps)
        node.velocity = speed * np.array([np.cos(angle), np.sin(angle)])
        pos = node.position + node.velocity
        for d in range(2):
            if pos[d] < 0.0:
                pos[d] = -pos[d]
            if pos[d] > cfg.area_km:
                pos[d] = 2.0 * cfg.area_km - pos[d]
            pos[d] = min(max(pos[d], 0.0), cfg.area_km)
        node.position = pos

    world.step_count += 1
    _recompute_links(world)
    apply_jamming(world)

    world.total_generated += generated
    world.total_delivered += delivered
    world.total_dropped += dropped
    outcome = StepOutcome(delivered, latency_sum, generated, dropped,
                          detected, cfg.step_seconds, delivered_per_src)
    return world, outcome


def compute_reward(outcome: StepOutcome, weights: RewardWeights) -> float:
    """Weighted throughput minus latency, loss, and detection penalties."""
    throughput = outcome.delivered / outcome.step_seconds
    mean_latency = (outcome.delivered_latency_sum / outcome.delivered
                    if outcome.delivered > 0 else 0.0)
    return (weights.alpha * throughput
            - weights.beta * mean_latency
            - weights.gamma * outcome.dropped
            - weights.delta * sum(outcome.adversarial_detected))
