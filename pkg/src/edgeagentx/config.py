"""Experiment configuration: flat `section.key = value` text files.

Unknown keys are rejected, every value is validated against the type
invariants, and `render_config(parse_config(text))` reparses to an equal
configuration.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace

from .agents import Hyperparams, Mode
from .defense import AttackConfig, PoisonMode, DEFAULT_THRESHOLD
from .env import ConfigError, EnvConfig, JamEvent, RewardWeights


class Variant(enum.Enum):
    EDGEAGENTX = "EDGEAGENTX"
    NO_DEFENSE = "NO_DEFENSE"
    FED_NO_MARL = "FED_NO_MARL"
    INDEPENDENT = "INDEPENDENT"
    CENTRALIZED = "CENTRALIZED"


#: Learning mode, federation, and defense wiring per experiment variant.
VARIANT_MODE = {
    Variant.EDGEAGENTX: Mode.MADDPG,
    Variant.NO_DEFENSE: Mode.MADDPG,
    Variant.FED_NO_MARL: Mode.FED_NO_MARL,
    Variant.INDEPENDENT: Mode.INDEPENDENT,
    Variant.CENTRALIZED: Mode.CENTRALIZED,
}
FEDERATED_VARIANTS = (Variant.EDGEAGENTX, Variant.NO_DEFENSE, Variant.FED_NO_MARL)
DEFENDED_VARIANTS = (Variant.EDGEAGENTX, Variant.FED_NO_MARL)


@dataclass(frozen=True)
class DefenseConfig:
    threshold: float = DEFAULT_THRESHOLD
    perturb_prob: float = 0.25
    perturb_eps: float = 0.05

    def validate(self) -> None:
        if self.threshold < 0:
            raise ConfigError("defense.threshold must be >= 0")
        if not 0.0 <= self.perturb_prob <= 1.0:
            raise ConfigError("defense.perturb_prob must be in [0,1]")
        if self.perturb_eps < 0:
            raise ConfigError("defense.perturb_eps must be >= 0")


@dataclass(frozen=True)
class ExperimentConfig:
    env: EnvConfig = EnvConfig()
    hyper: Hyperparams = Hyperparams()
    weights: RewardWeights = RewardWeights()
    attack: AttackConfig = AttackConfig()
    defense: DefenseConfig = DefenseConfig()
    variant: Variant = Variant.EDGEAGENTX
    episodes: int = 300
    seeds: tuple[int, ...] = (1, 2, 3, 4, 5)
    output_dir: str = "out"
    eval_episodes: int = 20
    n_groups: int = 2
    rounds_per_aggregation: int = 2
    noise_sigma_final: float = 0.05
    workers: int = 1

    @property
    def mode(self) -> Mode:
        return VARIANT_MODE[self.variant]

    @property
    def federation_enabled(self) -> bool:
        return self.variant in FEDERATED_VARIANTS

    @property
    def defense_on(self) -> bool:
        return self.variant in DEFENDED_VARIANTS

    def validate(self) -> None:
        self.env.validate()
        self.hyper.validate()
        self.weights.validate()
        self.attack.validate()
        self.defense.validate()
        if self.episodes < 1:
            raise ConfigError("run.episodes must be >= 1")
        if not self.seeds:
            raise ConfigError("run.seeds must be nonempty")
        if self.eval_episodes < 1:
            raise ConfigError("run.eval_episodes must be >= 1")
        if self.n_groups < 1:
            raise ConfigError("plan.n_groups must be >= 1")
        if self.n_groups > self.env.n_agents:
            raise ConfigError("plan.n_groups must be <= env.n_agents")
        if self.rounds_per_aggregation < 1:
            raise ConfigError("plan.rounds_per_aggregation must be >= 1")
        if not 0.0 <= self.noise_sigma_final <= self.hyper.noise_sigma:
            raise ConfigError(
                "hyper.noise_sigma_final must be in [0, hyper.noise_sigma]")
        if self.workers < 1:
            raise ConfigError("run.workers must be >= 1")
        if self.hyper.mode is not self.mode:
            raise ConfigError(
                f"variant {self.variant.value} requires mode {self.mode.value}")


def _parse_bool(s: str) -> bool:
    low = s.strip().lower()
    if low in ("true", "1", "yes", "on"):
        return True
    if low in ("false", "0", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _parse_seeds(s: str) -> tuple[int, ...]:
    return tuple(int(part.strip()) for part in s.split(",") if part.strip())


# key -> (target section attr or None for run-level, field name, parser)
_SCHEMA: dict[str, tuple[str | None, str, object]] = {
    "env.n_agents": ("env", "n_agents", int),
    "env.area_km": ("env", "area_km", float),
    "env.episode_len": ("env", "episode_len", int),
    "env.step_seconds": ("env", "step_seconds", float),
    "env.n_gateways": ("env", "n_gateways", int),
    "env.traffic_rate": ("env", "traffic_rate", float),
    "env.link_range_km": ("env", "link_range_km", float),
    "env.base_capacity": ("env", "base_capacity", int),
    "env.queue_limit": ("env", "queue_limit", int),
    "env.mobility_speed_kmps": ("env", "mobility_speed_kmps", float),
    "env.seed": ("env", "seed", int),
    "hyper.discount": ("hyper", "discount", float),
    "hyper.soft_tau": ("hyper", "soft_tau", float),
    "hyper.batch_size": ("hyper", "batch_size", int),
    "hyper.noise_sigma": ("hyper", "noise_sigma", float),
    "hyper.actor_lr": ("hyper", "actor_lr", float),
    "hyper.critic_lr": ("hyper", "critic_lr", float),
    "hyper.update_every": ("hyper", "update_every", int),
    "hyper.noise_sigma_final": (None, "noise_sigma_final", float),
    "weights.alpha": ("weights", "alpha", float),
    "weights.beta": ("weights", "beta", float),
    "weights.gamma": ("weights", "gamma", float),
    "weights.delta": ("weights", "delta", float),
    "attack.poison_fraction": ("attack", "poison_fraction", float),
    "attack.poison_mode": ("attack", "poison_mode", lambda s: PoisonMode(s.strip())),
    "attack.poison_scale": ("attack", "poison_scale", float),
    "attack.jam_enabled": ("attack", "jam_enabled", _parse_bool),
    "attack.seed": ("attack", "seed", int),
    "defense.threshold": ("defense", "threshold", float),
    "defense.perturb_prob": ("defense", "perturb_prob", float),
    "defense.perturb_eps": ("defense", "perturb_eps", float),
    "plan.n_groups": (None, "n_groups", int),
    "plan.rounds_per_aggregation": (None, "rounds_per_aggregation", int),
    "run.variant": (None, "variant", lambda s: Variant(s.strip())),
    "run.episodes": (None, "episodes", int),
    "run.seeds": (None, "seeds", _parse_seeds),
    "run.output_dir": (None, "output_dir", str),
    "run.eval_episodes": (None, "eval_episodes", int),
    "run.workers": (None, "workers", int),
}


def make_jam_schedule(env: EnvConfig) -> tuple[JamEvent, ...]:
    """Fixed two-event schedule scaled to the scenario, active every episode."""
    el, a = env.episode_len, env.area_km
    return (
        JamEvent(el // 4, el // 2, (a / 3.0, a / 3.0), 0.35 * a, 0.6),
        JamEvent((3 * el) // 5, (9 * el) // 10, (2 * a / 3.0, 2 * a / 3.0),
                 0.35 * a, 0.6),
    )


def parse_config(text: str) -> ExperimentConfig:
    """Parse and fully validate a flat key-value configuration."""
    sections: dict[str, dict] = {"env": {}, "hyper": {}, "weights": {},
                                 "attack": {}, "defense": {}}
    run_fields: dict[str, object] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'section.key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in _SCHEMA:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        section, name, parser = _SCHEMA[key]
        try:
            parsed = parser(value)  # type: ignore[operator]
        except (ValueError, KeyError) as exc:
            raise ConfigError(f"line {lineno}: bad value for {key}: {exc}") from exc
        if section is None:
            run_fields[name] = parsed
        else:
            sections[section][name] = parsed

    env = EnvConfig(**sections["env"])
    attack = AttackConfig(**sections["attack"])
    if attack.jam_enabled:
        env = replace(env, jam_schedule=make_jam_schedule(env))
    variant = run_fields.get("variant", Variant.EDGEAGENTX)
    hyper = Hyperparams(mode=VARIANT_MODE[variant], **sections["hyper"])
    config = ExperimentConfig(
        env=env, hyper=hyper,
        weights=RewardWeights(**sections["weights"]),
        attack=attack, defense=DefenseConfig(**sections["defense"]),
        **run_fields)
    config.validate()
    return config


def render_config(config: ExperimentConfig) -> str:
    """Inverse of parse_config (up to formatting)."""
    values = {
        "env": config.env, "hyper": config.hyper, "weights": config.weights,
        "attack": config.attack, "defense": config.defense,
    }
    lines = []
    for key, (section, name, _parser) in _SCHEMA.items():
        obj = config if section is None else values[section]
        v = getattr(obj, name)
        if isinstance(v, enum.Enum):
            v = v.value
        elif isinstance(v, bool):
            v = "true" if v else "false"
        elif isinstance(v, tuple):
            v = ",".join(str(x) for x in v)
        lines.append(f"{key} = {v}")
    return "\n".join(lines) + "\n"
