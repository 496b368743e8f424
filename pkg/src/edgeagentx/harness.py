"""Experiment orchestration: seeded runs, metrics CSVs, variant comparison.

Every run is deterministic in (config, seed) and writes
`metrics_<variant>_<seed>.csv` plus a per-variant summary; comparisons
additionally emit a machine-readable table and rendered figures.
"""
from __future__ import annotations

import io
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import agents, federation
from .agents import Mode, ReplayBuffer, make_brains, train_episode
from .config import ExperimentConfig, Variant
from .env import ACT_DIM, OBS_DIM, init_world
from .federation import GlobalModel, broadcast, even_groups
from .nets import flatten

METRICS_HEADER = ("seed,episode,mean_reward,mean_latency_ms,throughput_per_s,"
                  "loss_rate,per_agent_delivered_variance,round_rejections")
SUMMARY_HEADER = ("seed,convergence_episode,final_window_reward,"
                  "final_latency_ms,final_throughput,diverged")
ROUNDS_HEADER = "round,agent_id,score,accepted,reason"

CONVERGENCE_WINDOW = 25
CONVERGENCE_TOL = 0.02

BUFFER_CAPACITY = 100_000


@dataclass
class MetricsRecord:
    seed: int
    episode: int
    mean_reward: float
    mean_latency_ms: float
    throughput_per_s: float
    loss_rate: float
    per_agent_delivered_variance: float
    round_rejections: int


@dataclass
class RunSummary:
    seed: int
    convergence_episode: int | None
    final_window_reward: float
    final_latency_ms: float
    final_throughput: float
    diverged: bool = False


def _fmt(x: float) -> str:
    return f"{x:.17g}"


def detect_convergence(rewards, window: int = CONVERGENCE_WINDOW,
                       tol: float = CONVERGENCE_TOL) -> int | None:
    """First episode where the smoothed reward stays within tol*range.

    The plateau must hold through the end of training and be observed for
    at least one further window length, so a still-climbing curve near its
    end does not count as converged.
    """
    if window < 1:
        raise ValueError("window must be >= 1")
    rewards = np.asarray(rewards, dtype=np.float64)
    n = rewards.size
    if n < 2 * window:
        return None
    smoothed = np.convolve(rewards, np.ones(window) / window, mode="valid")
    band = tol * (smoothed.max() - smoothed.min())
    m = smoothed.size
    # suffix extrema let the scan run in O(m)
    suf_max = np.maximum.accumulate(smoothed[::-1])[::-1]
    suf_min = np.minimum.accumulate(smoothed[::-1])[::-1]
    for e in range(0, m - window + 1):
        if (suf_max[e] - smoothed[e] <= band
                and smoothed[e] - suf_min[e] <= band):
            return e
    return None


# Exploration noise and learning rates decay linearly and reach their
# floor at this fraction of training, so the final stretch measures a
# settled policy instead of optimizer drift.
ANNEAL_FRACTION = 0.8


def _anneal_progress(episode: int, episodes: int) -> float:
    if episodes <= 1:
        return 1.0
    return min(1.0, episode / ((episodes - 1) * ANNEAL_FRACTION))


def _episode_sigma(hp_sigma: float, sigma_final: float, episode: int,
                   episodes: int) -> float:
    frac = _anneal_progress(episode, episodes)
    return hp_sigma + (sigma_final - hp_sigma) * frac


def _anneal_lr(brains, base_lrs, episode: int, episodes: int) -> None:
    scale = 1.0 - _anneal_progress(episode, episodes)
    for b, (actor_lr, critic_lr) in zip(brains, base_lrs):
        b.actor_opt.lr = actor_lr * scale
        b.critic_opt.lr = critic_lr * scale


def _pick_attackers(config: ExperimentConfig, seed: int) -> frozenset[int]:
    n = config.env.n_agents
    count = int(round(config.attack.poison_fraction * n))
    if config.attack.poison_fraction > 0:
        count = max(count, 1)
    if count == 0:
        return frozenset()
    rng = np.random.Generator(np.random.PCG64(
        np.random.SeedSequence([config.attack.seed, seed])))
    # gateways are not eligible attackers
    eligible = np.arange(config.env.n_gateways, n)
    return frozenset(int(i) for i in rng.choice(eligible, size=count, replace=False))


def run_single_seed(config: ExperimentConfig, seed: int
                    ) -> tuple[list[MetricsRecord], RunSummary, list[tuple]]:
    """Train and evaluate one seed; returns metrics, summary, round rows."""
    mode = config.mode
    hp = replace(config.hyper, mode=mode)
    n = config.env.n_agents
    n_brains = 1 if mode is Mode.CENTRALIZED else n
    obs_dim = OBS_DIM * (n if mode is Mode.CENTRALIZED else 1)
    act_dim = ACT_DIM * (n if mode is Mode.CENTRALIZED else 1)

    root = np.random.SeedSequence([seed])
    (brain_seed, agent_seed, env_stream_seed, eval_stream_seed,
     layout_seed) = (int(s) for s in root.generate_state(5, dtype=np.uint64))
    brains = make_brains(n, OBS_DIM, ACT_DIM, hp, brain_seed)
    if config.federation_enabled:
        # federated agents all start from one global model, as a server
        # would distribute it; without this the anomaly filter sees the
        # heterogeneous initializations as mutual outliers and every
        # round stalls
        broadcast(GlobalModel(0, flatten(brains[0].actor),
                              flatten(brains[0].critic)), brains)
        for b in brains:
            b.target_actor = b.actor.copy()
            b.target_critic = b.critic.copy()
    # make_brains may damp per-brain lrs (centralized joint actor);
    # anneal from those, not from the raw hyperparameters
    base_lrs = [(b.actor_opt.lr, b.critic_opt.lr) for b in brains]
    # never allocate beyond what the run can produce
    capacity = min(BUFFER_CAPACITY, config.episodes * config.env.episode_len)
    buffer = ReplayBuffer(capacity, n_brains, obs_dim, act_dim)
    rng = np.random.Generator(np.random.PCG64(agent_seed))
    attack_rng = np.random.Generator(np.random.PCG64(
        np.random.SeedSequence([config.attack.seed, seed, 1])))
    attackers = _pick_attackers(config, seed)
    plan = even_groups(n, config.n_groups)

    perturb_prob = config.defense.perturb_prob if config.defense_on else 0.0
    episode_rewards: list[float] = []
    records: list[MetricsRecord] = []
    round_rows: list[tuple] = []
    diverged = False
    round_idx = 0

    # one layout per seed; traffic seeds cycle through a pool the size of
    # the smoothing window, so each moving-average window sees every trace
    # exactly once and trace-to-trace variance cancels in the curve
    env_cfg = replace(config.env, seed=layout_seed)
    trace_seeds = np.random.SeedSequence([env_stream_seed]).generate_state(
        CONVERGENCE_WINDOW, dtype=np.uint64)
    for ep in range(config.episodes):
        sigma = _episode_sigma(hp.noise_sigma, config.noise_sigma_final,
                               ep, config.episodes)
        ep_hp = replace(hp, noise_sigma=sigma)
        _anneal_lr(brains, base_lrs, ep, config.episodes)
        anneal_scale = 1.0 - _anneal_progress(ep, config.episodes)
        world = init_world(env_cfg)
        world.rng = np.random.Generator(np.random.PCG64(
            int(trace_seeds[ep % CONVERGENCE_WINDOW])))
        try:
            _, metrics = train_episode(
                brains, world, ep_hp, buffer, config.weights, rng,
                train=True, perturb_prob=perturb_prob * anneal_scale,
                perturb_eps=config.defense.perturb_eps)
        except ValueError:
            diverged = True
            break

        rejections = 0
        if (config.federation_enabled
                and (ep + 1) % config.rounds_per_aggregation == 0):
            round_idx += 1
            _, report = federation.federated_round(
                brains, plan, round_idx,
                defense_on=config.defense_on,
                attacker_set=attackers if config.attack.poison_fraction > 0 else frozenset(),
                attack=config.attack, rng=attack_rng,
                threshold=config.defense.threshold)
            rejections = len(report.rejected)
            for v in report.verdicts:
                round_rows.append((round_idx, v.agent_id, v.score,
                                   v.accepted, v.reason.value))

        episode_rewards.append(metrics.mean_reward)
        records.append(MetricsRecord(
            seed, ep, metrics.mean_reward, metrics.mean_latency_ms,
            metrics.throughput_per_s, metrics.loss_rate,
            metrics.per_agent_delivered_variance, rejections))

    # Noise-free evaluation; no parameter updates, no perturbation.
    eval_hp = replace(hp, noise_sigma=0.0)
    eval_seeds = np.random.SeedSequence([eval_stream_seed]).generate_state(
        config.eval_episodes, dtype=np.uint64)
    eval_rewards, eval_delivered, eval_latency, eval_steps = [], 0, 0.0, 0
    if not diverged:
        for k in range(config.eval_episodes):
            world = init_world(env_cfg)
            world.rng = np.random.Generator(np.random.PCG64(int(eval_seeds[k])))
            _, em = train_episode(brains, world, eval_hp, buffer,
                                  config.weights, rng, train=False)
            eval_rewards.append(em.mean_reward)
            eval_delivered += em.delivered
            eval_latency += em.mean_latency_ms * em.delivered
            eval_steps += config.env.episode_len

    summary = RunSummary(
        seed=seed,
        convergence_episode=detect_convergence(episode_rewards),
        final_window_reward=float(np.mean(eval_rewards)) if eval_rewards else math.nan,
        final_latency_ms=eval_latency / eval_delivered if eval_delivered else 0.0,
        final_throughput=(eval_delivered / (eval_steps * config.env.step_seconds)
                          if eval_steps else 0.0),
        diverged=diverged)
    return records, summary, round_rows


def _metrics_csv(records) -> str:
    out = io.StringIO()
    out.write(METRICS_HEADER + "\n")
    for r in records:
        out.write(",".join([
            str(r.seed), str(r.episode), _fmt(r.mean_reward),
            _fmt(r.mean_latency_ms), _fmt(r.throughput_per_s),
            _fmt(r.loss_rate), _fmt(r.per_agent_delivered_variance),
            str(r.round_rejections)]) + "\n")
    return out.getvalue()


def _summary_csv(summaries) -> str:
    out = io.StringIO()
    out.write(SUMMARY_HEADER + "\n")
    for s in summaries:
        conv = "" if s.convergence_episode is None else str(s.convergence_episode)
        out.write(",".join([
            str(s.seed), conv, _fmt(s.final_window_reward),
            _fmt(s.final_latency_ms), _fmt(s.final_throughput),
            "1" if s.diverged else "0"]) + "\n")
    return out.getvalue()


def _rounds_csv(rows) -> str:
    out = io.StringIO()
    out.write(ROUNDS_HEADER + "\n")
    for rnd, agent_id, score, accepted, reason in rows:
        out.write(f"{rnd},{agent_id},{_fmt(score)},"
                  f"{'1' if accepted else '0'},{reason}\n")
    return out.getvalue()


def _write(path: Path, text: str) -> None:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text, encoding="utf-8", newline="\n")
    except OSError as exc:
        raise IOError(f"cannot write {path}: {exc}") from exc


def _seed_worker(args):
    config, seed = args
    return run_single_seed(config, seed)


def run_experiment(config: ExperimentConfig) -> list[RunSummary]:
    """Run all seeds of one variant; writes per-seed metrics and a summary."""
    config.validate()
    out_dir = Path(config.output_dir)
    tag = config.variant.value

    jobs = [(config, seed) for seed in config.seeds]
    if config.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            results = list(pool.map(_seed_worker, jobs))
    else:
        results = [_seed_worker(j) for j in jobs]

    summaries = []
    for seed, (records, summary, round_rows) in zip(config.seeds, results):
        _write(out_dir / f"metrics_{tag}_{seed}.csv", _metrics_csv(records))
        if round_rows:
            _write(out_dir / f"rounds_{tag}_{seed}.csv", _rounds_csv(round_rows))
        summaries.append(summary)
    _write(out_dir / f"summary_{tag}.csv", _summary_csv(summaries))
    return summaries


@dataclass
class VariantStats:
    variant: Variant
    reward_mean: float
    reward_sd: float
    latency_mean: float
    latency_sd: float
    throughput_mean: float
    throughput_sd: float
    convergence_mean: float  # nan when no seed converged
    convergence_sd: float
    summaries: list[RunSummary]


def _mean_sd(values) -> tuple[float, float]:
    values = [v for v in values if v is not None and not math.isnan(v)]
    if not values:
        return math.nan, math.nan
    arr = np.asarray(values, dtype=np.float64)
    return float(arr.mean()), float(arr.std(ddof=1)) if arr.size > 1 else 0.0


def compare_variants(configs: list[ExperimentConfig],
                     render_figures: bool = True) -> list[VariantStats]:
    """Run several variants of one scenario and tabulate the results.

    Configs must be identical apart from the variant and its derived
    hyperparameter mode. Emits comparison.csv, comparison.txt, and (by
    default) matplotlib figures next to the per-run CSVs.
    """
    if not configs:
        raise ValueError("compare_variants requires at least one config")
    base = _strip_variant(configs[0])
    for c in configs[1:]:
        if _strip_variant(c) != base:
            raise ValueError("configs must differ only in run.variant")

    stats = []
    for c in configs:
        summaries = run_experiment(c)
        rw = _mean_sd([s.final_window_reward for s in summaries])
        lat = _mean_sd([s.final_latency_ms for s in summaries])
        thr = _mean_sd([s.final_throughput for s in summaries])
        conv = _mean_sd([s.convergence_episode for s in summaries])
        stats.append(VariantStats(c.variant, *rw, *lat, *thr, *conv, summaries))

    out_dir = Path(configs[0].output_dir)
    _write(out_dir / "comparison.csv", _comparison_csv(stats))
    _write(out_dir / "comparison.txt", _comparison_table(stats))
    if render_figures:
        from . import plots
        plots.render_comparison_figures(configs, stats, out_dir)
    return stats


def _strip_variant(config: ExperimentConfig) -> ExperimentConfig:
    return replace(config, variant=Variant.EDGEAGENTX,
                   hyper=replace(config.hyper, mode=Mode.MADDPG))


def _comparison_csv(stats) -> str:
    out = io.StringIO()
    out.write("variant,reward_mean,reward_sd,latency_ms_mean,latency_ms_sd,"
              "throughput_mean,throughput_sd,convergence_mean,convergence_sd\n")
    for s in stats:
        out.write(",".join([s.variant.value] + [_fmt(v) for v in (
            s.reward_mean, s.reward_sd, s.latency_mean, s.latency_sd,
            s.throughput_mean, s.throughput_sd,
            s.convergence_mean, s.convergence_sd)]) + "\n")
    return out.getvalue()


def _comparison_table(stats) -> str:
    header = (f"{'variant':<14} {'reward':>18} {'latency_ms':>18} "
              f"{'throughput':>18} {'convergence':>18}\n")
    lines = [header, "-" * len(header) + "\n"]
    for s in stats:
        def cell(mean, sd):
            if math.isnan(mean):
                return "n/a"
            return f"{mean:.3f} ± {sd:.3f}"
        lines.append(f"{s.variant.value:<14} {cell(s.reward_mean, s.reward_sd):>18} "
                     f"{cell(s.latency_mean, s.latency_sd):>18} "
                     f"{cell(s.throughput_mean, s.throughput_sd):>18} "
                     f"{cell(s.convergence_mean, s.convergence_sd):>18}\n")
    return "".join(lines)
