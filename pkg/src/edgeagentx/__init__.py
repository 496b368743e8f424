"""Federated multi-agent RL on a simulated tactical mesh network."""

from .env import (ACT_DIM, OBS_DIM, EnvConfig, JamEvent, RewardWeights,
                  apply_jamming, compute_reward, init_world, observe, step)
from .nets import (FlatParams, Mlp, OptState, apply_update, backward, flatten,
                   forward, init_mlp, load_checkpoint, save_checkpoint,
                   unflatten)
from .agents import (AgentBrain, Hyperparams, Mode, ReplayBuffer, make_brains,
                     select_action, soft_update, train_episode)
from .federation import (AggregationPlan, GlobalModel, ModelUpdate, broadcast,
                         fedavg, federated_round, hierarchical_aggregate)
from .defense import (AttackConfig, AnomalyVerdict, PoisonMode, filter_updates,
                      perturb_observation, poison_update, score_update)
from .config import ExperimentConfig, Variant, parse_config, render_config
from .harness import (MetricsRecord, RunSummary, compare_variants,
                      detect_convergence, run_experiment)

__version__ = "0.1.0"
