"""Policy/value networks, autodiff, PPO and Fair-PPO objectives."""

from .network import (
    Architecture,
    ParameterSet,
    entropy,
    init_params,
    policy_forward,
    policy_log_probs,
    sample_actions,
    value_forward,
    zero_params,
)
from .optim import AdamState, optimize_step
from .ppo import (
    AdvantageBatch,
    FairPpoConfig,
    FairTerms,
    PpoConfig,
    advantages,
    clip_objective,
    dynamic_lambda,
    fair_ppo_loss,
    gae,
    gradient,
    numerical_gradient,
    ppo_loss,
    ppo_update,
    value_loss,
)
