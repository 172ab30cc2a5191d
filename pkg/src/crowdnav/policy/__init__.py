from .checkpoint import Checkpoint
from .encoding import (
    ACTION_NAMES,
    ACTIONS,
    N_ACTIONS,
    STATE_SIZE,
    AgentObservation,
    action_mask,
    apply_action,
    encode_joint_state,
)
from .network import PolicyNetwork, masked_softmax, policy_gradients
from .raster import rasterize_continuous_path
from .rewards import RewardSpec, discounted_returns, reward
from .train import PolicyController, TrainConfig, episode_rewards, select_action, train_policy
