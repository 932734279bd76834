"""Dec-POMDP environment and multi-agent Q-learning (VDN / IQL)."""
from .env import HapsEnv, StepResult, team_reward
from .learner import (Learner, ReplayBuffer, TrainingError, act, epsilon_at, td_loss, td_target, train,
                      vdn_mix)
from .networks import AgentNets

__all__ = ["HapsEnv", "StepResult", "team_reward", "Learner", "ReplayBuffer", "TrainingError", "act",
           "epsilon_at", "td_loss", "td_target", "train", "vdn_mix", "AgentNets"]
