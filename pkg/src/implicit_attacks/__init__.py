"""Tabular two-agent MDP toolkit for implicit poisoning attacks."""
from .mdp import TabularPolicy, TwoAgentMDP, true_gap
from .cps import CpsConfig, run_cps, attack_cost
from .envs import build_env

__all__ = ["TabularPolicy", "TwoAgentMDP", "true_gap", "CpsConfig", "run_cps", "attack_cost", "build_env"]
