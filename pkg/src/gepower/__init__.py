"""Optimal transmission-power allocation over identical Gilbert-Elliott channels.

Solves the belief-state MDP two independent ways (value iteration, linear
programming), verifies the threshold/symmetry/contiguity structure of the
optimal policy, and validates values by Monte Carlo simulation.
"""
from .model import (
    Action,
    ChannelParams,
    ProblemSpec,
    RewardSchedule,
    enumerate_actions,
    immediate_reward,
    propagate_belief,
    propagate_belief_n,
    spec_from_json,
    spec_to_json,
    stationary_belief,
    successor_outcomes,
    validate_spec,
)
from .solver import (
    BeliefGrid,
    Policy,
    ValueFunction,
    bellman_backup,
    build_grid,
    build_reachable_set,
    extract_policy,
    interpolate,
    q_value,
    solve_reachable,
    value_iterate,
)

__version__ = "0.1.0"

__all__ = [
    "Action", "ChannelParams", "ProblemSpec", "RewardSchedule",
    "enumerate_actions", "immediate_reward", "propagate_belief",
    "propagate_belief_n", "spec_from_json", "spec_to_json",
    "stationary_belief", "successor_outcomes", "validate_spec",
    "BeliefGrid", "Policy", "ValueFunction", "bellman_backup", "build_grid",
    "build_reachable_set", "extract_policy", "interpolate", "q_value",
    "solve_reachable", "value_iterate", "__version__",
]
