"""Communication-free multi-robot goal allocation with higher-order active inference."""
from .belief import BeliefState, FreeEnergyReport, bayes_update, joint_over_configs, softmax_rows
from .core import ConfigurationSpace, ControlInput, Goal, Mission, Modality, NoiseModel, RobotState, \
    enumerate_valid_configs
from .harness import MissionKind, Reasoning, ScenarioSpec, Tunables, generate_scenario, run_campaign, run_trial

__all__ = [
    "BeliefState", "ConfigurationSpace", "ControlInput", "FreeEnergyReport", "Goal", "Mission", "MissionKind",
    "Modality", "NoiseModel", "Reasoning", "RobotState", "ScenarioSpec", "Tunables", "bayes_update",
    "enumerate_valid_configs", "generate_scenario", "joint_over_configs", "run_campaign", "run_trial",
    "softmax_rows",
]
__version__ = "0.1.0"
