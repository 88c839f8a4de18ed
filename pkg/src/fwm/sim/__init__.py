"""Deterministic block world, renderer, experts and dataset files."""
from .dataset import DataGenConfig, Dataset, Episode, file_sha256, generate_dataset, iter_episodes
from .experts import Blueprint, expert_action, expert_choice
from .render import RenderOptions, render
from .state import Action, Block, SimState, action_for, step
from .tasks import TASKS, GoalSpec, Task, construct, get_task, goal_reached

__all__ = ["Action", "Block", "Blueprint", "DataGenConfig", "Dataset", "Episode", "GoalSpec",
           "RenderOptions", "SimState", "TASKS", "Task", "action_for", "construct", "expert_action",
           "expert_choice", "file_sha256", "generate_dataset", "get_task", "goal_reached",
           "iter_episodes", "render", "step"]
