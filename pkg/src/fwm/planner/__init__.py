from .heuristics import (MODES, HeuristicConfig, heuristic_l2, heuristic_pp, heuristic_seq, score,
                         score_l2, score_pp, score_seq)
from .matching import Matching, batched_match, brute_force_minimum, hungarian_match
from .search import (COUNTER, Ensemble, EpisodeResult, PlanDecision, action_grid, episode_order,
                     goal_progress, goals_from_dataset, member_scores, plan_step, planner_workers,
                     run_episode)

__all__ = ["MODES", "HeuristicConfig", "heuristic_l2", "heuristic_pp", "heuristic_seq", "score",
           "score_l2", "score_pp", "score_seq", "Matching", "batched_match",
           "brute_force_minimum", "hungarian_match", "COUNTER", "Ensemble", "EpisodeResult",
           "PlanDecision", "action_grid", "episode_order", "goal_progress", "goals_from_dataset",
           "member_scores", "plan_step", "planner_workers", "run_episode"]
