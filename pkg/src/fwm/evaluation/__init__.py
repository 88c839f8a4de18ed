from .metrics import (EPSILON_GRID, PerturbationError, RankingConfig, RankingRecord, SweepResult,
                      episode_goal, load_negatives, make_negatives, normalized_auc,
                      perturb_sequence, polar_offsets, rank_of_correct, rank_sequences,
                      ranking_eval, rmse_eval, save_negatives, sequence_distances,
                      sweep_epsilon, sweep_negatives, write_table)

__all__ = ["EPSILON_GRID", "PerturbationError", "RankingConfig", "RankingRecord", "SweepResult",
           "episode_goal", "load_negatives", "make_negatives", "normalized_auc",
           "perturb_sequence", "polar_offsets", "rank_of_correct", "rank_sequences",
           "ranking_eval", "rmse_eval", "save_negatives", "sequence_distances", "sweep_epsilon",
           "sweep_negatives", "write_table"]
