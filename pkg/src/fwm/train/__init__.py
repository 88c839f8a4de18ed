"""Contrastive world-model training and supervised heads."""
from .loop import (EpochMetrics, NonFiniteLossError, TrainResult, TransitionTable,
                   contrastive_objective, encode_states, inhand_accuracy, train_inhand,
                   train_probe, train_world_model)
from .loss import LR_SCHEDULES, LossConfig, contrastive_loss, contrastive_terms, sample_negatives
from .presets import PRESETS, Preset, get_preset

__all__ = ["EpochMetrics", "LR_SCHEDULES", "LossConfig", "NonFiniteLossError", "PRESETS", "Preset", "TrainResult",
           "TransitionTable", "contrastive_loss", "contrastive_objective", "contrastive_terms",
           "encode_states", "get_preset", "inhand_accuracy", "sample_negatives", "train_inhand",
           "train_probe", "train_world_model"]
