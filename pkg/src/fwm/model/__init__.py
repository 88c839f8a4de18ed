"""Factored world model: encoder, GNN transition stack, heads, checkpoints."""
from .checkpoint import load_checkpoint, read_checkpoint, save_checkpoint
from .config import ModelConfig, decode_actions, encode_actions
from .encoder import Encoder
from .heads import InHandClassifier, PositionProbe, inhand_decision
from .transition import GNNLayer, MonolithicTransition, ResidualGNN, edge_index
from .world import WorldModel

__all__ = ["Encoder", "GNNLayer", "InHandClassifier", "ModelConfig", "MonolithicTransition",
           "PositionProbe", "ResidualGNN", "WorldModel", "decode_actions", "edge_index",
           "encode_actions", "inhand_decision", "load_checkpoint", "read_checkpoint",
           "save_checkpoint"]
