from .defense import DefenseSpec, defend
from .embedder import EvalEmbedder, default_embedder, similarity
from .protocols import (
    ABLATION_MODES,
    ablate,
    ablation_config,
    attack_victim,
    evaluate,
    sweep_tile_scale,
    transfer_eval,
)
from .report import AttackReport

__all__ = [
    "ABLATION_MODES",
    "AttackReport",
    "DefenseSpec",
    "EvalEmbedder",
    "ablate",
    "ablation_config",
    "attack_victim",
    "default_embedder",
    "defend",
    "evaluate",
    "similarity",
    "sweep_tile_scale",
    "transfer_eval",
]
