"""Generative backbone: occupancy VAE, latent flow matcher, and checkpoints."""

from ._optim import Adam
from .checkpoint import (
    CheckpointError,
    ShapeBackbone,
    checkpoint_digest,
    load_backbone,
    save_backbone,
)
from .data import build_corpus, corpus_fingerprint, corpus_grids, load_corpus
from .flow import LatentFlowMatcher
from .nets import BackboneConfig, label_onehot, time_embedding, velocity_eval
from .train import train_flow_stage, train_vae_stage
from .vae import OccupancyVae

__all__ = [
    "Adam",
    "BackboneConfig",
    "CheckpointError",
    "LatentFlowMatcher",
    "OccupancyVae",
    "ShapeBackbone",
    "build_corpus",
    "checkpoint_digest",
    "corpus_fingerprint",
    "corpus_grids",
    "label_onehot",
    "load_backbone",
    "load_corpus",
    "save_backbone",
    "time_embedding",
    "train_flow_stage",
    "train_vae_stage",
    "velocity_eval",
]
