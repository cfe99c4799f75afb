"""Two-stage training orchestration: autoencoder first, then the flow.

Both stages write into one checkpoint directory. The first saves the encoder,
decoder, and latent statistics; the second re-encodes the corpus with the
saved float32 weights (the same ones inference will use) and adds the
velocity field. Summaries come back as plain dicts for logging or JSON.
"""

from __future__ import annotations

import logging
import time
from dataclasses import replace

import numpy as np

from .checkpoint import ShapeBackbone, load_backbone, save_backbone
from .data import corpus_fingerprint, corpus_grids
from .flow import LatentFlowMatcher
from .vae import OccupancyVae

__all__ = ["train_vae_stage", "train_flow_stage"]

logger = logging.getLogger(__name__)


def train_vae_stage(corpus: dict, out_dir, **vae_kwargs) -> dict:
    """Fit the occupancy VAE on the corpus and save a velocity-less bundle."""
    t0 = time.perf_counter()
    vae = OccupancyVae(**vae_kwargs)
    grids, _ = corpus_grids(corpus, "train", resolution=vae.resolution)
    vae.fit(grids)
    # statistics must come from the weights inference will run: float32
    params32 = {k: v.astype(np.float32) for k, v in vae.params_.items()}
    probe = ShapeBackbone(config=vae.config_, vae_params=params32,
                          latent_mean=np.zeros(vae.config_.latent_channels),
                          latent_std=np.ones(vae.config_.latent_channels))
    latents = np.stack([probe.encode(g) for g in grids])
    mean = latents.reshape(-1, latents.shape[-1]).mean(axis=0)
    std = np.maximum(latents.reshape(-1, latents.shape[-1]).std(axis=0), 1e-6)
    held, _ = corpus_grids(corpus, "heldout", resolution=vae.resolution)
    heldout_iou = vae.score(held)
    meta = {"corpus_fingerprint": corpus_fingerprint(corpus),
            "vae": {"epochs": vae.epochs, "beta": vae.beta, "seed": vae.seed,
                    "final_recon": vae.loss_history_[-1]["recon"],
                    "train_iou": vae.score(grids[: len(held)]),
                    "heldout_iou": heldout_iou,
                    "seconds": time.perf_counter() - t0}}
    backbone = ShapeBackbone(config=vae.config_, vae_params=params32,
                             latent_mean=mean, latent_std=std, meta=meta)
    save_backbone(backbone, out_dir)
    logger.info("vae stage done: heldout IoU %.4f", heldout_iou)
    return dict(meta["vae"])


def train_flow_stage(corpus: dict, ckpt_dir, **flow_kwargs) -> dict:
    """Fit the latent flow against an existing VAE bundle and extend it."""
    t0 = time.perf_counter()
    backbone = load_backbone(ckpt_dir, require_velocity=False)
    stored = backbone.meta.get("corpus_fingerprint")
    if stored and stored != corpus_fingerprint(corpus):
        raise ValueError("corpus does not match the one the VAE stage used")
    cfg = backbone.config
    grids, labels = corpus_grids(corpus, "train", resolution=cfg.resolution)
    latents = np.stack([backbone.encode(g) for g in grids])
    flow = LatentFlowMatcher(latent_resolution=cfg.latent_resolution,
                             latent_channels=cfg.latent_channels,
                             num_labels=cfg.num_labels, **flow_kwargs)
    flow.fit(latents, labels)
    backbone.vel_params = {k: v.astype(np.float32) for k, v in flow.params_.items()}
    backbone.config = replace(cfg, velocity_hidden=flow.hidden,
                              velocity_blocks=flow.blocks,
                              emb_time=flow.emb_time, emb_cond=flow.emb_cond)
    backbone.meta["flow"] = {"steps": flow.steps, "seed": flow.seed,
                             "cond_dropout": flow.cond_dropout,
                             "final_loss": flow.loss_history_[-1]["loss"],
                             "seconds": time.perf_counter() - t0}
    save_backbone(backbone, ckpt_dir)
    logger.info("flow stage done: final loss %.5f", backbone.meta["flow"]["final_loss"])
    return dict(backbone.meta["flow"])
