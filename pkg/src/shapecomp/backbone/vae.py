"""Fixed-variance convolutional VAE over occupancy grids."""

from __future__ import annotations

import logging
import time

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from ..autodiff import Tape, add, bce, mul, reduce_mean, reduce_sum
from ._optim import Adam
from .nets import BackboneConfig, decoder_forward, encoder_forward, init_vae_params, stage_params

__all__ = ["OccupancyVae"]

logger = logging.getLogger(__name__)


def _horizontal_symmetry(xb: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Random per-sample quarter-turn about z with optional x/y mirrors.

    xb has shape (B, X, Y, Z, C); the z axis is never flipped.
    """
    out = np.empty_like(xb)
    for i, g in enumerate(xb):
        g = np.rot90(g, k=int(rng.integers(4)), axes=(0, 1))
        if rng.integers(2):
            g = g[::-1]
        if rng.integers(2):
            g = g[:, ::-1]
        out[i] = g
    return out


class OccupancyVae(TransformerMixin, BaseEstimator):
    """Autoencoder between occupancy grids and a small latent grid.

    The posterior is N(mu, posterior_std^2 I) with a fixed, shared scalar
    std, so the KL term against the unit prior reduces to 0.5*|mu|^2 plus a
    constant that carries no gradient. ``transform`` returns posterior means;
    ``inverse_transform`` returns occupancy probabilities.

    Parameters
    ----------
    resolution, latent_channels, enc_channels, dec_channels : architecture.
    posterior_std : fixed posterior standard deviation. Must stay well below
        the scale the means reach, otherwise the decoder trains at a
        signal-to-noise ratio under one and can only produce blur.
    beta : weight of the KL term per sample. The downstream flow model
        normalizes latents anyway, so this only bounds their scale.
    epochs, batch_size, learning_rate, seed : optimization.
    augment : None, or "horizontal" to train each sample under a random
        quarter-turn about z plus optional x/y mirrors. Upright shapes stay
        upright, so the transforms keep the data in distribution.
    """

    def __init__(self, resolution=32, latent_channels=8, enc_channels=(16, 32),
                 dec_channels=(48, 24), posterior_std=0.05, beta=1e-4,
                 epochs=40, batch_size=8, learning_rate=3e-3, augment=None,
                 seed=0):
        self.resolution = resolution
        self.latent_channels = latent_channels
        self.enc_channels = enc_channels
        self.dec_channels = dec_channels
        self.posterior_std = posterior_std
        self.beta = beta
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.augment = augment
        self.seed = seed

    def _config(self) -> BackboneConfig:
        return BackboneConfig(resolution=self.resolution,
                              latent_channels=self.latent_channels,
                              enc_channels=tuple(self.enc_channels),
                              dec_channels=tuple(self.dec_channels),
                              posterior_std=self.posterior_std)

    def _check_grids(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        n = self.resolution
        if X.ndim != 4 or X.shape[1:] != (n, n, n):
            raise ValueError(f"expected grids of shape (M, {n}, {n}, {n}), got {X.shape}")
        if not np.all(np.isfinite(X)) or X.min() < 0.0 or X.max() > 1.0:
            raise ValueError("grid values must be finite and in [0, 1]")
        return X

    def fit(self, X, y=None):
        X = self._check_grids(X)
        if len(X) < 1:
            raise ValueError("need at least one training grid")
        cfg = self._config()
        rng = np.random.default_rng(self.seed)
        params = init_vae_params(cfg, rng)
        # start the output at the occupancy base rate so early epochs refine
        # shape instead of relearning the global bias
        q = float(np.clip(X.mean(), 1e-4, 1.0 - 1e-4))
        params["dec.c3.b"] = params["dec.c3.b"] + np.log(q / (1.0 - q))
        opt = Adam(params, lr=self.learning_rate)
        n_lat = cfg.latent_resolution
        latent_dims = n_lat ** 3 * cfg.latent_channels
        s = self.posterior_std
        # constant part of the per-sample KL for a fixed posterior std
        kl_const = latent_dims * (0.5 * (s * s - 1.0) - np.log(s))
        history = []
        for epoch in range(self.epochs):
            # cosine decay with a 5% floor settles late-epoch oscillation
            frac = epoch / max(self.epochs - 1, 1)
            opt.lr = self.learning_rate * (0.05 + 0.95 * 0.5 * (1.0 + np.cos(np.pi * frac)))
            order = rng.permutation(len(X))
            t0 = time.perf_counter()
            recon_sum = kl_sum = 0.0
            batches = 0
            for start in range(0, len(X), self.batch_size):
                idx = order[start : start + self.batch_size]
                xb = X[idx][..., None]
                if self.augment == "horizontal":
                    xb = _horizontal_symmetry(xb, rng)
                elif self.augment is not None:
                    raise ValueError(f"unknown augment mode {self.augment!r}")
                tape = Tape()
                p = stage_params(tape, params)
                mu = encoder_forward(tape, p, tape.input(xb, "x"))
                noise = rng.standard_normal(mu.value.shape) * s
                z = add(mu, tape.input(noise, "noise"))
                probs = decoder_forward(tape, p, z)
                recon = reduce_mean(bce(probs, xb))
                kl = mul(reduce_sum(mul(mu, mu)), 0.5 / len(idx))
                loss = add(recon, mul(kl, self.beta))
                grads = tape.gradients(loss, list(p.values()))
                opt.step(dict(zip(p.keys(), grads)))
                recon_sum += float(recon.value)
                kl_sum += float(kl.value) + kl_const
                batches += 1
            entry = {"epoch": epoch, "recon": recon_sum / batches,
                     "kl": kl_sum / batches,
                     "loss": (recon_sum + self.beta * kl_sum) / batches,
                     "seconds": time.perf_counter() - t0}
            history.append(entry)
            logger.info("vae epoch %d: recon %.5f kl %.1f (%.1fs)",
                        epoch, entry["recon"], entry["kl"], entry["seconds"])
        self.params_ = params
        self.config_ = cfg
        self.loss_history_ = history
        self.n_iter_ = self.epochs
        return self

    def _require_fit(self):
        if not hasattr(self, "params_"):
            raise RuntimeError("estimator is not fitted")

    def transform(self, X) -> np.ndarray:
        """Posterior means, shape (M, n, n, n, c)."""
        self._require_fit()
        X = self._check_grids(X)
        out = []
        for start in range(0, len(X), self.batch_size):
            xb = X[start : start + self.batch_size][..., None]
            tape = Tape()
            p = stage_params(tape, self.params_)
            out.append(encoder_forward(tape, p, tape.input(xb, "x")).value)
        return np.concatenate(out, axis=0)

    def inverse_transform(self, Z) -> np.ndarray:
        """Occupancy probabilities, shape (M, N, N, N)."""
        self._require_fit()
        Z = np.asarray(Z, dtype=np.float64)
        n = self.config_.latent_resolution
        c = self.config_.latent_channels
        if Z.ndim != 5 or Z.shape[1:] != (n, n, n, c):
            raise ValueError(f"expected latents of shape (M, {n}, {n}, {n}, {c}), got {Z.shape}")
        out = []
        for start in range(0, len(Z), self.batch_size):
            zb = Z[start : start + self.batch_size]
            tape = Tape()
            p = stage_params(tape, self.params_)
            out.append(decoder_forward(tape, p, tape.input(zb, "z")).value[..., 0])
        return np.concatenate(out, axis=0)

    def score(self, X, y=None) -> float:
        """Mean voxel IoU between inputs and their reconstructions."""
        X = self._check_grids(X)
        probs = self.inverse_transform(self.transform(X))
        ious = []
        for x, p in zip(X, probs):
            a = x > 0.5
            b = p > 0.5
            union = np.logical_or(a, b).sum()
            ious.append(np.logical_and(a, b).sum() / union if union else 1.0)
        return float(np.mean(ious))
