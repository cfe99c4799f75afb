"""Trained-weights bundle: a directory of hashed tensors plus a manifest.

A checkpoint directory looks like::

    manifest.json             format, config, tensor index with sha256 digests
    tensors/<name>.lsct       one float32 tensor per parameter

The bundle also carries the per-channel mean/std of the training latents;
:class:`ShapeBackbone` applies them so that callers only ever see latents in
standardized coordinates, where the flow's Gaussian reference lives.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..autodiff import Tape, add, mul
from ..tensorio import read_tensor, write_tensor
from .nets import (
    BackboneConfig,
    decoder_forward,
    encoder_forward,
    stage_params,
    velocity_eval,
)

__all__ = ["ShapeBackbone", "save_backbone", "load_backbone", "checkpoint_digest", "CheckpointError"]

MANIFEST_NAME = "manifest.json"
FORMAT_NAME = "shapecomp-backbone"


class CheckpointError(RuntimeError):
    """A checkpoint directory is missing pieces or fails verification."""


@dataclass
class ShapeBackbone:
    """Inference-time bundle of encoder, decoder, and velocity field.

    ``encode``/``decode`` map between occupancy grids and standardized
    latents; ``velocity`` evaluates the flow field in the same coordinates.
    """

    config: BackboneConfig
    vae_params: dict
    latent_mean: np.ndarray
    latent_std: np.ndarray
    vel_params: dict | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        c = self.config.latent_channels
        self.latent_mean = np.asarray(self.latent_mean, dtype=np.float32).reshape(c)
        self.latent_std = np.asarray(self.latent_std, dtype=np.float32).reshape(c)
        if np.any(self.latent_std <= 0):
            raise ValueError("latent_std must be positive")

    @property
    def dtype(self):
        return self.vae_params["enc.c0.w"].dtype

    def _grid_in(self, values: np.ndarray) -> np.ndarray:
        values = np.asarray(values)
        n = self.config.resolution
        if values.shape != (n, n, n):
            raise ValueError(f"expected a ({n}, {n}, {n}) grid, got {values.shape}")
        return values.astype(self.dtype)[None, ..., None]

    def _latent_in(self, z: np.ndarray) -> np.ndarray:
        z = np.asarray(z)
        n = self.config.latent_resolution
        c = self.config.latent_channels
        if z.shape != (n, n, n, c):
            raise ValueError(f"expected a ({n}, {n}, {n}, {c}) latent, got {z.shape}")
        return z.astype(self.dtype)

    def encode(self, values: np.ndarray) -> np.ndarray:
        """Occupancy grid (N, N, N) to a standardized latent (n, n, n, c)."""
        tape = Tape()
        p = stage_params(tape, self.vae_params)
        mu = encoder_forward(tape, p, tape.input(self._grid_in(values), "x")).value[0]
        return (mu - self.latent_mean) / self.latent_std

    def decode(self, z: np.ndarray) -> np.ndarray:
        """Standardized latent to occupancy probabilities (N, N, N)."""
        raw = self._latent_in(z) * self.latent_std + self.latent_mean
        tape = Tape()
        p = stage_params(tape, self.vae_params)
        return decoder_forward(tape, p, tape.input(raw[None], "z")).value[0, ..., 0]

    def decode_with_tape(self, z: np.ndarray):
        """Decode on a live tape for gradients with respect to the latent.

        Returns (tape, latent input node, probability node); probabilities
        have shape (1, N, N, N, 1) and match :meth:`decode` bit for bit.
        """
        z = self._latent_in(z)[None]
        tape = Tape()
        p = stage_params(tape, self.vae_params)
        z_in = tape.input(z, "z")
        std = tape.input(np.broadcast_to(self.latent_std, z.shape).astype(self.dtype).copy(), "std")
        mean = tape.input(np.broadcast_to(self.latent_mean, z.shape).astype(self.dtype).copy(), "mean")
        probs = decoder_forward(tape, p, add(mul(z_in, std), mean))
        return tape, z_in, probs

    def velocity(self, x: np.ndarray, t: float, label: int = 0,
                 guidance: float = 0.0) -> np.ndarray:
        """Flow velocity at time t in standardized latent coordinates."""
        if self.vel_params is None:
            raise CheckpointError("checkpoint has no velocity weights; train the flow stage")
        return velocity_eval(self.vel_params, self._latent_in(x), t,
                             label=label, guidance=guidance)


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _tensor_items(backbone: ShapeBackbone):
    for name, arr in sorted(backbone.vae_params.items()):
        yield f"vae/{name}", arr
    if backbone.vel_params is not None:
        for name, arr in sorted(backbone.vel_params.items()):
            yield f"vel/{name}", arr
    yield "stats/latent_mean", backbone.latent_mean
    yield "stats/latent_std", backbone.latent_std


def save_backbone(backbone: ShapeBackbone, out_dir) -> dict:
    """Write the bundle (tensors as float32) and return its manifest."""
    out_dir = Path(out_dir)
    (out_dir / "tensors").mkdir(parents=True, exist_ok=True)
    tensors = {}
    for name, arr in _tensor_items(backbone):
        rel = f"tensors/{name.replace('/', '_')}.lsct"
        arr32 = np.asarray(arr, dtype=np.float32)
        write_tensor(out_dir / rel, arr32)
        tensors[name] = {"file": rel, "sha256": _sha256(out_dir / rel),
                         "shape": list(arr32.shape)}
    manifest = {"format": FORMAT_NAME, "version": 1,
                "config": backbone.config.to_dict(),
                "has_velocity": backbone.vel_params is not None,
                "tensors": tensors, "meta": backbone.meta}
    (out_dir / MANIFEST_NAME).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


def load_backbone(ckpt_dir, require_velocity: bool = True) -> ShapeBackbone:
    """Load and hash-verify a checkpoint directory."""
    ckpt_dir = Path(ckpt_dir)
    manifest_path = ckpt_dir / MANIFEST_NAME
    if not manifest_path.exists():
        raise CheckpointError(f"{ckpt_dir}: no {MANIFEST_NAME}")
    manifest = json.loads(manifest_path.read_text())
    if manifest.get("format") != FORMAT_NAME or manifest.get("version") != 1:
        raise CheckpointError(f"{ckpt_dir}: not a version-1 backbone checkpoint")
    groups: dict[str, dict] = {"vae": {}, "vel": {}, "stats": {}}
    for name, entry in manifest["tensors"].items():
        path = ckpt_dir / entry["file"]
        if not path.exists():
            raise CheckpointError(f"{ckpt_dir}: missing tensor file {entry['file']}")
        if _sha256(path) != entry["sha256"]:
            raise CheckpointError(f"{ckpt_dir}: checksum mismatch for {entry['file']}")
        group, _, short = name.partition("/")
        groups[group][short] = read_tensor(path)
    if require_velocity and not manifest.get("has_velocity"):
        raise CheckpointError(f"{ckpt_dir}: checkpoint has no velocity weights")
    return ShapeBackbone(config=BackboneConfig.from_dict(manifest["config"]),
                         vae_params=groups["vae"],
                         latent_mean=groups["stats"]["latent_mean"],
                         latent_std=groups["stats"]["latent_std"],
                         vel_params=groups["vel"] or None,
                         meta=manifest.get("meta", {}))


def checkpoint_digest(ckpt_dir) -> str:
    """Stable digest of a checkpoint: the hash of its manifest bytes."""
    return _sha256(Path(ckpt_dir) / MANIFEST_NAME)
