"""Convolutional nets for the occupancy autoencoder and the latent velocity
field, written against the minimal tape.

Grids are channels-last. The encoder downsamples the occupancy grid by 4x
with two strided convolutions; the decoder mirrors it with nearest-neighbor
upsampling. The velocity net runs at the latent resolution and receives the
flow time and the shape-class condition as learned additive biases on every
hidden convolution: bias = b + P_t @ timeemb + P_c @ (table @ onehot). Column
0 of the condition table is the unconditional embedding; the table and the
output head start at zero, so an untrained net predicts exactly zero velocity
and conditioning is a no-op until trained.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from ..autodiff import Array, Tape, add, conv3d, logistic, matmul, tanh, upsample_nn

__all__ = [
    "BackboneConfig",
    "init_vae_params",
    "init_velocity_params",
    "stage_params",
    "time_embedding",
    "label_onehot",
    "encoder_forward",
    "decoder_forward",
    "velocity_forward",
    "velocity_eval",
]


@dataclass(frozen=True)
class BackboneConfig:
    resolution: int = 32
    latent_channels: int = 8
    enc_channels: tuple = (16, 32)
    dec_channels: tuple = (48, 24)
    velocity_hidden: int = 48
    velocity_blocks: int = 3
    emb_time: int = 16
    emb_cond: int = 16
    num_labels: int = 5
    posterior_std: float = 0.1

    def __post_init__(self):
        if self.resolution % 4 != 0:
            raise ValueError("resolution must be divisible by 4")
        if len(self.enc_channels) != 2 or len(self.dec_channels) != 2:
            raise ValueError("enc_channels and dec_channels must each have 2 entries")

    @property
    def latent_resolution(self) -> int:
        return self.resolution // 4

    def to_dict(self) -> dict:
        d = asdict(self)
        d["enc_channels"] = list(self.enc_channels)
        d["dec_channels"] = list(self.dec_channels)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "BackboneConfig":
        d = dict(d)
        d["enc_channels"] = tuple(d["enc_channels"])
        d["dec_channels"] = tuple(d["dec_channels"])
        return cls(**d)


def _conv_init(rng: np.random.Generator, ci: int, co: int, k: int = 3) -> np.ndarray:
    return rng.standard_normal((k, k, k, ci, co)) / np.sqrt(k ** 3 * ci)


def init_vae_params(config: BackboneConfig, rng: np.random.Generator) -> dict[str, np.ndarray]:
    e0, e1 = config.enc_channels
    d0, d1 = config.dec_channels
    c = config.latent_channels
    p = {
        "enc.c0.w": _conv_init(rng, 1, e0), "enc.c0.b": np.zeros(e0),
        "enc.c1.w": _conv_init(rng, e0, e1), "enc.c1.b": np.zeros(e1),
        "enc.c2.w": _conv_init(rng, e1, e1), "enc.c2.b": np.zeros(e1),
        "enc.mu.w": _conv_init(rng, e1, c), "enc.mu.b": np.zeros(c),
        "dec.c0.w": _conv_init(rng, c, d0), "dec.c0.b": np.zeros(d0),
        "dec.c1.w": _conv_init(rng, d0, d0), "dec.c1.b": np.zeros(d0),
        "dec.c2.w": _conv_init(rng, d0, d1), "dec.c2.b": np.zeros(d1),
        "dec.c3.w": _conv_init(rng, d1, 1), "dec.c3.b": np.zeros(1),
    }
    return p


def init_velocity_params(config: BackboneConfig, rng: np.random.Generator) -> dict[str, np.ndarray]:
    c = config.latent_channels
    h = config.velocity_hidden
    p = {"vel.table": np.zeros((config.emb_cond, config.num_labels + 1))}
    ci = c
    for i in range(config.velocity_blocks):
        p[f"vel.c{i}.w"] = _conv_init(rng, ci, h)
        p[f"vel.c{i}.b"] = np.zeros((h, 1))
        p[f"vel.c{i}.pt"] = rng.standard_normal((h, config.emb_time)) / np.sqrt(config.emb_time)
        p[f"vel.c{i}.pc"] = rng.standard_normal((h, config.emb_cond)) / np.sqrt(config.emb_cond)
        ci = h
    p["vel.head.w"] = np.zeros((3, 3, 3, h, c))
    p["vel.head.b"] = np.zeros(c)
    return p


def stage_params(tape: Tape, params: dict[str, np.ndarray]) -> dict[str, Array]:
    return {k: tape.input(v, k) for k, v in params.items()}


def time_embedding(t: float, dim: int) -> np.ndarray:
    """Sinusoidal column embedding of a flow time in [0, 1]."""
    half = dim // 2
    freqs = np.exp(np.linspace(0.0, np.log(400.0), half))
    ang = float(t) * freqs
    return np.concatenate([np.sin(ang), np.cos(ang)]).reshape(dim, 1)


def label_onehot(label: int, num_labels: int) -> np.ndarray:
    """Column selector for the condition table; label 0 is unconditional."""
    if not 0 <= label <= num_labels:
        raise ValueError(f"label must be in [0, {num_labels}], got {label}")
    v = np.zeros((num_labels + 1, 1))
    v[label, 0] = 1.0
    return v


def encoder_forward(tape: Tape, p: dict[str, Array], x: Array) -> Array:
    """Occupancy grid (B, N, N, N, 1) to posterior mean (B, n, n, n, c)."""
    h = tanh(conv3d(x, p["enc.c0.w"], p["enc.c0.b"], stride=2))
    h = tanh(conv3d(h, p["enc.c1.w"], p["enc.c1.b"], stride=2))
    h = tanh(conv3d(h, p["enc.c2.w"], p["enc.c2.b"]))
    return conv3d(h, p["enc.mu.w"], p["enc.mu.b"])


def decoder_forward(tape: Tape, p: dict[str, Array], z: Array) -> Array:
    """Latent (B, n, n, n, c) to occupancy probabilities (B, N, N, N, 1)."""
    h = tanh(conv3d(z, p["dec.c0.w"], p["dec.c0.b"]))
    h = tanh(conv3d(h, p["dec.c1.w"], p["dec.c1.b"]))
    h = tanh(conv3d(upsample_nn(h), p["dec.c2.w"], p["dec.c2.b"]))
    h = conv3d(upsample_nn(h), p["dec.c3.w"], p["dec.c3.b"])
    return logistic(h)


def velocity_forward(tape: Tape, p: dict[str, Array], x: Array,
                     temb: np.ndarray, onehot: np.ndarray) -> Array:
    """Velocity prediction for one (time, condition) pair shared by the batch."""
    dtype = x.value.dtype
    te = tape.input(temb.astype(dtype), "temb")
    oh = tape.input(onehot.astype(dtype), "onehot")
    cemb = matmul(p["vel.table"], oh)
    blocks = sum(1 for k in p if k.startswith("vel.c") and k.endswith(".w"))
    h = x
    for i in range(blocks):
        bias = add(p[f"vel.c{i}.b"], add(matmul(p[f"vel.c{i}.pt"], te),
                                         matmul(p[f"vel.c{i}.pc"], cemb)))
        h = tanh(conv3d(h, p[f"vel.c{i}.w"], bias))
    return conv3d(h, p["vel.head.w"], p["vel.head.b"])


def velocity_eval(params: dict[str, np.ndarray], x: np.ndarray, t: float,
                  label: int = 0, guidance: float = 0.0) -> np.ndarray:
    """Plain-array velocity with classifier-free guidance.

    guidance 0 evaluates only the unconditional branch and guidance 1 only
    the conditional one, so those endpoints are bit-identical to a single
    forward pass rather than an algebraically equal two-pass blend.
    """
    x = np.asarray(x)
    squeeze = x.ndim == 4
    if squeeze:
        x = x[None]
    num_labels = params["vel.table"].shape[1] - 1
    emb_time = params["vel.c0.pt"].shape[1]

    def run(lab: int) -> np.ndarray:
        tape = Tape()
        p = stage_params(tape, params)
        xin = tape.input(x.astype(params["vel.head.w"].dtype), "x")
        out = velocity_forward(tape, p, xin, time_embedding(t, emb_time),
                               label_onehot(lab, num_labels))
        return out.value

    if guidance == 0.0:
        v = run(0)
    elif guidance == 1.0:
        v = run(label)
    else:
        vn = run(0)
        v = vn + guidance * (run(label) - vn)
    return v[0] if squeeze else v
