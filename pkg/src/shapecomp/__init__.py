"""Zero-shot 3-D shape completion in a voxel-occupancy latent space.

A pretrained occupancy VAE plus a latent flow-matching prior complete partial
point clouds without task-specific training: each reverse step explicitly
replaces the observed region in voxel space and then nudges the latent so the
decode agrees with the observation. Includes a procedural partial-shape
benchmark, point-cloud metrics, and a CLI to run the whole pipeline.
"""

__version__ = "0.1.0"

from .geometry import Latent, NormalizeTransform, OccupancyGrid, PointCloud  # noqa: E402
from .metrics import chamfer, emd, mmd, tmd, ucd_uhd  # noqa: E402


def __getattr__(name):
    # heavier entry points load lazily so `import shapecomp` stays cheap
    if name in ("OccupancyVae", "LatentFlowMatcher", "ShapeBackbone",
                "load_backbone", "save_backbone"):
        from . import backbone

        return getattr(backbone, name)
    if name in ("ShapeCompleter", "SamplerConfig", "complete", "METHODS"):
        from . import completion

        return getattr(completion, name)
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")


__all__ = [
    "Latent",
    "LatentFlowMatcher",
    "METHODS",
    "NormalizeTransform",
    "OccupancyGrid",
    "OccupancyVae",
    "PointCloud",
    "SamplerConfig",
    "ShapeBackbone",
    "ShapeCompleter",
    "chamfer",
    "complete",
    "emd",
    "load_backbone",
    "mmd",
    "save_backbone",
    "tmd",
    "ucd_uhd",
]
