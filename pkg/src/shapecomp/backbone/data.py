"""Training corpus: procedural shape recipes, materialized on demand.

A corpus is a small JSON document of (family, seed) recipes rather than
stored geometry; shapes regenerate in milliseconds and the document hashes
cheaply. Train and held-out splits draw from disjoint seed streams, and both
are disjoint from the benchmark builder's stream by construction.
"""

from __future__ import annotations

import hashlib
import json

import numpy as np

from ..geometry import normalize, voxelize
from ..partiality import FAMILY_LABELS, ShapeSpec, gen_shape

__all__ = ["build_corpus", "load_corpus", "corpus_fingerprint", "corpus_grids"]

_TRAIN_STREAM = 101
_HELDOUT_STREAM = 202


def _entries(families, count_for, stream, seed, points):
    out = []
    counters = {f: 0 for f in families}
    for i in range(sum(count_for(f) for f in families)):
        family = families[i % len(families)]
        if counters[family] >= count_for(family):
            family = next(f for f in families if counters[f] < count_for(f))
        j = counters[family]
        counters[family] += 1
        shape_seed = int(np.random.default_rng(
            [seed, stream, FAMILY_LABELS[family], j]).integers(2 ** 31))
        out.append({"family": family, "seed": shape_seed,
                    "label": FAMILY_LABELS[family], "points": points})
    return out


def build_corpus(shapes_per_family: int = 100, heldout: int = 32,
                 points: int = 8192, seed: int = 0) -> dict:
    """Recipe document for ``5 * shapes_per_family`` train shapes plus a
    held-out split used only for reconstruction scoring."""
    if shapes_per_family < 1 or heldout < 1:
        raise ValueError("shapes_per_family and heldout must be positive")
    families = sorted(FAMILY_LABELS, key=FAMILY_LABELS.get)
    train = _entries(families, lambda f: shapes_per_family, _TRAIN_STREAM, seed, points)
    per_family_heldout = {f: heldout // len(families) + (1 if i < heldout % len(families) else 0)
                          for i, f in enumerate(families)}
    held = _entries(families, per_family_heldout.get, _HELDOUT_STREAM, seed, points)
    return {"format": "shapecomp-corpus", "version": 1, "seed": seed,
            "points": points, "train": train, "heldout": held}


def load_corpus(path) -> dict:
    corpus = json.loads(open(path).read())
    if corpus.get("format") != "shapecomp-corpus" or corpus.get("version") != 1:
        raise ValueError(f"{path}: not a version-1 corpus document")
    return corpus


def corpus_fingerprint(corpus: dict) -> str:
    blob = json.dumps(corpus, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


def corpus_grids(corpus: dict, which: str = "train",
                 resolution: int = 32) -> tuple[np.ndarray, np.ndarray]:
    """Materialize a split as occupancy grids (M, N, N, N) and labels (M,)."""
    if which not in ("train", "heldout"):
        raise ValueError("which must be 'train' or 'heldout'")
    entries = corpus[which]
    grids = np.zeros((len(entries), resolution, resolution, resolution))
    labels = np.zeros(len(entries), dtype=np.int64)
    for i, entry in enumerate(entries):
        cloud = gen_shape(ShapeSpec(entry["family"], entry["seed"], points=entry["points"]))
        frame, _ = normalize(cloud)
        grids[i] = voxelize(frame, resolution).values
        labels[i] = entry["label"]
    return grids, labels
