"""Shared fixtures: a miniature benchmark plus a small trained checkpoint."""

import pytest

from shapecomp.backbone import build_corpus, train_flow_stage, train_vae_stage
from shapecomp.partiality import BenchmarkConfig, build_benchmark


@pytest.fixture(scope="session")
def mini_world(tmp_path_factory):
    """A 2-object benchmark and a resolution-8 checkpoint trained for a few
    seconds; good enough for plumbing tests that need real completions."""
    root = tmp_path_factory.mktemp("mini_world")
    bench_dir = root / "bench"
    manifest = build_benchmark(
        BenchmarkConfig(objects=2, samples_per_pattern=1, points=500, seed=7),
        bench_dir)
    corpus = build_corpus(shapes_per_family=4, heldout=3, points=500, seed=7)
    ckpt = root / "ckpt"
    train_vae_stage(corpus, ckpt, resolution=8, latent_channels=4,
                    enc_channels=(6, 10), dec_channels=(10, 6), epochs=80,
                    batch_size=5, learning_rate=1e-2, seed=0)
    train_flow_stage(corpus, ckpt, hidden=10, blocks=2, emb_time=8, emb_cond=8,
                     steps=400, batch_size=8, learning_rate=3e-3,
                     cond_dropout=0.1, seed=0)
    return {"root": root, "bench_dir": bench_dir, "ckpt": ckpt,
            "corpus": corpus, "manifest": manifest}
