"""Command line entry point.

Subcommands cover the whole pipeline: generate data, train the two backbone
stages, sample shapes, complete a single partial, run the benchmark, and
score or render its results. Every command prints a small JSON summary (or
the requested report) to stdout and returns a process exit code.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__

logger = logging.getLogger(__name__)


def _add_gen_data(sub):
    p = sub.add_parser("gen-data", help="generate the benchmark and the training corpus")
    p.add_argument("--bench-dir", type=Path, help="output directory for the benchmark")
    p.add_argument("--corpus-out", type=Path, help="output path for the corpus JSON")
    p.add_argument("--objects", type=int, default=30)
    p.add_argument("--samples", type=int, default=2, help="samples per pattern")
    p.add_argument("--points", type=int, default=8192)
    p.add_argument("--shapes-per-family", type=int, default=100)
    p.add_argument("--heldout", type=int, default=32)
    p.add_argument("--seed", type=int, default=0)
    return p


def _cmd_gen_data(args) -> dict:
    if args.bench_dir is None and args.corpus_out is None:
        raise SystemExit("gen-data: nothing to do; pass --bench-dir and/or --corpus-out")
    out = {}
    if args.bench_dir is not None:
        from .partiality import BenchmarkConfig, build_benchmark

        cfg = BenchmarkConfig(objects=args.objects, samples_per_pattern=args.samples,
                              points=args.points, seed=args.seed)
        manifest = build_benchmark(cfg, args.bench_dir)
        out["benchmark"] = {"dir": str(args.bench_dir),
                            "objects": len(manifest["objects"]),
                            "partials": len(manifest["partials"])}
    if args.corpus_out is not None:
        from .backbone import build_corpus, corpus_fingerprint

        corpus = build_corpus(shapes_per_family=args.shapes_per_family,
                              heldout=args.heldout, points=args.points,
                              seed=args.seed)
        args.corpus_out.parent.mkdir(parents=True, exist_ok=True)
        args.corpus_out.write_text(json.dumps(corpus, indent=2, sort_keys=True) + "\n")
        out["corpus"] = {"path": str(args.corpus_out),
                         "train": len(corpus["train"]),
                         "heldout": len(corpus["heldout"]),
                         "fingerprint": corpus_fingerprint(corpus)}
    return out


def _add_train_vae(sub):
    p = sub.add_parser("train-vae", help="fit the occupancy autoencoder stage")
    p.add_argument("--corpus", type=Path, required=True)
    p.add_argument("--ckpt", type=Path, required=True)
    p.add_argument("--epochs", type=int, default=40)
    p.add_argument("--batch-size", type=int, default=8)
    p.add_argument("--learning-rate", type=float, default=3e-3)
    p.add_argument("--beta", type=float, default=1e-4)
    p.add_argument("--resolution", type=int, default=32)
    p.add_argument("--latent-channels", type=int, default=8)
    p.add_argument("--augment", choices=("horizontal", "none"), default="horizontal")
    p.add_argument("--seed", type=int, default=0)
    return p


def _cmd_train_vae(args) -> dict:
    from .backbone import load_corpus, train_vae_stage

    corpus = load_corpus(args.corpus)
    summary = train_vae_stage(corpus, args.ckpt, epochs=args.epochs,
                              batch_size=args.batch_size,
                              learning_rate=args.learning_rate, beta=args.beta,
                              resolution=args.resolution,
                              latent_channels=args.latent_channels,
                              augment=None if args.augment == "none" else args.augment,
                              seed=args.seed)
    return {"checkpoint": str(args.ckpt), **summary}


def _add_train_flow(sub):
    p = sub.add_parser("train-flow", help="fit the latent flow stage")
    p.add_argument("--corpus", type=Path, required=True)
    p.add_argument("--ckpt", type=Path, required=True)
    p.add_argument("--steps", type=int, default=4000)
    p.add_argument("--batch-size", type=int, default=8)
    p.add_argument("--learning-rate", type=float, default=3e-4)
    p.add_argument("--cond-dropout", type=float, default=0.1)
    p.add_argument("--hidden", type=int, default=48)
    p.add_argument("--seed", type=int, default=0)
    return p


def _cmd_train_flow(args) -> dict:
    from .backbone import load_corpus, train_flow_stage

    corpus = load_corpus(args.corpus)
    summary = train_flow_stage(corpus, args.ckpt, steps=args.steps,
                               batch_size=args.batch_size,
                               learning_rate=args.learning_rate,
                               cond_dropout=args.cond_dropout,
                               hidden=args.hidden, seed=args.seed)
    return {"checkpoint": str(args.ckpt), **summary}


def _add_sample(sub):
    p = sub.add_parser("sample", help="sample shapes from the trained flow")
    p.add_argument("--ckpt", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True,
                   help="output prefix; files are <prefix>_<i>.ply")
    p.add_argument("--count", type=int, default=1)
    p.add_argument("--label", type=int, default=0,
                   help="shape class id, 0 for unconditional")
    p.add_argument("--steps", type=int, default=25)
    p.add_argument("--guidance", type=float, default=1.0)
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--seed", type=int, default=0)
    return p


def _cmd_sample(args) -> dict:
    from .backbone import load_backbone
    from .geometry import OccupancyGrid, occupancy_to_points
    from .geometry_io import write_ply

    backbone = load_backbone(args.ckpt)
    rng = np.random.default_rng(args.seed)
    n = backbone.config.latent_resolution
    c = backbone.config.latent_channels
    dt = 1.0 / args.steps
    files = []
    for i in range(args.count):
        x = rng.standard_normal((n, n, n, c)).astype(np.float32)
        for t in np.linspace(1.0, dt, args.steps):
            v = backbone.velocity(x, float(t), label=args.label,
                                  guidance=args.guidance)
            x = x - dt * v
        grid = OccupancyGrid(backbone.decode(x).astype(np.float64))
        cloud = occupancy_to_points(grid, threshold=args.threshold)
        path = args.out.parent / f"{args.out.name}_{i}.ply"
        path.parent.mkdir(parents=True, exist_ok=True)
        write_ply(path, cloud, binary=True)
        files.append({"path": str(path), "points": len(cloud)})
    return {"samples": files}


def _add_complete(sub):
    p = sub.add_parser("complete", help="complete one partial point cloud")
    p.add_argument("--ckpt", type=Path, required=True)
    p.add_argument("--partial", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--gt", type=Path, help="optional reference cloud to score against")
    p.add_argument("--method", default="full")
    p.add_argument("--label", type=int, default=0)
    p.add_argument("--steps", type=int, default=25)
    p.add_argument("--eta", type=float, default=1.0)
    p.add_argument("--guidance", type=float, default=1.0)
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--seed", type=int, default=0)
    return p


def _cmd_complete(args) -> dict:
    from .completion import ShapeCompleter
    from .geometry_io import read_ply, write_ply
    from .metrics import chamfer, emd, ucd_uhd

    completer = ShapeCompleter(checkpoint=args.ckpt, method=args.method,
                               steps=args.steps, eta=args.eta,
                               guidance=args.guidance, threshold=args.threshold,
                               seed=args.seed).fit()
    partial = read_ply(args.partial)
    result = completer.complete_cloud(partial, label=args.label,
                                      rng=np.random.default_rng([args.seed, 0]))
    args.out.parent.mkdir(parents=True, exist_ok=True)
    write_ply(args.out, result.cloud, binary=True)
    out = {"out": str(args.out), "points": len(result.cloud), "method": args.method,
           "label": args.label, "steps": args.steps, "seed": args.seed}
    ucd, uhd = ucd_uhd(partial.points, result.cloud.points)
    out["ucd"] = ucd
    out["uhd"] = uhd
    if args.gt is not None:
        gt = read_ply(args.gt)
        out["cd"] = chamfer(result.cloud.points, gt.points)
        out["emd"] = emd(result.cloud.points, gt.points)
    args.out.with_suffix(".meta.json").write_text(
        json.dumps(out, indent=2, sort_keys=True) + "\n")
    return out


def _add_bench(sub):
    p = sub.add_parser("bench", help="run the completion benchmark")
    p.add_argument("--bench-dir", type=Path, required=True)
    p.add_argument("--ckpt", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--methods", default=None,
                   help="comma-separated method list (default: the five standard ones)")
    p.add_argument("--seeds", default="0", help="comma-separated completion seeds")
    p.add_argument("--steps", type=int, default=25)
    p.add_argument("--eta", type=float, default=1.0)
    p.add_argument("--guidance", type=float, default=1.0)
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--unconditional", action="store_true",
                   help="ignore shape-class labels during completion")
    p.add_argument("--limit", type=int, default=None, help="run only the first N tasks")
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--no-resume", action="store_true")
    return p


def _cmd_bench(args) -> dict:
    from .bench import DEFAULT_METHODS, BenchConfig, run_benchmark

    methods = tuple(args.methods.split(",")) if args.methods else DEFAULT_METHODS
    seeds = tuple(int(s) for s in args.seeds.split(","))
    config = BenchConfig(methods=methods, seeds=seeds, steps=args.steps,
                         eta=args.eta, guidance=args.guidance,
                         threshold=args.threshold,
                         conditional=not args.unconditional,
                         workers=args.workers)
    return run_benchmark(args.bench_dir, args.ckpt, args.out, config,
                         resume=not args.no_resume, limit=args.limit)


def _add_score(sub):
    p = sub.add_parser("score", help="aggregate a rows.csv and print the table")
    p.add_argument("--rows", type=Path, required=True)
    p.add_argument("--json-out", type=Path, help="also write the aggregate JSON here")
    return p


def _cmd_score(args) -> int:
    from .report import aggregate, read_rows, render_table

    meta, rows = read_rows(args.rows)
    agg = aggregate(rows)
    if args.json_out is not None:
        args.json_out.write_text(json.dumps({"meta": meta, "aggregate": agg},
                                            indent=2, sort_keys=True) + "\n")
    print(render_table(agg))
    return 0


def _add_report(sub):
    p = sub.add_parser("report", help="render a rows.csv")
    p.add_argument("--rows", type=Path, required=True)
    p.add_argument("--format", choices=("text", "markdown", "json", "csv"),
                   default="text")
    return p


def _cmd_report(args) -> int:
    from .report import render_report

    sys.stdout.write(render_report(args.rows, fmt=args.format))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="shapecomp",
                                     description="latent-flow shape completion toolkit")
    parser.add_argument("--version", action="version", version=f"shapecomp {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true",
                        help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)
    for adder in (_add_gen_data, _add_train_vae, _add_train_flow, _add_sample,
                  _add_complete, _add_bench, _add_score, _add_report):
        adder(sub)
    return parser


_COMMANDS = {
    "gen-data": _cmd_gen_data,
    "train-vae": _cmd_train_vae,
    "train-flow": _cmd_train_flow,
    "sample": _cmd_sample,
    "complete": _cmd_complete,
    "bench": _cmd_bench,
    "score": _cmd_score,
    "report": _cmd_report,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s",
                        stream=sys.stderr)
    try:
        result = _COMMANDS[args.command](args)
    except Exception as exc:
        logger.error("%s failed: %s", args.command, exc)
        print(f"error: {exc}", file=sys.stderr)
        return 1
    if isinstance(result, dict):
        print(json.dumps(result, indent=2, sort_keys=True, default=str))
        return 0
    return int(result)


if __name__ == "__main__":
    raise SystemExit(main())
