"""Command line round trips on small inputs."""

import json

import pytest

from shapecomp import __version__
from shapecomp.cli import main


def run_cli(capsys, *argv):
    code = main(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


def test_version(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["--version"])
    assert exc.value.code == 0
    assert __version__ in capsys.readouterr().out


def test_missing_command_exits_with_usage(capsys):
    with pytest.raises(SystemExit) as exc:
        main([])
    assert exc.value.code == 2
    assert "usage" in capsys.readouterr().err


def test_gen_data(tmp_path, capsys):
    code, out, _ = run_cli(capsys, "gen-data",
                           "--bench-dir", str(tmp_path / "bench"),
                           "--corpus-out", str(tmp_path / "corpus.json"),
                           "--objects", "2", "--samples", "1", "--points", "300",
                           "--shapes-per-family", "2", "--heldout", "2")
    assert code == 0
    summary = json.loads(out)
    assert summary["benchmark"]["objects"] == 2
    assert summary["benchmark"]["partials"] == 6
    assert summary["corpus"]["train"] == 10
    assert (tmp_path / "bench" / "manifest.json").exists()
    assert (tmp_path / "corpus.json").exists()


def test_gen_data_requires_an_output(capsys):
    with pytest.raises(SystemExit, match="nothing to do"):
        main(["gen-data"])


def test_train_both_stages(tmp_path, capsys):
    corpus = tmp_path / "corpus.json"
    run_cli(capsys, "gen-data", "--corpus-out", str(corpus),
            "--shapes-per-family", "2", "--heldout", "1", "--points", "200")
    ckpt = tmp_path / "ckpt"
    code, out, _ = run_cli(capsys, "train-vae", "--corpus", str(corpus),
                           "--ckpt", str(ckpt), "--resolution", "8",
                           "--latent-channels", "2", "--epochs", "2",
                           "--batch-size", "4", "--learning-rate", "1e-2")
    assert code == 0
    assert json.loads(out)["epochs"] == 2
    assert (ckpt / "manifest.json").exists()
    code, out, _ = run_cli(capsys, "train-flow", "--corpus", str(corpus),
                           "--ckpt", str(ckpt), "--steps", "20",
                           "--hidden", "4", "--batch-size", "4")
    assert code == 0
    assert json.loads(out)["steps"] == 20
    from shapecomp.backbone import load_backbone

    assert load_backbone(ckpt).vel_params


def test_sample(mini_world, tmp_path, capsys):
    code, out, _ = run_cli(capsys, "sample", "--ckpt", str(mini_world["ckpt"]),
                           "--out", str(tmp_path / "samp"), "--count", "2",
                           "--steps", "4", "--seed", "3")
    assert code == 0
    files = json.loads(out)["samples"]
    assert len(files) == 2
    assert (tmp_path / "samp_0.ply").exists()
    assert (tmp_path / "samp_1.ply").exists()


def _first_partial(mini_world):
    entry = mini_world["manifest"]["partials"][0]
    gt = {e["id"]: e["gt"] for e in mini_world["manifest"]["objects"]}
    return (mini_world["bench_dir"] / entry["path"],
            mini_world["bench_dir"] / gt[entry["object_id"]])


def test_complete_scores_and_is_deterministic(mini_world, tmp_path, capsys):
    partial, gt = _first_partial(mini_world)
    args = ("complete", "--ckpt", str(mini_world["ckpt"]),
            "--partial", str(partial), "--gt", str(gt),
            "--out", str(tmp_path / "done.ply"), "--steps", "4", "--seed", "1")
    code, out, _ = run_cli(capsys, *args)
    assert code == 0
    summary = json.loads(out)
    for key in ("cd", "emd", "ucd", "uhd"):
        assert summary[key] >= 0.0
    sidecar = json.loads((tmp_path / "done.meta.json").read_text())
    assert sidecar == summary
    first = (tmp_path / "done.ply").read_bytes()
    run_cli(capsys, *args)
    assert (tmp_path / "done.ply").read_bytes() == first


def test_complete_unknown_method_fails(mini_world, tmp_path, capsys):
    partial, _ = _first_partial(mini_world)
    code, _, err = run_cli(capsys, "complete", "--ckpt", str(mini_world["ckpt"]),
                           "--partial", str(partial),
                           "--out", str(tmp_path / "x.ply"), "--method", "nope")
    assert code == 1
    assert "error:" in err and "unknown method" in err


def test_bench_score_report(mini_world, tmp_path, capsys):
    out_dir = tmp_path / "run"
    code, out, _ = run_cli(capsys, "bench",
                           "--bench-dir", str(mini_world["bench_dir"]),
                           "--ckpt", str(mini_world["ckpt"]),
                           "--out", str(out_dir), "--methods", "full",
                           "--seeds", "0,1", "--steps", "4", "--limit", "4")
    assert code == 0
    assert json.loads(out)["rows"] == 4
    rows_csv = out_dir / "rows.csv"

    code, out, _ = run_cli(capsys, "score", "--rows", str(rows_csv),
                           "--json-out", str(tmp_path / "agg.json"))
    assert code == 0
    assert "full" in out
    agg = json.loads((tmp_path / "agg.json").read_text())
    assert agg["aggregate"]["methods"]["full"]["rows"] == 4

    code, out, _ = run_cli(capsys, "report", "--rows", str(rows_csv),
                           "--format", "csv")
    assert code == 0
    assert out.encode() == rows_csv.read_bytes()

    code, out, _ = run_cli(capsys, "report", "--rows", str(rows_csv),
                           "--format", "json")
    assert code == 0
    assert json.loads(out)["aggregate"]["total_rows"] == 4


def test_score_missing_file_fails(tmp_path, capsys):
    code, _, err = run_cli(capsys, "score", "--rows", str(tmp_path / "no.csv"))
    assert code == 1
    assert "error:" in err
