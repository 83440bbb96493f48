import json

import numpy as np
import pytest
import yaml

from diffusion_pinn import cli
from diffusion_pinn.config import load_config, parse_config, substream_seed
from diffusion_pinn.errors import ConfigError

TINY = {
    "target": "gaussian",
    "seed": 3,
    "train": {"iterations": 20, "checkpoint_every": 10, "chunk": 10, "learning_rate": 1.0e-3},
    "lmc": {"iterations": 5, "batch_size": 32},
}


def write(path, body):
    path.write_text(yaml.safe_dump(body))
    return path


@pytest.fixture(scope="module")
def runs(tmp_path_factory):
    """Two identical training runs plus downstream sample files."""
    root = tmp_path_factory.mktemp("cli")
    cfg = write(root / "tiny.yaml", TINY)
    for name in ("a", "b"):
        assert cli.main(["train", "--config", str(cfg), "--out", str(root / name)]) == 0
    ckpt = root / "a" / "ckpt_0000020.dpc"
    for name, workers in (("s1.csv", "1"), ("s2.csv", "1"), ("s3.csv", "3")):
        argv = ["sample", "--checkpoint", str(ckpt), "--out", str(root / name), "--steps", "30", "--samples", "600", "--seed", "5", "--workers", workers]
        assert cli.main(argv) == 0
    return root


def test_substreams_are_distinct_and_stable():
    assert substream_seed(0, "train") == substream_seed(0, "train")
    assert len({substream_seed(0, n) for n in ("train", "sample", "eval", "collocation")}) == 4
    assert substream_seed(0, "train") != substream_seed(1, "train")


def test_defaults_resolved():
    cfg = parse_config({"target": "9gaussians"})
    assert cfg.train.iterations == 400_000 and cfg.lmc.step_size == 1.0
    assert cfg.sampler.radius == 20.0 and cfg.metrics == ("kl", "mixing")
    funnel = parse_config({"target": "funnel", "sampler": {"steps": 10}})
    assert funnel.sampler.radius == 2000.0 and funnel.sampler.steps == 10


@pytest.mark.parametrize(
    "raw, field",
    [
        ({"target": "ninegaussians"}, "target"),
        ({"target": "gaussian", "train": {"lr": 1}}, "train.lr"),
        ({"target": "gaussian", "train": {"iterations": "many"}}, "train.iterations"),
        ({"target": "gaussian", "train": {"learning_rate": -1.0}}, "train.learning_rate"),
        ({"target": "gaussian", "lmc": {"step_size": 0}}, "lmc.step_size"),
        ({"target": "gaussian", "mode": "energy"}, "mode"),
        ({"target": "gaussian", "metrics": ["kl", "w2"]}, "metrics[1]"),
        ({"target": "gaussian", "seed": -1}, "seed"),
        ({"target": "gaussian", "extra": 1}, "extra"),
        ({"seed": 0}, "target"),
    ],
)
def test_config_errors_name_the_field(raw, field):
    with pytest.raises(ConfigError) as info:
        parse_config(raw)
    assert str(info.value).startswith(field)


def test_inline_mixture_and_numeric_strings(tmp_path):
    body = {"target": {"name": "mog", "weights": [0.2, 0.8], "means": [[5, 5], [-5, -5]], "var": 1.0}, "train": {"learning_rate": "5e-4"}}
    cfg = load_config(write(tmp_path / "c.yaml", body))
    assert cfg.target.dim == 2 and cfg.train.learning_rate == 5e-4 and len(cfg.source_hash) == 64


def test_cli_unknown_target_fails(tmp_path, capsys):
    cfg = write(tmp_path / "bad.yaml", {"target": "ninegaussians"})
    assert cli.main(["train", "--config", str(cfg), "--out", str(tmp_path / "run")]) == 2
    assert "target" in capsys.readouterr().err
    assert not (tmp_path / "run").exists()


def test_train_outputs_and_rerun_identical(runs):
    a, b = runs / "a", runs / "b"
    assert sorted(p.name for p in a.iterdir()) == sorted(p.name for p in b.iterdir())
    for name in ("train_log.csv", "ckpt_0000010.dpc", "ckpt_0000020.dpc", "summary.json"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
    manifest = json.loads((a / "manifest.json").read_text())
    assert manifest["seed"] == 3 and len(manifest["config_sha256"]) == 64 and "checkpoint" in manifest["formats"]
    lines = (a / "train_log.csv").read_text().splitlines()
    assert lines[0] == "iteration,loss,reg,grad_norm,lr" and len(lines) == 21


def test_refuses_to_overwrite(runs, capsys):
    assert cli.main(["train", "--config", str(runs / "tiny.yaml"), "--out", str(runs / "a")]) == 2
    ckpt = runs / "a" / "ckpt_0000020.dpc"
    before = (runs / "s1.csv").read_bytes()
    assert cli.main(["sample", "--checkpoint", str(ckpt), "--out", str(runs / "s1.csv")]) == 2
    assert (runs / "s1.csv").read_bytes() == before
    assert "refusing" in capsys.readouterr().err


def test_sample_files_identical_across_runs_and_workers(runs):
    s1 = (runs / "s1.csv").read_bytes()
    assert s1 == (runs / "s2.csv").read_bytes() == (runs / "s3.csv").read_bytes()
    x = np.loadtxt(runs / "s1.csv", delimiter=",")
    assert x.shape == (600, 2)
    side = json.loads((runs / "s1.csv.json").read_text())
    assert side["method"] == "dps" and side["config"]["steps"] == 30


def test_corrupted_checkpoint_leaves_no_output(runs, tmp_path, capsys):
    raw = bytearray((runs / "a" / "ckpt_0000020.dpc").read_bytes())
    raw[:4] = b"XXXX"
    bad = tmp_path / "bad.dpc"
    bad.write_bytes(bytes(raw))
    out = tmp_path / "out.csv"
    assert cli.main(["sample", "--checkpoint", str(bad), "--out", str(out)]) == 2
    assert not out.exists() and not list(tmp_path.glob("out.csv*"))
    assert capsys.readouterr().err.startswith("error:")


def test_dimension_mismatch(runs, tmp_path):
    cfg = write(tmp_path / "nine.yaml", {"target": "funnel"})
    out = tmp_path / "x.csv"
    assert cli.main(["sample", "--checkpoint", str(runs / "a" / "ckpt_0000020.dpc"), "--config", str(cfg), "--out", str(out)]) == 2
    assert not out.exists()


def test_evaluate_reproducible(runs, tmp_path):
    paths = []
    for i in range(2):
        out = tmp_path / f"r{i}.json"
        argv = ["evaluate", "--samples", str(runs / "s1.csv"), "--target", "gaussian", "--metric", "kl", "--seed", "1", "--out", str(out), "--results", str(tmp_path / f"all{i}.csv")]
        assert cli.main(argv) == 0
        paths.append(out)
    assert paths[0].read_bytes() == paths[1].read_bytes()
    assert (tmp_path / "all0.csv").read_bytes() == (tmp_path / "all1.csv").read_bytes()
    rep = json.loads(paths[0].read_text())
    assert rep["kl_dims"] == 2 and rep["k"] == 5 and np.isfinite(rep["kl_estimate"])


def test_evaluate_unsupported_metric(runs, tmp_path, capsys):
    argv = ["evaluate", "--samples", str(runs / "s1.csv"), "--target", "rings", "--metric", "score", "--out", str(tmp_path / "r.json")]
    assert cli.main(argv) == 2
    assert not (tmp_path / "r.json").exists()
    assert "oracle" in capsys.readouterr().err


def test_oracle_figure_and_bounds(tmp_path):
    fig = tmp_path / "fig.csv"
    assert cli.main(["oracle", "figure-1", "--out", str(fig), "--points", "5"]) == 0
    header, *rows = fig.read_text().splitlines()
    assert header == "w1,kl,fisher,logdensity_gap" and len(rows) == 5
    again = tmp_path / "fig2.csv"
    assert cli.main(["oracle", "figure-1", "--out", str(again), "--points", "5"]) == 0
    assert fig.read_bytes() == again.read_bytes()
    bounds = tmp_path / "bounds.csv"
    assert cli.main(["oracle", "bounds", "--out", str(bounds), "--pairs", "2"]) == 0
    lines = bounds.read_text().splitlines()
    assert lines[0] == "pair,quantity,bound,numeric,satisfied"
    assert all(line.endswith("true") for line in lines[1:]) and len(lines) == 7


def test_oracle_score_residual(tmp_path):
    out = tmp_path / "res.csv"
    assert cli.main(["oracle", "score-residual", "--out", str(out), "--points", "4"]) == 0
    rows = [line.split(",") for line in out.read_text().splitlines()[1:]]
    assert {r[0] for r in rows} == {"0.5/0.5", "0.2/0.8"}
    assert max(float(r[-1]) for r in rows) <= 1e-6


@pytest.mark.slow
def test_gaussian_smoke_config(tmp_path):
    from pathlib import Path

    cfg = Path(__file__).resolve().parents[1] / "configs" / "gaussian_smoke.yaml"
    assert cli.main(["train", "--config", str(cfg), "--out", str(tmp_path / "smoke")]) == 0
    summary = json.loads((tmp_path / "smoke" / "summary.json").read_text())
    assert summary["iterations"] == 5000 and summary["final_loss"] <= 1e-4
