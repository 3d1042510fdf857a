import csv

import pytest

from maskhash.cli import main
from maskhash.config import RunConfig

SMALL = """\
# tiny synthetic run
k_classes = 3
videos_per_class = 6
frames_per_video = 12
feature_dim = 6
class_sep = 3.0
video_sep = 0.5
frame_noise = 0.1
n_frames = 3
code_length = 8
embed_dim = 8
repr_dim = 8
iterations = 40
batch_size = 4
seed = 2
ratios = 0.25, 0.5, 1.0
max_n = 5
"""


@pytest.fixture
def cfg(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text(SMALL)
    return path


def run(*argv):
    return main([str(a) for a in argv])


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_pipeline_outputs(cfg, tmp_path):
    out = tmp_path / "out"
    assert run("pipeline", "--config", cfg, "--out", out) == 0
    for name in ("features.mhf", "labels.txt", "model.mhm", "loss.csv", "mask.mhk",
                 "bit_map.csv", "bit_contribution.csv", "index.mhi", "map_report.csv",
                 "precision_at_n.csv", "pr_curve.csv", "ratio_sweep.csv"):
        assert (out / name).is_file(), name
    metrics = {r["metric"]: float(r["value"]) for r in read_csv(out / "map_report.csv")}
    assert 0.0 <= metrics["map"] <= 1.0
    assert len(read_csv(out / "precision_at_n.csv")) == 5
    assert len(read_csv(out / "pr_curve.csv")) == 101
    assert [float(r["ratio"]) for r in read_csv(out / "ratio_sweep.csv")] == [0.25, 0.5, 1.0]


def test_pipeline_idempotent(cfg, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert run("pipeline", "--config", cfg, "--out", a) == 0
    assert run("pipeline", "--config", cfg, "--out", b) == 0
    for f in sorted(a.iterdir()):
        assert f.read_bytes() == (b / f.name).read_bytes(), f.name


def test_query(cfg, tmp_path, capsys):
    out = tmp_path / "out"
    assert run("pipeline", "--config", cfg, "--out", out) == 0
    _, query_set = RunConfig.from_file(cfg).datasets()
    vid = int(query_set.ids[0])
    assert run("query", "--config", cfg, "--out", out, "--video-id", vid, "--top-n", 4) == 0
    rows = read_csv(out / "query.csv")
    assert len(rows) == 4
    dists = [int(r["distance"]) for r in rows]
    assert dists == sorted(dists)
    capsys.readouterr()
    assert run("query", "--config", cfg, "--out", out, "--video-id", 9999) == 3
    assert "error[contract]" in capsys.readouterr().err


def test_sweep_appends_unit_ratio(cfg, tmp_path, capsys):
    out = tmp_path / "out"
    assert run("gen", "--config", cfg, "--out", out) == 0
    assert run("train", "--config", cfg, "--out", out) == 0
    capsys.readouterr()
    assert run("sweep", "--config", cfg, "--out", out, "--ratios", "0.3,0.6") == 0
    captured = capsys.readouterr()
    assert "appending" in captured.err
    rows = read_csv(out / "ratio_sweep.csv")
    assert [float(r["ratio"]) for r in rows] == [0.3, 0.6, 1.0]
    assert sum(r["best"] in ("1", "True", "true") for r in rows) == 1


def test_mask_command_csvs(cfg, tmp_path):
    out = tmp_path / "out"
    assert run("gen", "--config", cfg, "--out", out) == 0
    assert run("train", "--config", cfg, "--out", out) == 0
    assert run("mask", "--out", out, "--ratio", 0.5) == 0
    bit_map = read_csv(out / "bit_map.csv")
    assert len(bit_map) == 3
    assert all(sum(int(r[str(i)]) for i in range(8)) == 4 for r in bit_map)
    contrib = read_csv(out / "bit_contribution.csv")
    assert sum(int(r["contribution"]) for r in contrib) == 3 * 4


def test_missing_key_is_config_error(tmp_path, capsys):
    path = tmp_path / "bad.cfg"
    path.write_text(SMALL.replace("code_length = 8\n", ""))
    assert run("train", "--config", path, "--out", tmp_path) == 2
    assert "code_length" in capsys.readouterr().err


def test_unknown_key_and_no_config(tmp_path, capsys):
    path = tmp_path / "bad.cfg"
    path.write_text(SMALL + "colour = blue\n")
    assert run("train", "--config", path, "--out", tmp_path) == 2
    assert "colour" in capsys.readouterr().err
    assert run("train", "--out", tmp_path) == 2


def test_corrupt_checkpoint_is_data_error(cfg, tmp_path, capsys):
    (tmp_path / "model.mhm").write_bytes(b"garbage")
    assert run("mask", "--out", tmp_path) == 3
    assert "error[format]" in capsys.readouterr().err
    assert run("mask", "--out", tmp_path / "missing") == 3


def test_gradcheck_command(capsys):
    assert run("gradcheck", "--instances", 4) == 0
    assert "max_relative_error" in capsys.readouterr().out
