import pytest

from multisem.cli import run_cli
from multisem.harness import ABLATION_HEADER

FAST = ["--embed-dim", "8"]


def call(argv, capsys):
    code = run_cli([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture
def synth_dir(tmp_path, capsys):
    d = tmp_path / "data"
    code, out, _ = call(["gen-synth", "--classes", 40, "--instances", 20, "--dim", 8,
                         "--modality", "label:4:0.9", "--modality", "description:4:0.9",
                         "--seed", 3, "--out", d], capsys)
    assert code == 0 and "40 classes" in out
    return d


def test_pipeline_gen_train_eval(tmp_path, synth_dir, capsys):
    cfg = synth_dir / "run.cfg"
    ckpt = tmp_path / "m.ckpt"
    code, out, _ = call(["train", "--config", cfg, "--branches", "l/l", "--episodes", 5,
                         "--out", ckpt] + FAST, capsys)
    assert code == 0 and ckpt.exists() and "TRAIN episodes=5" in out
    code, out, _ = call(["eval", "--config", cfg, "--checkpoint", ckpt, "--episodes", 20,
                         "--way", 5, "--shot", 1, "--out", tmp_path / "r.txt"], capsys)
    assert code == 0
    assert "protocol: 5-way 1-shot, 15 queries/class, 20 test episodes" in out
    result = [line for line in out.splitlines() if line.startswith("RESULT")]
    assert len(result) == 1 and result[0].startswith("RESULT m acc=") and result[0].endswith("n=20")
    assert (tmp_path / "r.txt").read_text().strip() == result[0]


def test_eval_without_checkpoint_trains_first(synth_dir, capsys):
    code, out, _ = call(["eval", "--config", synth_dir / "run.cfg", "--train-episodes", 3,
                         "--episodes", 5] + FAST, capsys)
    assert code == 0 and "RESULT visual acc=" in out


def test_train_and_eval_match_checkpoint_path(tmp_path, synth_dir, capsys):
    cfg = synth_dir / "run.cfg"
    call(["train", "--config", cfg, "--branches", "l/l,d/v", "--episodes", 4, "--seed", 1,
          "--out", tmp_path / "a.ckpt"] + FAST, capsys)
    _, via_ckpt, _ = call(["eval", "--config", cfg, "--checkpoint", tmp_path / "a.ckpt",
                           "--episodes", 10, "--seed", 1], capsys)
    _, direct, _ = call(["eval", "--config", cfg, "--branches", "l/l,d/v", "--train-episodes", 4,
                         "--seed", 1, "--episodes", 10] + FAST, capsys)
    acc = lambda text: [w for w in text.split() if w.startswith("acc=")]  # noqa: E731
    assert acc(via_ckpt) == acc(direct)


def test_ablate_writes_one_row_per_grid_line(tmp_path, synth_dir, capsys):
    grid = tmp_path / "grid.cfg"
    grid.write_text("# label branches losses\na - 0\nb l/l 0\ne l/l,d/v 0\n")
    table = tmp_path / "table.tsv"
    code, out, _ = call(["ablate", "--config", synth_dir / "run.cfg", "--grid", grid,
                         "--train-episodes", 2, "--episodes", 4, "--out", table] + FAST, capsys)
    assert code == 0
    lines = table.read_text().splitlines()
    assert lines[0] == ABLATION_HEADER
    assert [line.split("\t")[:3] for line in lines[1:]] == [["a", "-", "0"], ["b", "l/l", "0"],
                                                           ["e", "l/l,d/v", "0"]]
    assert sum(line.startswith("RESULT ") for line in out.splitlines()) == 3


def test_check_grad_reports_worst_error(tmp_path, capsys):
    code, out, _ = call(["check-grad", "--out", tmp_path / "g.txt"], capsys)
    assert "worst relative error" in out
    assert sum(line.startswith("GRAD ") for line in out.splitlines()) == 16
    assert code in (0, 1)
    assert code == (0 if " FAIL" not in out else 1)


@pytest.mark.parametrize("argv", [[], ["bogus"], ["train", "--no-such-flag"], ["eval", "--way", "x"]])
def test_usage_errors_exit_2(argv, capsys):
    code, _, err = call(argv, capsys)
    assert code == 2 and "usage" in err


def test_runtime_errors_exit_1(tmp_path, synth_dir, capsys):
    code, _, err = call(["train", "--features", tmp_path / "missing.fslfeat"], capsys)
    assert code == 1 and "error" in err
    code, _, err = call(["train", "--config", synth_dir / "run.cfg", "--branches", "a/a"] + FAST, capsys)
    assert code == 1 and "attributes" in err
    bad = tmp_path / "bad.cfg"
    bad.write_text("way=5\nflavour=mint\n")
    code, _, err = call(["eval", "--config", bad], capsys)
    assert code == 1 and "bad.cfg:2" in err
