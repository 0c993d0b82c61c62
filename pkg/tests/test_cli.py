import io
import os
import shutil
from contextlib import redirect_stderr, redirect_stdout

import pytest

from rlst.cli import LOCK_NAME, main

TINY = """\
# small enough that the whole pipeline runs in seconds
synth_content = 10
synth_sentences = 80
hidden_dim = 8
embed_dim = 8
attention_dim = 8
gen_epochs = 2
style_epochs = 1
lm_epochs = 1
rollouts = 2
beam_width = 3
rl_max_steps = 4
eval_every = 2
"""

PIPELINE = ("synth-data", "pretrain-gen", "pretrain-style", "pretrain-lm", "train-rl", "evaluate")


def run(*argv):
    out, err = io.StringIO(), io.StringIO()
    with redirect_stdout(out), redirect_stderr(err):
        code = main(list(argv))
    return code, out.getvalue(), err.getvalue()


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    conf = root / "tiny.conf"
    conf.write_text(TINY)
    results = {}
    for cmd in PIPELINE:
        results[cmd] = run(cmd, "--config", str(conf), "--out", str(root / "run"))
        if cmd == "pretrain-lm":
            shutil.copytree(root / "run", root / "pretrained")
    results["report"] = run("report", "--config", str(conf), "--out", str(root / "run"))
    return root, conf, results


def fresh_copy(workspace, name):
    root, conf, _ = workspace
    dest = root / name
    shutil.copytree(root / "pretrained", dest)
    return dest


class TestPipeline:
    def test_every_command_succeeds(self, workspace):
        _, _, results = workspace
        for cmd, (code, _, err) in results.items():
            assert code == 0, (cmd, err)

    def test_artifacts(self, workspace):
        run_dir = workspace[0] / "run"
        for name in ("generator.ckpt", "style.ckpt", "eval_style.ckpt", "lm.ckpt", "eval_lm.ckpt", "vocab.tsv",
                     "rl/train_log.tsv", "rl/eval_log.tsv", "rl/generator_best.ckpt", "data/oracle.test.tsv"):
            assert (run_dir / name).exists(), name

    def test_training_log_rows(self, workspace):
        lines = (workspace[0] / "run" / "rl" / "train_log.tsv").read_text().splitlines()
        assert lines[0] == "step\tJ\tL_G\tL_D\tstyle\tsemantic\tfluency"
        assert [ln.split("\t")[0] for ln in lines[1:]] == ["1", "2", "3", "4"]
        evals = (workspace[0] / "run" / "rl" / "eval_log.tsv").read_text().splitlines()
        assert [ln.split("\t")[0] for ln in evals[1:]] == ["0", "2", "4"]

    def test_evaluation_report(self, workspace):
        code, out, _ = workspace[2]["evaluate"]
        header, row = out.splitlines()
        assert header == "content\tstyle\toverall\tperplexity\tcount"
        assert row.split("\t")[4] == str(len((workspace[0] / "run" / "data" / "test.a.txt").read_text().splitlines()))
        assert (workspace[0] / "run" / "evaluation.tsv").read_text() == out

    def test_report(self, workspace):
        report = workspace[0] / "run" / "report"
        assert (report / "training.png").stat().st_size > 0 and (report / "evaluation.png").stat().st_size > 0
        header, *rows = (report / "train_J.tsv").read_text().splitlines()
        assert header == "step\ttrain/J" and len(rows) == 4
        out = workspace[2]["report"][1]
        assert out.splitlines()[0] == "metric\tpoints\tfirst\tlast\ttail_mean"
        assert any(line.startswith("dev/overall\t3\t") for line in out.splitlines())


class TestCommands:
    def test_transfer_one_line_per_input(self, workspace, tmp_path):
        root, conf, _ = workspace
        src = tmp_path / "in.txt"
        src.write_text("I was very impressed with this location .\nw1 w2 w3\nw4\n")
        dest = tmp_path / "out.txt"
        code, _, _ = run("transfer", "--config", str(conf), "--out", str(root / "run"), "--input", str(src),
                         "--output", str(dest))
        assert code == 0
        assert len(dest.read_text().splitlines()) == 3
        code, out, _ = run("transfer", "--config", str(conf), "--out", str(root / "run"), "--input", str(src))
        assert code == 0 and out == dest.read_text()

    def test_copy_baseline_content(self, workspace):
        root, conf, _ = workspace
        sources = str(root / "run" / "data" / "test.a.txt")
        code, out, _ = run("evaluate", "--config", str(conf), "--out", str(root / "run"), "--generated", sources,
                           "--sources", sources)
        assert code == 0
        assert out.splitlines()[1].split("\t")[0] == "1.000000"

    def test_ppl(self, workspace):
        root, conf, _ = workspace
        code, out, _ = run("ppl", "--config", str(conf), "--out", str(root / "run"), "--input",
                           str(root / "run" / "data" / "dev.b.txt"))
        assert code == 0
        header, row = out.splitlines()
        assert header == "sentences\tperplexity" and float(row.split("\t")[1]) >= 1.0

    def test_missing_prerequisite_names_command(self, workspace, tmp_path):
        root, conf, _ = workspace
        assert run("synth-data", "--config", str(conf), "--out", str(tmp_path))[0] == 0
        code, _, err = run("train-rl", "--config", str(conf), "--out", str(tmp_path))
        assert code == 1 and "rlst pretrain-gen" in err

    def test_report_before_training(self, workspace, tmp_path):
        code, _, err = run("report", "--config", str(workspace[1]), "--out", str(tmp_path))
        assert code == 1 and "train-rl" in err


class TestReproducibility:
    def test_identical_runs_identical_logs(self, workspace):
        root, conf, _ = workspace
        again = fresh_copy(workspace, "again")
        assert run("train-rl", "--config", str(conf), "--out", str(again))[0] == 0
        for name in ("rl/train_log.tsv", "rl/eval_log.tsv", "rl/generator_best.ckpt", "rl/style_last.ckpt"):
            assert (again / name).read_bytes() == (root / "run" / name).read_bytes(), name

    def test_pretraining_is_deterministic(self, workspace, tmp_path):
        root, conf, _ = workspace
        for cmd in ("synth-data", "pretrain-gen"):
            assert run(cmd, "--config", str(conf), "--out", str(tmp_path))[0] == 0
        assert (tmp_path / "generator.ckpt").read_bytes() == (root / "run" / "generator.ckpt").read_bytes()
        assert (tmp_path / "data" / "train.a.txt").read_text() == (root / "run" / "data" / "train.a.txt").read_text()

    def test_resume_matches_straight_run(self, workspace):
        root, conf, _ = workspace
        part = fresh_copy(workspace, "resumed")
        assert run("train-rl", "--config", str(conf), "--out", str(part), "--set", "rl_max_steps=2")[0] == 0
        assert run("train-rl", "--config", str(conf), "--out", str(part), "--resume")[0] == 0
        for name in ("rl/train_log.tsv", "rl/eval_log.tsv"):
            assert (part / name).read_text() == (root / "run" / name).read_text(), name


class TestErrors:
    @pytest.mark.parametrize("argv", [
        ("frobnicate",),
        ("synth-data", "--set", "nonsense"),
        ("synth-data", "--set", "hiden_dim=3"),
        ("synth-data", "--set", "beam_width=0"),
        ("evaluate", "--sources", "x.txt"),
        ("transfer",),
    ])
    def test_usage_errors(self, argv, tmp_path):
        code, _, err = run(*argv, "--out", str(tmp_path))
        assert code == 1 and err.startswith("error:")

    def test_bad_log_level(self, tmp_path, monkeypatch):
        monkeypatch.setenv("RLST_LOG_LEVEL", "loud")
        assert run("synth-data", "--out", str(tmp_path))[0] == 1

    def test_missing_config_file(self, tmp_path):
        assert run("synth-data", "--config", str(tmp_path / "none.conf"), "--out", str(tmp_path))[0] == 1

    def test_live_lock_refused(self, tmp_path):
        (tmp_path / LOCK_NAME).write_text(str(os.getpid()))
        code, _, err = run("synth-data", "--out", str(tmp_path))
        assert code == 2 and "in use" in err
        assert (tmp_path / LOCK_NAME).exists()

    def test_stale_lock_taken_over(self, workspace, tmp_path):
        (tmp_path / LOCK_NAME).write_text("999999999")
        assert run("synth-data", "--config", str(workspace[1]), "--out", str(tmp_path))[0] == 0
        assert not (tmp_path / LOCK_NAME).exists()
