"""CLI subcommands, flags, and exit codes."""

import pytest

from dememlab.cli import main
from dememlab.pipeline import read_csv

CONFIG = """
dataset.kind=two_gaussians
dataset.n=30
dataset.noise=0.1
dataset.seed=3
model.layer_widths=2,6,2
train.method=standard
train.epochs=3
train.batch_size=10
attack.epsilon=0.05
ensemble.n_models=6
mia.fpr_targets=0.25
"""


@pytest.fixture
def config_path(tmp_path):
    path = tmp_path / "exp.cfg"
    path.write_text(CONFIG)
    return path


class TestGenData:
    def test_writes_dataset(self, config_path, tmp_path, capsys):
        out = tmp_path / "data"
        assert main(["gen-data", "--config", str(config_path), "--out", str(out)]) == 0
        assert (out / "dataset.csv").exists()
        assert "30 samples" in capsys.readouterr().out

    def test_seed_flag_changes_data_unless_pinned(self, config_path, tmp_path):
        free = tmp_path / "free.cfg"  # no explicit dataset.seed
        free.write_text("dataset.n=30\n")
        a, b, c = tmp_path / "a", tmp_path / "b", tmp_path / "c"
        main(["gen-data", "--config", str(free), "--out", str(a), "--seed", "1"])
        main(["gen-data", "--config", str(free), "--out", str(b), "--seed", "2"])
        assert (a / "dataset.csv").read_bytes() != (b / "dataset.csv").read_bytes()
        # an explicit dataset.seed pins the data regardless of --seed
        main(["gen-data", "--config", str(config_path), "--out", str(c), "--seed", "2"])
        main(["gen-data", "--config", str(config_path), "--out", str(c), "--seed", "9"])
        first = (c / "dataset.csv").read_bytes()
        main(["gen-data", "--config", str(config_path), "--out", str(c), "--seed", "1"])
        assert (c / "dataset.csv").read_bytes() == first


class TestTrain:
    def test_writes_checkpoint_and_history(self, config_path, tmp_path, capsys):
        out = tmp_path / "single"
        assert main(["train", "--config", str(config_path), "--out", str(out)]) == 0
        assert (out / "model.ckpt").exists()
        header, rows = read_csv(out / "history.csv")
        assert header == ["epoch", "mean_loss", "psi", "nat_acc", "rob_acc"]
        assert len(rows) == 3


class TestFullPipeline:
    def test_shadow_attack_memorize_report(self, config_path, tmp_path):
        run = tmp_path / "run"
        assert main(["shadow", "--config", str(config_path), "--out", str(run)]) == 0
        assert main(["attack", "--out", str(run)]) == 0
        assert main(["memorize", "--out", str(run)]) == 0
        report = tmp_path / "report"
        assert main(["report", str(run), "--out", str(report)]) == 0
        assert (report / "methods.csv").exists()
        assert (report / "methods.png").exists()

    def test_sweep_command(self, config_path, tmp_path):
        out = tmp_path / "sweep"
        code = main(["sweep", "--config", str(config_path), "--out", str(out),
                     "--param", "train.demem_lambda", "--values", "0,0.2"])
        assert code == 0
        assert (out / "report" / "sweep.csv").exists()


class TestExitCodes:
    def test_config_error_is_2(self, tmp_path, capsys):
        bad = tmp_path / "bad.cfg"
        bad.write_text("train.method=warp\n")
        code = main(["shadow", "--config", str(bad), "--out", str(tmp_path / "x")])
        assert code == 2
        assert "error:" in capsys.readouterr().err

    def test_unknown_key_is_2(self, tmp_path):
        bad = tmp_path / "bad.cfg"
        bad.write_text("train.methud=standard\n")
        assert main(["shadow", "--config", str(bad), "--out", str(tmp_path / "x")]) == 2

    def test_missing_artifacts_is_3(self, tmp_path):
        assert main(["attack", "--out", str(tmp_path / "nothing")]) == 3

    def test_missing_config_file_is_3(self, tmp_path):
        missing = tmp_path / "nope.cfg"
        assert main(["gen-data", "--config", str(missing),
                     "--out", str(tmp_path / "x")]) == 3

    def test_runtime_error_is_4(self, config_path, tmp_path):
        diverging = tmp_path / "div.cfg"
        diverging.write_text(CONFIG + "train.learning_rate=1e80\n"
                             "train.demem_lambda=1.0\n")
        code = main(["train", "--config", str(diverging),
                     "--out", str(tmp_path / "x")])
        assert code == 4

    def test_conflicting_rerun_is_2(self, config_path, tmp_path):
        run = tmp_path / "run"
        main(["shadow", "--config", str(config_path), "--out", str(run)])
        changed = tmp_path / "changed.cfg"
        changed.write_text(CONFIG + "train.epochs=4\n")
        assert main(["shadow", "--config", str(changed), "--out", str(run)]) == 2
