"""End-to-end pipeline: shadow runs, attacks, memorization, reports."""

import json
from pathlib import Path

import numpy as np
import pytest

import dememlab.memorization as mem
from dememlab.config import build_config, parse_kv
from dememlab.errors import ConflictError
from dememlab.pipeline import (
    load_artifacts,
    read_csv,
    run_attack,
    run_memorize,
    run_shadow,
)
from dememlab.report import run_report, run_sweep

SMALL = """
dataset.kind=two_gaussians
dataset.n=40
dataset.noise=0.1
dataset.seed=3
model.layer_widths=2,8,2
train.method=standard
train.epochs=5
train.batch_size=16
train.seed=1
attack.epsilon=0.05
ensemble.n_models=4
mia.fpr_targets=0.25,0.01
"""


def small_config(**overrides):
    kv = parse_kv(SMALL)
    kv.update({k: str(v) for k, v in overrides.items()})
    return build_config(kv)


@pytest.fixture(scope="module")
def shadow_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("artifacts") / "run"
    run_shadow(small_config(), out)
    return out


@pytest.fixture(scope="module")
def attack_dir(tmp_path_factory):
    # Leave-one-model-out LiRA needs at least 5 shadows for IN/OUT coverage.
    out = tmp_path_factory.mktemp("artifacts") / "attackable"
    run_shadow(small_config(**{"ensemble.n_models": 8}), out)
    return out


@pytest.fixture(scope="module")
def completed_dirs(tmp_path_factory):
    root = tmp_path_factory.mktemp("runs")
    dirs = []
    for lam in ("0.0", "0.5"):
        out = root / f"lam_{lam}"
        cfg = small_config(**{"train.demem_lambda": lam, "ensemble.n_models": 8})
        run_shadow(cfg, out)
        run_attack(out)
        run_memorize(out)
        dirs.append(out)
    return dirs


def _tree_bytes(root: Path) -> dict[str, bytes]:
    out = {}
    for path in sorted(root.rglob("*")):
        if path.is_file() and path.name != "manifest.json":
            out[str(path.relative_to(root))] = path.read_bytes()
    return out


class TestRunShadow:
    def test_confidence_dump_has_m_times_s_rows(self, shadow_dir):
        _, rows = read_csv(shadow_dir / "confidences.csv")
        assert len(rows) == 4 * 40

    def test_artifact_files_present(self, shadow_dir):
        for name in ("manifest.json", "config.cfg", "dataset.csv", "membership.csv",
                     "confidences.csv", "predictions.csv", "metrics.csv"):
            assert (shadow_dir / name).exists()
        assert len(list((shadow_dir / "checkpoints").glob("*.ckpt"))) == 4

    def test_rerun_is_idempotent_and_byte_identical(self, shadow_dir, tmp_path):
        before = _tree_bytes(shadow_dir)
        run_shadow(small_config(), shadow_dir)
        assert _tree_bytes(shadow_dir) == before

    def test_fresh_run_reproduces_bytes(self, shadow_dir, tmp_path):
        other = tmp_path / "again"
        run_shadow(small_config(), other)
        assert _tree_bytes(other) == _tree_bytes(shadow_dir)

    def test_worker_count_does_not_change_bytes(self, shadow_dir, tmp_path):
        parallel = tmp_path / "par"
        run_shadow(small_config(), parallel, workers=2)
        assert _tree_bytes(parallel) == _tree_bytes(shadow_dir)

    def test_mismatched_config_refused(self, shadow_dir):
        with pytest.raises(ConflictError, match="refusing to mix"):
            run_shadow(small_config(**{"train.epochs": 6}), shadow_dir)

    def test_altered_checkpoint_detected(self, tmp_path):
        out = tmp_path / "tamper"
        run_shadow(small_config(), out)
        ckpt = out / "checkpoints" / "model_0000.ckpt"
        blob = bytearray(ckpt.read_bytes())
        blob[-1] ^= 0xFF
        ckpt.write_bytes(bytes(blob))
        with pytest.raises(ConflictError, match="missing or altered"):
            run_shadow(small_config(), out)

    def test_membership_counts_match_binomial_spread(self, tmp_path):
        # Bernoulli(0.5) over 32 models: per-sample IN counts live in [8, 24]
        # in nearly all draws.
        counts = []
        for seed in range(30):
            masks = [mem.inclusion_mask(20, 0.5, seed, m) for m in range(32)]
            counts.extend(np.array(masks).sum(axis=0))
        counts = np.array(counts)
        assert np.mean((counts >= 8) & (counts <= 24)) >= 0.99

    def test_manifest_records_hash_seeds_checksums(self, shadow_dir):
        manifest = json.loads((shadow_dir / "manifest.json").read_text())
        assert manifest["config_hash"] == small_config().config_hash()
        assert manifest["base_seed"] == 1
        assert set(manifest["files"]) >= {"dataset.csv", "membership.csv",
                                          "confidences.csv"}
        assert len(manifest["members"]) == 4


class TestRunAttack:
    def test_report_rows_and_columns(self, attack_dir):
        run_attack(attack_dir)
        header, rows = read_csv(attack_dir / "attack_report.csv")
        assert header == ["attack_name", "fpr_target", "target_model", "tpr",
                          "threshold", "n_members", "n_nonmembers", "unresolvable"]
        # 3 attacks x 2 fpr targets x 8 targets
        assert len(rows) == 3 * 2 * 8
        tprs = [float(r[3]) for r in rows]
        assert all(0.0 <= t <= 1.0 for t in tprs)

    def test_unresolvable_fpr_flagged(self, attack_dir):
        run_attack(attack_dir)
        _, rows = read_csv(attack_dir / "attack_report.csv")
        for row in rows:
            fpr, n_non, flag = float(row[1]), int(row[6]), row[7]
            assert flag == ("1" if fpr < 1.0 / n_non else "0")
        flagged = [r for r in rows if r[7] == "1"]
        assert flagged, "the 0.01 target cannot be resolved with ~20 non-members"

    def test_summary_aggregates_across_targets(self, attack_dir):
        run_attack(attack_dir)
        header, rows = read_csv(attack_dir / "attack_summary.csv")
        assert header[:4] == ["attack_name", "fpr_target", "n_targets", "tpr_mean"]
        assert len(rows) == 3 * 2
        assert all(int(r[2]) == 8 for r in rows)

    def test_explicit_methods_subset(self, attack_dir):
        run_attack(attack_dir, methods=["loss"], fpr_targets=[0.25])
        _, rows = read_csv(attack_dir / "attack_report.csv")
        assert {r[0] for r in rows} == {"loss"}

    def test_too_few_shadows_is_coverage_error(self, shadow_dir):
        from dememlab.errors import CoverageError
        with pytest.raises(CoverageError, match="increase ensemble.n_models"):
            run_attack(shadow_dir, methods=["lira_online"])

    def test_overfit_ensemble_leaks(self, tmp_path):
        out = tmp_path / "overfit"
        cfg = small_config(**{"dataset.n": 60, "dataset.noise": 0.35,
                              "train.epochs": 80, "ensemble.n_models": 8,
                              "mia.fpr_targets": "0.01",
                              "mia.methods": "lira_online"})
        run_shadow(cfg, out)
        run_attack(out)
        _, rows = read_csv(out / "attack_summary.csv")
        assert float(rows[0][3]) >= 5 * 0.01

    def test_checksum_mismatch_refused(self, tmp_path):
        out = tmp_path / "corrupt"
        run_shadow(small_config(), out)
        path = out / "confidences.csv"
        path.write_text(path.read_text().replace("0.", "0,", 1))
        with pytest.raises(ConflictError, match="checksum mismatch"):
            run_attack(out)


class TestRunMemorize:
    def test_dump_columns_and_ranges(self, shadow_dir):
        run_memorize(shadow_dir)
        header, rows = read_csv(shadow_dir / "memorization.csv")
        assert header == ["sample_id", "mem_estimate", "in_count", "out_count", "bin"]
        assert len(rows) == 40
        for row in rows:
            in_c, out_c, b = int(row[2]), int(row[3]), int(row[4])
            assert in_c + out_c == 4
            assert -1 <= b <= 21
            score = float(row[1])
            if not np.isnan(score):
                assert -1.0 <= score <= 1.0

    def test_matches_direct_reduction(self, shadow_dir):
        run_memorize(shadow_dir)
        art = load_artifacts(shadow_dir)
        correctness = art.predictions == art.dataset.labels[None, :]
        est = mem.from_correctness(art.ensemble.membership, correctness)
        _, rows = read_csv(shadow_dir / "memorization.csv")
        for row in rows:
            s = int(row[0])
            if np.isnan(est.per_sample[s]):
                assert row[1] == "nan"
            else:
                assert float(row[1]) == est.per_sample[s]


class TestRunReport:
    def test_method_table_and_figure(self, completed_dirs, tmp_path):
        report = tmp_path / "report"
        run_report(completed_dirs, report)
        header, rows = read_csv(report / "methods.csv")
        assert "nat_acc_mean" in header and "tpr_at_0.25_mean" in header
        assert len(rows) == 2 * 3  # two groups x three attacks
        assert (report / "methods.png").exists()

    def test_bin_table_emitted_with_mem_dumps(self, completed_dirs, tmp_path):
        report = tmp_path / "report_bins"
        run_report(completed_dirs, report)
        header, rows = read_csv(report / "bins.csv")
        assert header[:5] == ["label", "attack_name", "fpr_target", "bin_index",
                              "n_samples"]
        assert rows
        assert (report / "bins.png").exists()

    def test_sweep_table_detects_varying_lambda(self, completed_dirs, tmp_path):
        report = tmp_path / "report_sweep"
        run_report(completed_dirs, report)
        header, rows = read_csv(report / "sweep.csv")
        assert header[0] == "sweep_param"
        assert [r[0] for r in rows] == ["train.demem_lambda"] * 2
        assert sorted(r[1] for r in rows) == ["0.0", "0.5"]
        assert (report / "sweep.png").exists()

    def test_single_dir_report_has_no_sweep(self, completed_dirs, tmp_path):
        report = tmp_path / "single"
        run_report(completed_dirs[:1], report)
        assert not (report / "sweep.csv").exists()
        assert (report / "methods.csv").exists()

    def test_different_universes_conflict(self, completed_dirs, tmp_path):
        other = tmp_path / "other_universe"
        run_shadow(small_config(**{"dataset.seed": 999, "ensemble.n_models": 8}),
                   other)
        run_attack(other)
        run_memorize(other)
        with pytest.raises(ConflictError, match="universes"):
            run_report([completed_dirs[0], other], tmp_path / "bad")

    def test_report_is_deterministic(self, completed_dirs, tmp_path):
        a, b = tmp_path / "rep_a", tmp_path / "rep_b"
        run_report(completed_dirs, a)
        run_report(completed_dirs, b)
        for name in ("methods.csv", "bins.csv", "sweep.csv", "methods.png",
                     "bins.png", "sweep.png"):
            assert (a / name).read_bytes() == (b / name).read_bytes()


class TestRunSweep:
    def test_sweep_runs_pipeline_per_value(self, tmp_path):
        cfg = small_config(**{"ensemble.n_models": 6, "train.epochs": 3})
        run_sweep(cfg, "train.demem_lambda", ["0.0", "0.2"], tmp_path / "sw")
        report = tmp_path / "sw" / "report"
        header, rows = read_csv(report / "sweep.csv")
        assert [r[1] for r in rows] == ["0.0", "0.2"]
        for value in ("0.0", "0.2"):
            assert (tmp_path / "sw" / f"train_demem_lambda_{value}").is_dir()
