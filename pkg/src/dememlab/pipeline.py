"""Shadow-ensemble runs, attack execution, and memorization dumps.

An artifact directory is the unit of work: ``run_shadow`` fills it with
per-model checkpoints, the membership matrix, the confidence dump, natural
predictions, and per-model metrics, all guarded by a manifest carrying the
config hash and file checksums. ``run_attack`` and ``run_memorize`` consume
those artifacts. Runs are idempotent and resumable: completed model indices
recorded in the manifest are skipped, and a rerun against a different config
refuses to mix.
"""

from __future__ import annotations

import csv
import hashlib
import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import attacks as atk
from . import mia
from . import models as md
from .config import ExperimentConfig, build_config, parse_kv
from .datasets import Dataset, load_csv, save_csv
from .errors import ConflictError, CoverageError, FormatError
from .memorization import assign_bins, from_correctness, inclusion_mask
from .seeding import EVAL_STREAM, QUERY_STREAM, mix64
from .trainers import train

Array = np.ndarray

MANIFEST_VERSION = 1
_LOSS_CONF_FLOOR = 1e-12


def fmt(value) -> str:
    """Shortest round-trip decimal for floats; plain str otherwise."""
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def sha256_file(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_csv(path: Path, header: list[str], rows, comment: str | None = None) -> None:
    with open(path, "w", newline="") as f:
        if comment:
            f.write(f"# {comment}\n")
        writer = csv.writer(f)
        writer.writerow(header)
        writer.writerows(rows)


def read_csv(path: Path) -> tuple[list[str], list[list[str]]]:
    """Read a CSV, skipping leading ``#`` comment lines."""
    if not Path(path).exists():
        raise FormatError(f"missing file: {path}")
    with open(path, newline="") as f:
        lines = [ln for ln in f if not ln.startswith("#")]
    rows = list(csv.reader(lines))
    if not rows:
        raise FormatError(f"empty file: {path}")
    return rows[0], rows[1:]


# ---------------------------------------------------------------------------
# Manifest


def _manifest_path(out_dir: Path) -> Path:
    return out_dir / "manifest.json"


def load_manifest(out_dir: Path) -> dict | None:
    path = _manifest_path(out_dir)
    if not path.exists():
        return None
    return json.loads(path.read_text())


def save_manifest(out_dir: Path, manifest: dict) -> None:
    manifest["wall_clock"] = {"updated_at": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime())}
    _manifest_path(out_dir).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def verify_checksums(out_dir: Path, manifest: dict, names) -> None:
    for name in names:
        recorded = manifest.get("files", {}).get(name)
        if recorded is None:
            raise ConflictError(f"manifest has no checksum for {name}")
        actual = sha256_file(out_dir / name)
        if actual != recorded:
            raise ConflictError(
                f"checksum mismatch for {name}: manifest {recorded[:12]}.., "
                f"file {actual[:12]}..")


# ---------------------------------------------------------------------------
# Shadow runs


@dataclass
class MemberResult:
    index: int
    mask: Array
    confidences: Array
    predictions: Array
    metrics: dict[str, float]


def _checkpoint_name(index: int) -> str:
    return f"checkpoints/model_{index:04d}.ckpt"


def _evaluate_member(model: md.Model, dataset: Dataset, config: ExperimentConfig,
                     seed: int, mask: Array) -> tuple[Array, Array, dict[str, float]]:
    """Confidences (per query mode), natural predictions, split metrics."""
    x, y = dataset.features, dataset.labels
    if config.query_mode == "adversarial":
        rng = np.random.default_rng(mix64(seed, QUERY_STREAM))
        x_query = atk.pgd(model, x, y, config.eval_attack, rng)
    else:
        x_query = x
    conf = md.true_class_confidence(model, x_query, y)
    preds = md.predict(model, x)
    out = ~mask
    rob_rng = np.random.default_rng(mix64(seed, EVAL_STREAM))
    metrics = {
        "n_members": int(mask.sum()),
        "nat_acc_members": float(np.mean(preds[mask] == y[mask])),
        "nat_acc_nonmembers": float(np.mean(preds[out] == y[out])) if out.any() else np.nan,
        "rob_acc_nonmembers": (atk.robust_accuracy(model, x[out], y[out],
                                                   config.eval_attack, rob_rng)
                               if out.any() else np.nan),
    }
    return conf, preds, metrics


def _train_member(resolved_text: str, out_dir_str: str, index: int) -> MemberResult:
    """Train one ensemble member and write its checkpoint. Worker-safe."""
    config = build_config(parse_kv(resolved_text))
    out_dir = Path(out_dir_str)
    dataset = load_csv(out_dir / "dataset.csv")
    base_seed = config.train.seed
    seed = md.member_seed(base_seed, index)
    mask = inclusion_mask(dataset.n, config.inclusion_prob, base_seed, index)
    model, history = train(replace(config.train, seed=seed), dataset.subset(mask))
    md.save_checkpoint(model, out_dir / _checkpoint_name(index))
    conf, preds, metrics = _evaluate_member(model, dataset, config, seed, mask)
    metrics["final_mean_loss"] = history.records[-1].mean_loss
    metrics["final_psi"] = history.records[-1].psi
    return MemberResult(index, mask, conf, preds, metrics)


def _reload_member(config: ExperimentConfig, out_dir: Path, dataset: Dataset,
                   index: int, stored_metrics: dict[str, float]) -> MemberResult:
    """Rebuild a completed member's rows from its checkpoint."""
    base_seed = config.train.seed
    seed = md.member_seed(base_seed, index)
    mask = inclusion_mask(dataset.n, config.inclusion_prob, base_seed, index)
    model = md.load_checkpoint(out_dir / _checkpoint_name(index))
    conf, preds, metrics = _evaluate_member(model, dataset, config, seed, mask)
    metrics["final_mean_loss"] = stored_metrics["final_mean_loss"]
    metrics["final_psi"] = stored_metrics["final_psi"]
    return MemberResult(index, mask, conf, preds, metrics)


_METRIC_FIELDS = ("n_members", "nat_acc_members", "nat_acc_nonmembers",
                  "rob_acc_nonmembers", "final_mean_loss", "final_psi")


def run_shadow(config: ExperimentConfig, out_dir, workers: int = 1) -> Path:
    """Train the shadow ensemble and write all per-run artifacts.

    Completed members recorded in the manifest are not retrained; a manifest
    whose config hash differs from the requested config is a conflict.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "checkpoints").mkdir(exist_ok=True)
    cfg_hash = config.config_hash()

    manifest = load_manifest(out_dir)
    if manifest is None:
        manifest = {"format_version": MANIFEST_VERSION, "config_hash": cfg_hash,
                    "base_seed": config.train.seed, "n_models": config.n_models,
                    "query_mode": config.query_mode, "members": {}, "files": {}}
    elif manifest.get("config_hash") != cfg_hash:
        raise ConflictError(
            f"artifact directory {out_dir} holds a run with config hash "
            f"{manifest.get('config_hash', '?')[:12]}.., refusing to mix with "
            f"{cfg_hash[:12]}..")

    (out_dir / "config.cfg").write_text(config.resolved_text())
    dataset_path = out_dir / "dataset.csv"
    if not dataset_path.exists():
        save_csv(config.dataset.load(), dataset_path)
    dataset = load_csv(dataset_path)

    completed = {int(k): v for k, v in manifest["members"].items()}
    pending = [m for m in range(config.n_models) if m not in completed]
    for m in completed:
        ckpt = out_dir / _checkpoint_name(m)
        if not ckpt.exists() or sha256_file(ckpt) != completed[m]["sha256"]:
            raise ConflictError(f"checkpoint for completed member {m} is missing or altered")

    results: dict[int, MemberResult] = {}
    text = config.resolved_text()
    if pending:
        if workers > 1:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                futures = {m: pool.submit(_train_member, text, str(out_dir), m)
                           for m in pending}
                for m in pending:
                    results[m] = futures[m].result()
                    _record_member(manifest, out_dir, results[m])
                    save_manifest(out_dir, manifest)
        else:
            for m in pending:
                results[m] = _train_member(text, str(out_dir), m)
                _record_member(manifest, out_dir, results[m])
                save_manifest(out_dir, manifest)
    for m, entry in completed.items():
        results[m] = _reload_member(config, out_dir, dataset, m, entry["metrics"])

    ordered = [results[m] for m in range(config.n_models)]
    _write_shadow_tables(out_dir, config, dataset, ordered, cfg_hash)
    manifest["files"] = {name: sha256_file(out_dir / name)
                         for name in ("dataset.csv", "membership.csv", "confidences.csv",
                                      "predictions.csv", "metrics.csv", "config.cfg")}
    save_manifest(out_dir, manifest)
    return out_dir


def _record_member(manifest: dict, out_dir: Path, result: MemberResult) -> None:
    name = _checkpoint_name(result.index)
    manifest["members"][str(result.index)] = {
        "checkpoint": name,
        "sha256": sha256_file(out_dir / name),
        "metrics": result.metrics,
    }


def _write_shadow_tables(out_dir: Path, config: ExperimentConfig, dataset: Dataset,
                         results: list[MemberResult], cfg_hash: str) -> None:
    comment = f"config_hash={cfg_hash} base_seed={config.train.seed}"
    n = dataset.n
    write_csv(out_dir / "membership.csv",
              ["model_id"] + [f"s{i}" for i in range(n)],
              ([r.index] + [int(v) for v in r.mask] for r in results),
              comment)
    write_csv(out_dir / "predictions.csv",
              ["model_id"] + [f"s{i}" for i in range(n)],
              ([r.index] + [int(v) for v in r.predictions] for r in results),
              comment)
    write_csv(out_dir / "confidences.csv",
              ["model_id", "sample_id", "is_member", "true_label", "confidence"],
              ([r.index, s, int(r.mask[s]), int(dataset.labels[s]), fmt(r.confidences[s])]
               for r in results for s in range(n)),
              comment)
    write_csv(out_dir / "metrics.csv",
              ["model_id"] + list(_METRIC_FIELDS),
              ([r.index] + [fmt(r.metrics[k]) if k != "n_members" else int(r.metrics[k])
                            for k in _METRIC_FIELDS] for r in results),
              comment)


# ---------------------------------------------------------------------------
# Loading shadow artifacts back


@dataclass
class ShadowArtifacts:
    config: ExperimentConfig
    dataset: Dataset
    ensemble: mia.ShadowEnsemble
    predictions: Array
    manifest: dict
    out_dir: Path


def load_artifacts(out_dir, verify: bool = True) -> ShadowArtifacts:
    out_dir = Path(out_dir)
    manifest = load_manifest(out_dir)
    if manifest is None:
        raise FormatError(f"no manifest in {out_dir}; run the shadow stage first")
    config = build_config(parse_kv((out_dir / "config.cfg").read_text()))
    if config.config_hash() != manifest["config_hash"]:
        raise ConflictError(f"config.cfg in {out_dir} does not match the manifest hash")
    if verify:
        verify_checksums(out_dir, manifest,
                         ("dataset.csv", "membership.csv", "confidences.csv",
                          "predictions.csv", "metrics.csv"))
    dataset = load_csv(out_dir / "dataset.csv")

    def read_grid(name: str) -> Array:
        header, rows = read_csv(out_dir / name)
        grid = np.array([[float(v) for v in row[1:]] for row in rows])
        order = np.argsort([int(row[0]) for row in rows])
        return grid[order]

    membership = read_grid("membership.csv").astype(bool)
    predictions = read_grid("predictions.csv").astype(np.int64)
    _, conf_rows = read_csv(out_dir / "confidences.csv")
    conf = np.empty((membership.shape[0], dataset.n))
    for row in conf_rows:
        conf[int(row[0]), int(row[1])] = float(row[4])
    return ShadowArtifacts(config, dataset, mia.ShadowEnsemble(membership, conf),
                           predictions, manifest, out_dir)


# ---------------------------------------------------------------------------
# Attacks


def _loss_scores(confidences: Array) -> Array:
    return np.log(np.clip(confidences, _LOSS_CONF_FLOOR, 1.0))


def attack_target(art: ShadowArtifacts, target: int, method: str,
                  variance_mode: str) -> mia.AttackScores:
    """Scores for one target model using the remaining models as shadows."""
    ens = art.ensemble
    truth = ens.membership[target]
    if method == "loss":
        return mia.AttackScores(_loss_scores(ens.confidences[target]), truth)
    in_mean, in_var, out_mean, out_var, valid = mia.ensemble_gaussians(
        ens, exclude_model=target, variance_mode=variance_mode)
    if not valid.any():
        raise CoverageError(
            f"no sample has 2 IN and 2 OUT models among the {ens.n_models - 1} "
            f"shadows of target {target}; increase ensemble.n_models")
    phi = mia.logit_scale(ens.confidences[target])
    scores = mia.score_targets(method, phi[valid], in_mean[valid], in_var[valid],
                               out_mean[valid], out_var[valid])
    return mia.AttackScores(scores, truth[valid])


def run_attack(artifact_dir, methods=None, fpr_targets=None) -> Path:
    """Leave-one-model-out attack over every ensemble member.

    Writes per-target rows (attack_report.csv) and the mean/std aggregate
    across targets (attack_summary.csv). FPR targets finer than the
    non-member pool can resolve are flagged unresolvable, never silently
    reported.
    """
    art = load_artifacts(artifact_dir)
    config = art.config
    methods = tuple(methods) if methods else config.mia_methods
    fpr_targets = tuple(fpr_targets) if fpr_targets else config.fpr_targets
    variance_mode = config.effective_variance_mode()

    rows = []
    summary: dict[tuple[str, float], list[float]] = {}
    for method in methods:
        for target in range(art.ensemble.n_models):
            scores = attack_target(art, target, method, variance_mode)
            n_members = int(scores.is_member.sum())
            n_non = int((~scores.is_member).sum())
            for fpr in fpr_targets:
                tpr, threshold, _ = mia.tpr_at_fpr_detail(scores, fpr)
                unresolvable = int(n_non == 0 or fpr < 1.0 / n_non)
                rows.append([method, fmt(fpr), target, fmt(tpr), fmt(threshold),
                             n_members, n_non, unresolvable])
                summary.setdefault((method, fpr), []).append(tpr)

    comment = (f"config_hash={art.manifest['config_hash']} "
               f"base_seed={config.train.seed} variance_mode={variance_mode}")
    out = Path(artifact_dir)
    write_csv(out / "attack_report.csv",
              ["attack_name", "fpr_target", "target_model", "tpr", "threshold",
               "n_members", "n_nonmembers", "unresolvable"],
              rows, comment)
    summary_rows = []
    for method in methods:
        for fpr in fpr_targets:
            values = np.array(summary[(method, fpr)])
            n_non_pool = min(r[6] for r in rows if r[0] == method)
            summary_rows.append([
                method, fmt(fpr), len(values), fmt(values.mean()),
                fmt(values.std(ddof=1)) if len(values) > 1 else "",
                int(n_non_pool == 0 or fpr < 1.0 / n_non_pool)])
    write_csv(out / "attack_summary.csv",
              ["attack_name", "fpr_target", "n_targets", "tpr_mean", "tpr_std",
               "unresolvable"],
              summary_rows, comment)
    manifest = art.manifest
    manifest["files"]["attack_report.csv"] = sha256_file(out / "attack_report.csv")
    manifest["files"]["attack_summary.csv"] = sha256_file(out / "attack_summary.csv")
    save_manifest(out, manifest)
    return out / "attack_report.csv"


# ---------------------------------------------------------------------------
# Memorization dump


def run_memorize(artifact_dir) -> Path:
    """Reduce the shadow ensemble to per-sample memorization scores."""
    art = load_artifacts(artifact_dir)
    correctness = art.predictions == art.dataset.labels[None, :]
    estimate = from_correctness(art.ensemble.membership, correctness)
    bins, n_clamped = assign_bins(estimate.per_sample)
    out = Path(artifact_dir) / "memorization.csv"
    comment = (f"config_hash={art.manifest['config_hash']} "
               f"base_seed={art.config.train.seed} n_clamped={n_clamped}")
    write_csv(out,
              ["sample_id", "mem_estimate", "in_count", "out_count", "bin"],
              ([s, fmt(estimate.per_sample[s]), int(estimate.in_counts[s]),
                int(estimate.out_counts[s]), int(bins[s])]
               for s in range(art.dataset.n)),
              comment)
    manifest = art.manifest
    manifest["files"]["memorization.csv"] = sha256_file(out)
    save_manifest(Path(artifact_dir), manifest)
    return out
