"""Leakage reports: method comparison, per-memorization-bin tables, sweeps.

``run_report`` consumes one or more completed artifact directories that share
a sample universe. Directories differing only in seeds count as repeated runs
of one experimental point and aggregate to mean/std; a single remaining
varying key (or an explicit ``sweep_param``) produces the long-format sweep
table. Figures are rendered next to every CSV.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import figures, mia
from .errors import ConflictError, FormatError
from .memorization import N_BINS
from .pipeline import ShadowArtifacts, attack_target, fmt, load_artifacts, read_csv, write_csv

# Keys that identify repeated runs of the same experimental point rather
# than different points.
_SEED_KEYS = ("train.seed", "dataset.seed")


@dataclass
class RunData:
    """Everything loaded from one artifact directory."""

    art: ShadowArtifacts
    tpr: dict[tuple[str, float], float]          # (attack, fpr) -> mean over targets
    unresolvable: dict[tuple[str, float], bool]
    nat_acc: float
    rob_acc: float
    psi_final: float
    mem_bins: np.ndarray | None


def _load_run(out_dir: Path) -> RunData:
    art = load_artifacts(out_dir)
    header, rows = read_csv(out_dir / "attack_report.csv")
    col = {name: i for i, name in enumerate(header)}
    per_run: dict[tuple[str, float], list[float]] = {}
    unresolvable: dict[tuple[str, float], bool] = {}
    for row in rows:
        key = (row[col["attack_name"]], float(row[col["fpr_target"]]))
        per_run.setdefault(key, []).append(float(row[col["tpr"]]))
        unresolvable[key] = unresolvable.get(key, False) or row[col["unresolvable"]] == "1"
    tpr = {key: float(np.mean(vals)) for key, vals in per_run.items()}

    header, rows = read_csv(out_dir / "metrics.csv")
    col = {name: i for i, name in enumerate(header)}
    nat = [float(r[col["nat_acc_nonmembers"]]) for r in rows]
    rob = [float(r[col["rob_acc_nonmembers"]]) for r in rows]
    psi = [float(r[col["final_psi"]]) for r in rows]

    mem_bins = None
    mem_path = out_dir / "memorization.csv"
    if mem_path.exists():
        header, rows = read_csv(mem_path)
        col = {name: i for i, name in enumerate(header)}
        mem_bins = np.full(art.dataset.n, -1, dtype=np.int64)
        for r in rows:
            mem_bins[int(r[col["sample_id"]])] = int(r[col["bin"]])

    return RunData(art, tpr, unresolvable, float(np.nanmean(nat)),
                   float(np.nanmean(rob)), float(np.mean(psi)), mem_bins)


def _group_key(run: RunData) -> tuple[tuple[str, str], ...]:
    resolved = run.art.config.resolved
    return tuple((k, v) for k, v in sorted(resolved.items()) if k not in _SEED_KEYS)


def _group_label(run: RunData) -> str:
    cfg = run.art.config
    label = cfg.train.method
    if cfg.train.dp.enabled:
        label += "+dp"
    if cfg.train.demem_lambda > 0:
        label += "+demem"
    return label


def _mean_std(values: list[float]) -> tuple[str, str]:
    arr = np.asarray(values, dtype=np.float64)
    mean = fmt(arr.mean())
    std = fmt(arr.std(ddof=1)) if arr.size > 1 else ""
    return mean, std


def _detect_sweep_param(keys: list[tuple[tuple[str, str], ...]]) -> str | None:
    if len(keys) < 2:
        return None
    varying = set()
    for (k, v) in keys[0]:
        if any(dict(other)[k] != v for other in keys[1:]):
            varying.add(k)
    # Step sizes derive from epsilon; a varying epsilon drags them along.
    if "attack.epsilon" in varying:
        varying -= {"attack.step_size", "eval_attack.step_size"}
    varying -= {"train.method"}
    if len(varying) == 1:
        return varying.pop()
    return None


def _bin_rows(runs: list[RunData], attack: str, fpr: float) -> list[tuple[int, int, list[float], list[float]]]:
    """Per-bin (bin, n_samples, tpr per run, test acc per run) for one group."""
    variance_mode = runs[0].art.config.effective_variance_mode()
    per_bin_tpr: dict[int, list[float]] = {}
    per_bin_acc: dict[int, list[float]] = {}
    bin_sizes: dict[int, int] = {}
    for run in runs:
        bins = run.mem_bins
        art = run.art
        labels = art.dataset.labels
        for b in range(N_BINS + 1):
            count = int((bins == b).sum())
            if count:
                bin_sizes[b] = count
        target_tpr: dict[int, list[float]] = {}
        target_acc: dict[int, list[float]] = {}
        for target in range(art.ensemble.n_models):
            member = art.ensemble.membership[target]
            if attack == "loss":
                scores_all = np.log(np.clip(art.ensemble.confidences[target], 1e-12, 1.0))
                valid = np.ones(art.dataset.n, dtype=bool)
            else:
                in_mean, in_var, out_mean, out_var, valid = mia.ensemble_gaussians(
                    art.ensemble, exclude_model=target, variance_mode=variance_mode)
                phi = mia.logit_scale(art.ensemble.confidences[target])
                scores_all = np.full(art.dataset.n, -np.inf)
                scores_all[valid] = mia.score_targets(
                    attack, phi[valid], in_mean[valid], in_var[valid],
                    out_mean[valid], out_var[valid])
            attack_scores = mia.AttackScores(scores_all[valid], member[valid])
            _, threshold, _ = mia.tpr_at_fpr_detail(attack_scores, fpr)
            flagged = scores_all >= threshold
            preds_ok = art.predictions[target] == labels
            for b in bin_sizes:
                in_bin = bins == b
                bin_members = in_bin & member & valid
                if bin_members.any():
                    target_tpr.setdefault(b, []).append(float(flagged[bin_members].mean()))
                bin_non = in_bin & ~member
                if bin_non.any():
                    target_acc.setdefault(b, []).append(float(preds_ok[bin_non].mean()))
        for b, vals in target_tpr.items():
            per_bin_tpr.setdefault(b, []).append(float(np.mean(vals)))
        for b, vals in target_acc.items():
            per_bin_acc.setdefault(b, []).append(float(np.mean(vals)))
    out = []
    for b in sorted(bin_sizes):
        out.append((b, bin_sizes[b], per_bin_tpr.get(b, []), per_bin_acc.get(b, [])))
    return out


def run_report(artifact_dirs, out_dir, sweep_param: str | None = None) -> Path:
    """Aggregate attack/metric artifacts into comparison tables and figures."""
    dirs = [Path(d) for d in artifact_dirs]
    if not dirs:
        raise FormatError("no artifact directories given")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    runs = [_load_run(d) for d in dirs]
    universe = {run.art.manifest["files"]["dataset.csv"] for run in runs}
    if len(universe) != 1:
        raise ConflictError("artifact directories hold different sample universes")

    fpr_sets = [set(k[1] for k in run.tpr) for run in runs]
    fprs = sorted(set.intersection(*fpr_sets))
    if not fprs:
        raise ConflictError("artifact directories share no FPR targets")
    attack_sets = [set(k[0] for k in run.tpr) for run in runs]
    attacks = [a for a in mia.ATTACK_METHODS if a in set.intersection(*attack_sets)]

    groups: dict[tuple, list[RunData]] = {}
    for run in runs:
        groups.setdefault(_group_key(run), []).append(run)
    ordered_keys = sorted(groups, key=lambda k: dict(k).get("train.method", ""))

    comment = (f"config_hash={runs[0].art.manifest['config_hash']} "
               f"base_seed={runs[0].art.config.train.seed}"
               if len(runs) == 1 else
               f"n_runs={len(runs)} seeds="
               + ",".join(str(r.art.config.train.seed) for r in runs))

    # (a) method comparison table
    header = ["label", "method", "demem_lambda", "dp_enabled", "epsilon",
              "attack_name", "n_runs", "n_models", "nat_acc_mean", "nat_acc_std",
              "rob_acc_mean", "rob_acc_std"]
    for fpr in fprs:
        header += [f"tpr_at_{fpr:g}_mean", f"tpr_at_{fpr:g}_std", f"unresolvable_{fpr:g}"]
    method_rows = []
    for key in ordered_keys:
        members = groups[key]
        cfg = members[0].art.config
        nat_mean, nat_std = _mean_std([r.nat_acc for r in members])
        rob_mean, rob_std = _mean_std([r.rob_acc for r in members])
        for attack in attacks:
            row = [_group_label(members[0]), cfg.train.method,
                   fmt(cfg.train.demem_lambda), int(cfg.train.dp.enabled),
                   fmt(cfg.eval_attack.epsilon), attack, len(members),
                   cfg.n_models, nat_mean, nat_std, rob_mean, rob_std]
            for fpr in fprs:
                tpr_mean, tpr_std = _mean_std([r.tpr[(attack, fpr)] for r in members])
                flagged = any(r.unresolvable[(attack, fpr)] for r in members)
                row += [tpr_mean, tpr_std, int(flagged)]
            method_rows.append(row)
    methods_path = out_dir / "methods.csv"
    write_csv(methods_path, header, method_rows, comment)

    # (b) per-memorization-bin table, when every run carries a dump
    bins_path = None
    if all(run.mem_bins is not None for run in runs):
        bin_attack = next((a for a in attacks if a != "loss"), attacks[0])
        bin_fpr = fprs[0]
        bin_header = ["label", "attack_name", "fpr_target", "bin_index", "n_samples",
                      "tpr_mean", "tpr_std", "test_acc_mean", "test_acc_std"]
        bin_rows = []
        for key in ordered_keys:
            members = groups[key]
            label = _group_label(members[0])
            for b, n_samples, tprs, accs in _bin_rows(members, bin_attack, bin_fpr):
                tpr_mean, tpr_std = _mean_std(tprs) if tprs else ("", "")
                acc_mean, acc_std = _mean_std(accs) if accs else ("", "")
                bin_rows.append([label, bin_attack, fmt(bin_fpr), b, n_samples,
                                 tpr_mean, tpr_std, acc_mean, acc_std])
        bins_path = out_dir / "bins.csv"
        write_csv(bins_path, bin_header, bin_rows, comment)

    # (c) sweep table
    sweep_path = None
    if sweep_param is None:
        sweep_param = _detect_sweep_param(list(groups))
    if sweep_param is not None:
        sweep_header = ["sweep_param", "sweep_value", "label", "method", "n_runs",
                        "nat_acc_mean", "nat_acc_std", "rob_acc_mean", "rob_acc_std",
                        "psi_final_mean", "psi_final_std"]
        for fpr in fprs:
            sweep_header += [f"tpr_at_{fpr:g}_mean", f"tpr_at_{fpr:g}_std"]
        sweep_rows = []
        primary = next((a for a in attacks if a != "loss"), attacks[0])

        def sweep_sort(key):
            value = dict(key)[sweep_param]
            try:
                return (0, float(value), "")
            except ValueError:
                return (1, 0.0, value)

        for key in sorted(groups, key=lambda k: (dict(k).get("train.method", ""),
                                                 sweep_sort(k))):
            members = groups[key]
            cfg = members[0].art.config
            value = cfg.resolved[sweep_param]
            nat_mean, nat_std = _mean_std([r.nat_acc for r in members])
            rob_mean, rob_std = _mean_std([r.rob_acc for r in members])
            psi_mean, psi_std = _mean_std([r.psi_final for r in members])
            row = [sweep_param, value, _group_label(members[0]), cfg.train.method,
                   len(members), nat_mean, nat_std, rob_mean, rob_std,
                   psi_mean, psi_std]
            for fpr in fprs:
                tpr_mean, tpr_std = _mean_std([r.tpr[(primary, fpr)] for r in members])
                row += [tpr_mean, tpr_std]
            sweep_rows.append(row)
        sweep_path = out_dir / "sweep.csv"
        write_csv(sweep_path, sweep_header, sweep_rows, comment)

    figures.render_method_figure(methods_path, out_dir / "methods.png")
    if bins_path is not None:
        figures.render_bin_figure(bins_path, out_dir / "bins.png")
    if sweep_path is not None:
        figures.render_sweep_figure(sweep_path, out_dir / "sweep.png")
    return methods_path


def run_sweep(config, param: str, values, out_root, workers: int = 1,
              memorize: bool = True) -> Path:
    """Run the full pipeline once per swept value and report across them."""
    from .pipeline import run_attack, run_memorize, run_shadow

    if param not in config.resolved:
        raise ConflictError(f"unknown sweep parameter {param!r}")
    out_root = Path(out_root)
    dirs = []
    for value in values:
        sub = config.with_overrides(**{param: str(value)})
        target = out_root / f"{param.replace('.', '_')}_{value}"
        run_shadow(sub, target, workers=workers)
        run_attack(target)
        if memorize:
            run_memorize(target)
        dirs.append(target)
    return run_report(dirs, out_root / "report", sweep_param=param)
