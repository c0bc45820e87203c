"""Flat key=value experiment configuration: parsing, defaults, hashing.

The format is one ``section.key=value`` pair per line, with ``#`` comments
and blank lines ignored. Every key has a default, the resolved (fully
materialized) form is canonical, and its SHA-256 is the config hash recorded
in artifact manifests. The complete key table lives in the README.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from pathlib import Path

from . import attacks as atk
from . import mia
from .datasets import KINDS, Dataset, generate_dataset, load_csv
from .errors import ConfigError
from .models import ModelConfig
from .trainers import METHODS, DpConfig, TrainConfig

_DEFAULTS: dict[str, str] = {
    "dataset.kind": "two_gaussians",
    "dataset.n": "2000",
    "dataset.noise": "0.1",
    "dataset.seed": "1",
    "dataset.csv_path": "",
    "model.layer_widths": "2,32,32,2",
    "train.method": "pgd_at",
    "train.epochs": "30",
    "train.batch_size": "64",
    "train.learning_rate": "0.1",
    "train.momentum": "0.9",
    "train.demem_lambda": "0.0",
    "train.trades_beta": "6.0",
    "train.seed": "0",
    "attack.epsilon": "0.05",
    "attack.step_size": "",      # defaults to epsilon / 4
    "attack.steps": "10",
    "attack.random_start": "true",
    "eval_attack.step_size": "",  # defaults to epsilon / 8
    "eval_attack.steps": "20",
    "eval_attack.random_start": "true",
    "dp.enabled": "false",
    "dp.noise_multiplier": "0.05",
    "dp.clip_norm": "10.0",
    "ensemble.n_models": "32",
    "ensemble.inclusion_prob": "0.5",
    "mia.methods": "lira_online,lira_offline,loss",
    "mia.fpr_targets": "1e-2,1e-3",
    "mia.query_mode": "natural",
    "mia.variance_mode": "auto",
}

QUERY_MODES = ("natural", "adversarial")


def parse_kv(text: str) -> dict[str, str]:
    """Parse key=value lines; duplicate or malformed lines are config errors."""
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        if key in out:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        out[key] = value
    return out


def _get_int(kv: dict[str, str], key: str) -> int:
    try:
        return int(kv[key])
    except ValueError:
        raise ConfigError(f"{key}: expected an integer, got {kv[key]!r}") from None


def _get_float(kv: dict[str, str], key: str) -> float:
    try:
        return float(kv[key])
    except ValueError:
        raise ConfigError(f"{key}: expected a number, got {kv[key]!r}") from None


def _get_bool(kv: dict[str, str], key: str) -> bool:
    value = kv[key].lower()
    if value not in ("true", "false"):
        raise ConfigError(f"{key}: expected true or false, got {kv[key]!r}")
    return value == "true"


def _get_choice(kv: dict[str, str], key: str, choices) -> str:
    if kv[key] not in choices:
        raise ConfigError(f"{key}: expected one of {', '.join(choices)}, got {kv[key]!r}")
    return kv[key]


def _get_list(kv: dict[str, str], key: str) -> list[str]:
    return [item.strip() for item in kv[key].split(",") if item.strip()]


@dataclass(frozen=True)
class DatasetSpec:
    kind: str
    n: int
    noise: float
    seed: int
    csv_path: str = ""

    def load(self) -> Dataset:
        if self.csv_path:
            return load_csv(self.csv_path)
        return generate_dataset(self.kind, self.n, self.noise, self.seed)


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything one experiment needs, plus its canonical resolved form."""

    dataset: DatasetSpec
    train: TrainConfig
    eval_attack: atk.AttackParams
    n_models: int
    inclusion_prob: float
    mia_methods: tuple[str, ...]
    fpr_targets: tuple[float, ...]
    query_mode: str
    variance_mode: str
    resolved: dict[str, str]

    def resolved_text(self) -> str:
        return "".join(f"{k}={self.resolved[k]}\n" for k in sorted(self.resolved))

    def config_hash(self) -> str:
        return hashlib.sha256(self.resolved_text().encode()).hexdigest()

    def effective_variance_mode(self) -> str:
        if self.variance_mode != "auto":
            return self.variance_mode
        return ("per_example" if self.n_models >= mia.GLOBAL_VARIANCE_BELOW
                else "global")

    def with_overrides(self, **pairs: str) -> "ExperimentConfig":
        """New config with raw key/value overrides applied."""
        kv = dict(self.resolved)
        kv.update(pairs)
        return build_config(kv)


def build_config(kv: dict[str, str], seed_override: int | None = None) -> ExperimentConfig:
    """Apply defaults and validation to raw key/value pairs."""
    unknown = sorted(set(kv) - set(_DEFAULTS))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    resolved = dict(_DEFAULTS)
    resolved.update(kv)
    if seed_override is not None:
        resolved["train.seed"] = str(seed_override)
        if "dataset.seed" not in kv:
            resolved["dataset.seed"] = str(seed_override)

    dataset = DatasetSpec(
        kind=_get_choice(resolved, "dataset.kind", KINDS),
        n=_get_int(resolved, "dataset.n"),
        noise=_get_float(resolved, "dataset.noise"),
        seed=_get_int(resolved, "dataset.seed"),
        csv_path=resolved["dataset.csv_path"])

    try:
        widths = tuple(int(w) for w in _get_list(resolved, "model.layer_widths"))
    except ValueError:
        raise ConfigError(
            f"model.layer_widths: expected integers, got {resolved['model.layer_widths']!r}"
        ) from None

    epsilon = _get_float(resolved, "attack.epsilon")

    def attack_params(section: str, default_divisor: float, steps_key: str) -> atk.AttackParams:
        raw_step = resolved[f"{section}.step_size"]
        if raw_step:
            step = _get_float(resolved, f"{section}.step_size")
        else:
            step = epsilon / default_divisor if epsilon > 0 else 1e-3
            resolved[f"{section}.step_size"] = repr(step)
        return atk.AttackParams(
            epsilon=epsilon,
            step_size=step,
            steps=_get_int(resolved, steps_key),
            random_start=_get_bool(resolved, f"{section}.random_start"))

    try:
        model_cfg = ModelConfig(widths)
        train_attack = attack_params("attack", 4.0, "attack.steps")
        eval_attack = attack_params("eval_attack", 8.0, "eval_attack.steps")
        dp = DpConfig(
            enabled=_get_bool(resolved, "dp.enabled"),
            noise_multiplier=_get_float(resolved, "dp.noise_multiplier"),
            clip_norm=_get_float(resolved, "dp.clip_norm"))
        train = TrainConfig(
            method=_get_choice(resolved, "train.method", METHODS),
            model=model_cfg,
            attack=train_attack,
            epochs=_get_int(resolved, "train.epochs"),
            batch_size=_get_int(resolved, "train.batch_size"),
            learning_rate=_get_float(resolved, "train.learning_rate"),
            momentum=_get_float(resolved, "train.momentum"),
            demem_lambda=_get_float(resolved, "train.demem_lambda"),
            trades_beta=_get_float(resolved, "train.trades_beta"),
            dp=dp,
            seed=_get_int(resolved, "train.seed"))
    except ConfigError:
        raise
    except Exception as exc:  # InputError from the dataclass validators
        raise ConfigError(str(exc)) from exc

    methods = tuple(_get_list(resolved, "mia.methods"))
    for m in methods:
        if m not in mia.ATTACK_METHODS:
            raise ConfigError(
                f"mia.methods: unknown attack {m!r}; expected {mia.ATTACK_METHODS}")
    if not methods:
        raise ConfigError("mia.methods must not be empty")
    try:
        fpr_targets = tuple(float(v) for v in _get_list(resolved, "mia.fpr_targets"))
    except ValueError:
        raise ConfigError(
            f"mia.fpr_targets: expected numbers, got {resolved['mia.fpr_targets']!r}"
        ) from None
    if not fpr_targets or any(not 0.0 < t < 1.0 for t in fpr_targets):
        raise ConfigError("mia.fpr_targets must be values in (0, 1)")

    n_models = _get_int(resolved, "ensemble.n_models")
    if n_models < 2:
        raise ConfigError(f"ensemble.n_models must be at least 2, got {n_models}")
    inclusion_prob = _get_float(resolved, "ensemble.inclusion_prob")
    if not 0.0 < inclusion_prob < 1.0:
        raise ConfigError(
            f"ensemble.inclusion_prob must be in (0, 1), got {inclusion_prob}")

    return ExperimentConfig(
        dataset=dataset,
        train=train,
        eval_attack=eval_attack,
        n_models=n_models,
        inclusion_prob=inclusion_prob,
        mia_methods=methods,
        fpr_targets=fpr_targets,
        query_mode=_get_choice(resolved, "mia.query_mode", QUERY_MODES),
        variance_mode=_get_choice(resolved, "mia.variance_mode",
                                  ("auto",) + mia.VARIANCE_MODES),
        resolved=resolved)


def load_config(path, seed_override: int | None = None) -> ExperimentConfig:
    text = Path(path).read_text()
    return build_config(parse_kv(text), seed_override=seed_override)
