"""Desk-scale lab for auditing privacy leakage of adversarially trained models.

The package trains feed-forward classifiers with standard, PGD-AT, or TRADES
objectives, optionally regularized by a mini-batch loss-variance penalty
and/or DP-SGD, estimates per-sample memorization scores over shadow
ensembles, mounts likelihood-ratio membership-inference attacks, and reports
leakage (TPR at low FPR) against natural and robust accuracy.
"""

from .attacks import AttackParams, eval_attack, fgsm, pgd, pgd_kl, robust_accuracy, train_attack
from .autodiff import Tape, Tensor, batch_variance, kl_divergence, mean_all, softmax_cross_entropy
from .config import ExperimentConfig, build_config, load_config
from .datasets import Dataset, generate_dataset, load_csv, save_csv
from .memorization import (
    MemorizationEstimate,
    bin_assign,
    estimate_memorization,
    leave_one_out_memorization,
    spearman,
)
from .mia import (
    AttackScores,
    GaussianStats,
    ShadowEnsemble,
    fit_in_out,
    lira_offline_score,
    lira_online_score,
    logit_scale,
    loss_attack_score,
    tpr_at_fpr,
)
from .models import Model, ModelConfig, forward, init_model, load_checkpoint, save_checkpoint
from .pipeline import run_attack, run_memorize, run_shadow
from .report import run_report, run_sweep
from .trainers import (
    DpConfig,
    TrainConfig,
    TrainHistory,
    clip_per_sample_gradient,
    demem_total_loss,
    dp_sgd_step,
    train,
)

__version__ = "0.1.0"
