"""Confounding audits of classifiers with restricted permutations and CI tests."""

from .adjust import AdjustmentSpec, match_samples
from .audit import AuditConfig, AuditReport, ci_test_battery, run_audit
from .classify import SplitPlan, auc, make_splits, predict_scores, train_forest, train_logistic
from .dataset import Dataset, read_csv, write_csv
from .dsep import CausalDag, CiPattern, implied_ci_pattern, is_d_separated, match_pattern, scenario_catalogue
from .linear_scm import PRESETS, ScmSpec, path_coefficients, simulate, simulate_binary
from .restricted_perm import perm_null_covariance

__all__ = [
    "AdjustmentSpec",
    "AuditConfig",
    "AuditReport",
    "CausalDag",
    "CiPattern",
    "Dataset",
    "PRESETS",
    "ScmSpec",
    "SplitPlan",
    "auc",
    "ci_test_battery",
    "implied_ci_pattern",
    "is_d_separated",
    "make_splits",
    "match_pattern",
    "match_samples",
    "path_coefficients",
    "perm_null_covariance",
    "predict_scores",
    "read_csv",
    "run_audit",
    "scenario_catalogue",
    "simulate",
    "simulate_binary",
    "train_forest",
    "train_logistic",
    "write_csv",
]
