"""End-to-end confounding audit.

For each random split: adjust, train a classifier on the adjusted training
set, score the adjusted test set, and run the two-stage battery of five CI
tests on ``(R, Y, A)``.  Stage 1 uses Spearman and partial Spearman
correlations; a hypothesis that stage 1 does not reject is re-tested with
the (partial) distance-correlation permutation test and is called
independent only if that test does not reject either.  The per-split
patterns are combined by majority and matched against the scenario
catalogue.
"""

from __future__ import annotations

import csv
import io
import json
from collections import Counter
from contextlib import contextmanager
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import assoc_stats as st
from ._rng import child_seed
from .adjust import AdjustmentSpec, adjust_pair, balance_report, ipw_weights, match_samples
from .classify import CLASSIFIERS, SplitPlan, auc, make_splits, predict_scores, train
from .dataset import Dataset
from .dsep import HYPOTHESES, CiPattern, Verdict, match_pattern
from .errors import CollinearityError, ConfauditError, DegenerateColumnError, SpecificationError

N_HYPOTHESES = len(HYPOTHESES)


class AuditSplitError(ConfauditError):
    """An error raised while processing one split; the cause is chained."""

    def __init__(self, split: int, cause: Exception):
        self.split = split
        super().__init__(f"split {split}: {type(cause).__name__}: {cause}")


@dataclass(frozen=True)
class AuditConfig:
    adjustment: AdjustmentSpec = field(default_factory=AdjustmentSpec)
    classifier: str = "logistic"
    splits: SplitPlan = field(default_factory=SplitPlan)
    alpha: float = 0.05
    B_dcor: int = 1000
    bonferroni: bool = True
    trees: int = 500
    mtry: int | None = None

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise SpecificationError(f"alpha must lie in (0, 1), got {self.alpha}")
        if self.classifier not in CLASSIFIERS:
            raise SpecificationError(f"unknown classifier {self.classifier!r}; expected logistic or forest")
        if self.B_dcor < 99:
            raise SpecificationError(f"B_dcor must be >= 99, got {self.B_dcor}")

    def to_dict(self) -> dict:
        out = {
            "adjustment": self.adjustment.to_dict(),
            "classifier": self.classifier,
            "splits": self.splits.to_dict(),
            "alpha": self.alpha,
            "B_dcor": self.B_dcor,
            "bonferroni": self.bonferroni,
        }
        if self.classifier == "forest":
            out["trees"] = self.trees
            out["mtry"] = self.mtry
        return out


def bonferroni(p, m: int = N_HYPOTHESES) -> np.ndarray:
    """``min(1, m p)`` elementwise."""
    p = np.asarray(p, dtype=float)
    if np.any(~np.isfinite(p)) or np.any((p < 0) | (p > 1)):
        raise SpecificationError("p-values must lie in [0, 1]")
    return np.minimum(1.0, m * p)


# stage-1 and stage-2 tests per hypothesis, in HYPOTHESES order; each entry
# names the (x, y, conditioner) roles among r, y, a.
_ROLES = (("r", "y", None), ("r", "a", None), ("a", "y", None), ("r", "y", "a"), ("r", "a", "y"))


@dataclass(frozen=True, eq=False)
class BatteryResult:
    """Outcome of the two-stage battery on one ``(R, Y, A)`` triple.

    ``stage2[k]`` is ``None`` when hypothesis ``k`` was rejected at stage 1.
    Unpacks as ``pattern, stage1``.
    """

    pattern: CiPattern
    stage1: tuple
    stage1_corrected: tuple
    stage2: tuple
    stage2_corrected: tuple

    def __iter__(self):
        return iter((self.pattern, self.stage1))

    @property
    def stage2_calls(self) -> int:
        return sum(r is not None for r in self.stage2)

    def to_list(self) -> list:
        out = []
        for k, h in enumerate(HYPOTHESES):
            s1 = self.stage1[k]
            rec = {
                "hypothesis": h,
                "stage1": {"method": s1.method, "stat": s1.statistic, "p": s1.p_value, "p_corrected": self.stage1_corrected[k]},
            }
            s2 = self.stage2[k]
            if s2 is not None:
                rec["stage2"] = {"method": s2.method, "stat": s2.statistic, "p": s2.p_value, "p_corrected": self.stage2_corrected[k], "B": s2.B}
            rec["independent"] = self.pattern.as_tuple()[k]
            out.append(rec)
        return out


@contextmanager
def _named(hypothesis: str):
    """Prefix error messages with the hypothesis under test."""
    try:
        yield
    except DegenerateColumnError as exc:
        raise DegenerateColumnError(exc.column, f"{hypothesis}: {exc}") from exc
    except (CollinearityError, SpecificationError) as exc:
        raise type(exc)(f"{hypothesis}: {exc}") from exc


def ci_test_battery(r, y, a, alpha: float = 0.05, B: int = 1000, seed: int = 0, *, bonferroni_correct: bool = True) -> BatteryResult:
    """Two-stage test of the five hypotheses on scores ``r``, labels ``y``, confounder ``a``.

    With ``bonferroni_correct`` both stages compare ``min(1, 5 p)`` with
    ``alpha``.  Hypothesis ``k`` uses permutation seed stream ``k``.
    """
    cols = {"r": st._vec(r, "r"), "y": st._vec(y, "y"), "a": st._vec(a, "a")}
    if not (cols["r"].shape == cols["y"].shape == cols["a"].shape):
        raise SpecificationError("r, y and a must have equal length")
    if np.unique(cols["y"]).size < 2:
        raise SpecificationError("y must contain both classes")
    correct = (lambda p: bonferroni(p)) if bonferroni_correct else (lambda p: np.asarray(p, dtype=float))

    stage1 = []
    for k, (i, j, c) in enumerate(_ROLES):
        with _named(HYPOTHESES[k]):
            if c is None:
                stage1.append(st.spearman(cols[i], cols[j], seed=child_seed(seed, N_HYPOTHESES + k)))
            else:
                stage1.append(st.partial_spearman(cols[i], cols[j], cols[c]))
    p1 = correct([t.p_value for t in stage1])

    stage2 = [None] * N_HYPOTHESES
    for k, (i, j, c) in enumerate(_ROLES):
        if p1[k] <= alpha:
            continue
        s = child_seed(seed, k)
        with _named(HYPOTHESES[k]):
            if c is None:
                stage2[k] = st.dcor_perm_test(cols[i], cols[j], B=B, seed=s)
            else:
                stage2[k] = st.pdcor_perm_test(cols[i], cols[j], cols[c], B=B, seed=s)
    # Rejected-at-stage-1 hypotheses are dependent; their stage-2 slot stays empty.
    p2_raw = [1.0 if t is None else t.p_value for t in stage2]
    p2 = correct(p2_raw)
    independent = [bool(p1[k] > alpha and stage2[k] is not None and p2[k] > alpha) for k in range(N_HYPOTHESES)]
    return BatteryResult(
        pattern=CiPattern(*independent),
        stage1=tuple(stage1),
        stage1_corrected=tuple(float(v) for v in p1),
        stage2=tuple(stage2),
        stage2_corrected=tuple(None if stage2[k] is None else float(p2[k]) for k in range(N_HYPOTHESES)),
    )


@dataclass(frozen=True, eq=False)
class SplitRecord:
    index: int
    auc: float
    battery: BatteryResult
    n_train: int
    n_test: int

    @property
    def pattern(self) -> CiPattern:
        return self.battery.pattern

    def to_dict(self) -> dict:
        return {
            "index": self.index,
            "n_train": self.n_train,
            "n_test": self.n_test,
            "auc": self.auc,
            "tests": self.battery.to_list(),
            "pattern": list(self.pattern.as_tuple()),
            "verdict": match_pattern(self.pattern).label,
        }


@dataclass(frozen=True, eq=False)
class AuditReport:
    config: AuditConfig
    splits: tuple
    majority_pattern: CiPattern
    verdict: Verdict
    balance: dict

    @property
    def label(self) -> str:
        return self.verdict.label

    def to_dict(self) -> dict:
        return {
            "config": self.config.to_dict(),
            "verdict": self.verdict.to_dict(),
            "majority_pattern": list(self.majority_pattern.as_tuple()),
            "hypotheses": list(HYPOTHESES),
            "splits": [s.to_dict() for s in self.splits],
            "balance": self.balance,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    def pvalue_csv(self, stage: int = 1) -> str:
        """Corrected p-values, one row per split, one column per hypothesis.

        Stage-2 cells are blank where the test was not run.
        """
        if stage not in (1, 2):
            raise SpecificationError("stage must be 1 or 2")
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["split", *HYPOTHESES])
        for s in self.splits:
            vals = s.battery.stage1_corrected if stage == 1 else s.battery.stage2_corrected
            w.writerow([s.index, *("" if v is None else repr(float(v)) for v in vals)])
        return buf.getvalue()


def majority_pattern(patterns) -> CiPattern:
    """Most frequent pattern; ties go to the pattern seen first."""
    patterns = list(patterns)
    if not patterns:
        raise SpecificationError("no patterns to aggregate")
    counts = Counter(p.as_tuple() for p in patterns)
    best = max(counts.values())
    for p in patterns:
        if counts[p.as_tuple()] == best:
            return p


def _run_split(d: Dataset, cfg: AuditConfig, s: int, train_idx, test_idx) -> SplitRecord:
    seed = cfg.splits.seed
    train_d, test_d = d.subset(train_idx), d.subset(test_idx)
    train_d, test_d = adjust_pair(train_d, test_d, cfg.adjustment, seed=child_seed(cfg.adjustment.seed, s, 0))
    # The classifier only ever sees the feature matrix; a stays out.
    if train_d.x.shape[1] != d.d or test_d.x.shape[1] != d.d:
        raise AssertionError("feature matrix width changed during adjustment")
    weights = train_d.weights if cfg.adjustment.method == "ipw" and cfg.adjustment.ipw_mode == "weight" else None
    model = train(cfg.classifier, train_d.x, train_d.y, seed=child_seed(seed, s, 1), weights=weights, trees=cfg.trees, mtry=cfg.mtry)
    scores = predict_scores(model, test_d.x)
    battery = ci_test_battery(
        scores, test_d.y, test_d.a, cfg.alpha, cfg.B_dcor, child_seed(seed, s, 2), bonferroni_correct=cfg.bonferroni
    )
    return SplitRecord(s, auc(scores, test_d.y), battery, train_d.n, test_d.n)


def _full_balance(d: Dataset, spec: AdjustmentSpec) -> dict:
    if spec.method == "matching":
        adj = match_samples(d, spec.strata, child_seed(spec.seed, 0))
    elif spec.method == "ipw":
        adj = ipw_weights(d)
    else:
        adj = d
    return balance_report(adj, method=spec.method, n_before=d.n)


def run_audit(d: Dataset, cfg: AuditConfig, threads: int = 1) -> AuditReport:
    """Run the audit over ``cfg.splits.n_splits`` splits.

    Split ``s`` derives its adjustment, training and test seeds from
    ``(seed, s)``, so the report does not depend on ``threads``.
    """
    d.require_binary()
    plan = make_splits(d.y, cfg.splits)

    def job(item):
        s, (tr, ts) = item
        try:
            return _run_split(d, cfg, s, tr, ts)
        except ConfauditError as exc:
            raise AuditSplitError(s, exc) from exc

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            records = list(pool.map(job, enumerate(plan)))
    else:
        records = [job(item) for item in enumerate(plan)]
    maj = majority_pattern(r.pattern for r in records)
    return AuditReport(cfg, tuple(records), maj, match_pattern(maj), _full_balance(d, cfg.adjustment))


__all__ = [
    "AuditConfig",
    "AuditReport",
    "AuditSplitError",
    "BatteryResult",
    "SplitRecord",
    "bonferroni",
    "ci_test_battery",
    "majority_pattern",
    "run_audit",
]
