"""Split-conformal abstention on top of calibrated probabilities.

Calibration examples get the true-label nonconformity s = 1 - p^y (1-p)^(1-y);
the threshold is the ceil((1-eps)(n+1))-th smallest calibration score. At test
time the label-free score s = 1 - max(p, 1-p) (the calibration score evaluated
at the predicted label) decides: predict iff s <= threshold, else abstain.

Coverage note: when calibration and test scores are exchangeable, the retained
fraction concentrates near 1 - eps (lower bound 1 - eps - 1/(n_cal+1)). The
epitope-held-out and distance-aware protocols break exchangeability by design;
reports always record the protocol so the guarantee's scope stays visible.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Iterable, Sequence

from .calibration import TemperatureModel, apply_temperature, fit_temperature
from .data import Dataset
from .scorer import (
    LinearScorerModel,
    ScoreRecord,
    TrainingConfig,
    ids_fingerprint,
    ingest_logits,
    score,
    train_linear,
)
from .splits import SplitManifest

DECISION_PREDICT = "predict"
DECISION_ABSTAIN = "abstain"


def nonconformity_calibration(prob: float, label: int) -> float:
    """One minus the probability assigned to the true label."""
    if label not in (0, 1):
        raise ValueError(f"label must be 0 or 1, got {label!r}")
    return 1.0 - prob if label == 1 else prob


def nonconformity_test(prob: float) -> float:
    """One minus the probability of the predicted (argmax) label.

    Written branch-wise rather than as 1 - max(prob, 1 - prob) so the result
    is bitwise equal to nonconformity_calibration(prob, argmax_label)."""
    return 1.0 - prob if prob >= 0.5 else prob


def quantile_index(n_cal: int, epsilon: float) -> int:
    """ceil((1 - epsilon) * (n_cal + 1)), the 1-based order statistic to take.

    A 1e-9 downward snap keeps decimal-intended integer products (0.8 * 5) from
    being pushed over the ceiling by binary float error. Values above n_cal
    mean the guarantee is unattainable at this calibration size.
    """
    if n_cal < 1:
        raise ValueError("n_cal must be >= 1")
    if not 0.0 < epsilon < 1.0:
        raise ValueError("epsilon must be in (0, 1)")
    return math.ceil((1.0 - epsilon) * (n_cal + 1) - 1e-9)


@dataclass(frozen=True)
class ConformalRule:
    """Threshold rule fitted on calibration scores.

    threshold is None exactly when the requested quantile exceeds the
    calibration size (retain_all: every prediction is retained).
    """

    epsilon: float
    n_cal: int
    quantile_index: int
    threshold: float | None

    def __post_init__(self) -> None:
        if (self.threshold is None) != (self.quantile_index > self.n_cal):
            raise ValueError("threshold sentinel inconsistent with quantile index")

    @property
    def retain_all(self) -> bool:
        return self.threshold is None

    def retains(self, nonconformity: float) -> bool:
        return self.threshold is None or nonconformity <= self.threshold

    def to_json_dict(self) -> dict:
        return {
            "epsilon": self.epsilon,
            "n_cal": self.n_cal,
            "quantile_index": self.quantile_index,
            "threshold": self.threshold,
            "retain_all": self.retain_all,
        }


def fit_threshold(cal_scores: Sequence[float], epsilon: float) -> ConformalRule:
    """Order-statistic threshold over calibration nonconformity scores.

    When ceil((1-eps)(n+1)) > n the rule degenerates to retain-all; that case
    emits a RuntimeWarning since the coverage target is unattainable at this
    calibration size.
    """
    n = len(cal_scores)
    k = quantile_index(n, epsilon)
    if k > n:
        warnings.warn(
            f"quantile index {k} exceeds calibration size {n}; "
            f"retaining all predictions (grow the calibration set or raise epsilon)",
            RuntimeWarning,
            stacklevel=2,
        )
        return ConformalRule(epsilon=epsilon, n_cal=n, quantile_index=k, threshold=None)
    threshold = sorted(cal_scores)[k - 1]
    return ConformalRule(epsilon=epsilon, n_cal=n, quantile_index=k, threshold=float(threshold))


@dataclass(frozen=True, slots=True)
class SelectiveDecision:
    """Per-example outcome: predict with a label, or abstain."""

    example_id: str
    prob_calibrated: float
    nonconformity: float
    decision: str
    predicted_label: int | None

    def __post_init__(self) -> None:
        if self.decision not in (DECISION_PREDICT, DECISION_ABSTAIN):
            raise ValueError(f"unknown decision {self.decision!r}")
        if (self.predicted_label is None) != (self.decision == DECISION_ABSTAIN):
            raise ValueError("predicted_label must be present exactly when predicting")


def decide(
    records: Iterable[tuple[str, float]], rule: ConformalRule
) -> list[SelectiveDecision]:
    """Apply the rule to (example_id, calibrated probability) pairs, in order."""
    decisions = []
    for example_id, prob in records:
        s = nonconformity_test(prob)
        if rule.retains(s):
            decisions.append(
                SelectiveDecision(
                    example_id=example_id,
                    prob_calibrated=prob,
                    nonconformity=s,
                    decision=DECISION_PREDICT,
                    predicted_label=1 if prob >= 0.5 else 0,
                )
            )
        else:
            decisions.append(
                SelectiveDecision(
                    example_id=example_id,
                    prob_calibrated=prob,
                    nonconformity=s,
                    decision=DECISION_ABSTAIN,
                    predicted_label=None,
                )
            )
    return decisions


@dataclass
class PipelineResult:
    """Everything a run produces: model, temperature, rule, scores, decisions."""

    scorer_model: LinearScorerModel | None
    temperature: TemperatureModel
    rule: ConformalRule
    cal_records: list[ScoreRecord]
    test_records: list[ScoreRecord]
    cal_probs_calibrated: list[float]
    test_probs_calibrated: list[float]
    decisions: list[SelectiveDecision]
    cal_fingerprint: str


def _check_disjoint(train: Dataset, cal: Dataset, test: Dataset) -> None:
    names = ("train", "cal", "test")
    sets = [set(part.ids()) for part in (train, cal, test)]
    for i in range(3):
        for j in range(i + 1, 3):
            overlap = sets[i] & sets[j]
            if overlap:
                raise ValueError(
                    f"{names[i]}/{names[j]} share id(s), e.g. {sorted(overlap)[0]!r}"
                )


def _check_manifest(
    manifest: SplitManifest, train: Dataset, cal: Dataset, test: Dataset
) -> None:
    for name, part, allowed in (
        ("train", train, set(manifest.train_ids)),
        ("cal", cal, set(manifest.cal_ids)),
        ("test", test, set(manifest.test_ids)),
    ):
        extra = set(part.ids()) - allowed
        if extra:
            raise ValueError(
                f"{name} dataset contains id(s) outside the manifest's {name} set, "
                f"e.g. {sorted(extra)[0]!r}"
            )


def run_pipeline(
    train: Dataset,
    cal: Dataset,
    test: Dataset,
    epsilon: float,
    training: TrainingConfig | None = None,
    logits_path: str | None = None,
    manifest: SplitManifest | None = None,
) -> PipelineResult:
    """Train (or ingest) scores, fit temperature and threshold, decide on test.

    Exactly one of `training` (built-in k-mer scorer) and `logits_path`
    (external logit TSV covering cal and test ids) must be given. The three
    datasets must be id-disjoint and, when a manifest is supplied, each must
    stay inside its manifest id set.
    """
    if (training is None) == (logits_path is None):
        raise ValueError("provide exactly one of training (builtin) or logits_path")
    _check_disjoint(train, cal, test)
    if manifest is not None:
        _check_manifest(manifest, train, cal, test)
    if training is not None:
        model: LinearScorerModel | None = train_linear(train, training)
        cal_records = score(model, cal)
        test_records = score(model, test)
    else:
        model = None
        cal_records = ingest_logits(logits_path, cal)
        test_records = ingest_logits(logits_path, test)
    temperature = fit_temperature(cal_records)
    cal_probs = apply_temperature(cal_records, temperature)
    cal_scores = [
        nonconformity_calibration(p, rec.label) for p, rec in zip(cal_probs, cal_records)
    ]
    rule = fit_threshold(cal_scores, epsilon)
    test_probs = apply_temperature(test_records, temperature)
    decisions = decide(
        ((rec.example_id, p) for rec, p in zip(test_records, test_probs)), rule
    )
    return PipelineResult(
        scorer_model=model,
        temperature=temperature,
        rule=rule,
        cal_records=cal_records,
        test_records=test_records,
        cal_probs_calibrated=cal_probs,
        test_probs_calibrated=test_probs,
        decisions=decisions,
        cal_fingerprint=ids_fingerprint(rec.example_id for rec in cal_records),
    )


DECISION_COLUMNS = ("example_id", "prob_calibrated", "nonconformity", "decision", "predicted_label")


def decisions_to_tsv(
    decisions: Sequence[SelectiveDecision], comments: Sequence[str] = ()
) -> str:
    """Render decisions as TSV; leading '#' lines carry provenance."""
    lines = [f"# {text}" for text in comments]
    lines.append("\t".join(DECISION_COLUMNS))
    for d in decisions:
        label = "" if d.predicted_label is None else str(d.predicted_label)
        lines.append(
            f"{d.example_id}\t{d.prob_calibrated!r}\t{d.nonconformity!r}\t{d.decision}\t{label}"
        )
    return "\n".join(lines) + "\n"


def decisions_from_tsv(text: str) -> list[SelectiveDecision]:
    """Parse decisions_to_tsv output; '#' comment lines are skipped."""
    lines = [line for line in text.splitlines() if line and not line.startswith("#")]
    if not lines:
        raise ValueError("no decision rows found")
    header = tuple(lines[0].split("\t"))
    if header != DECISION_COLUMNS:
        raise ValueError(f"unexpected decision header {header!r}")
    decisions = []
    for line in lines[1:]:
        fields = line.split("\t")
        if len(fields) != len(DECISION_COLUMNS):
            raise ValueError(f"malformed decision row {line!r}")
        example_id, prob, nonconf, decision, label = fields
        decisions.append(
            SelectiveDecision(
                example_id=example_id,
                prob_calibrated=float(prob),
                nonconformity=float(nonconf),
                decision=decision,
                predicted_label=int(label) if label else None,
            )
        )
    return decisions
