"""Temperature scaling and probability-quality metrics.

Temperature scaling rescales logits by a single scalar T fitted to minimize
mean negative log-likelihood on the calibration split. The fit runs over
beta = 1/T, in which the objective mean(softplus(beta*z) - y*beta*z) is convex,
using bracketed golden-section search. AUROC is untouched by scaling (the
transform is strictly monotone); only probability quality changes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .scorer import ScoreRecord, sigmoid

TEMPERATURE_MIN = 0.05
TEMPERATURE_MAX = 100.0
DEFAULT_ECE_BINS = 15

_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0
_BRACKET_TOL = 1e-8
_CLAMP_TOL = 1e-6
_PROB_CLIP = 1e-12


@dataclass(frozen=True)
class TemperatureModel:
    """Fitted temperature with before/after calibration NLL on the fit set."""

    temperature: float
    nll_before: float
    nll_after: float
    n_cal_fit: int
    clamped: bool

    def __post_init__(self) -> None:
        if not TEMPERATURE_MIN <= self.temperature <= TEMPERATURE_MAX:
            raise ValueError(
                f"temperature {self.temperature} outside "
                f"[{TEMPERATURE_MIN}, {TEMPERATURE_MAX}]"
            )
        if self.nll_after > self.nll_before + 1e-9:
            raise ValueError("fitted temperature must not increase calibration NLL")

    def to_json_dict(self) -> dict:
        return {
            "temperature": self.temperature,
            "nll_before": self.nll_before,
            "nll_after": self.nll_after,
            "n_cal_fit": self.n_cal_fit,
            "clamped": self.clamped,
        }


def _mean_nll_at_beta(logits: np.ndarray, labels: np.ndarray, beta: float) -> float:
    zb = logits * beta
    return float(np.mean(np.logaddexp(0.0, zb) - labels * zb))


def fit_temperature(
    cal_records: Sequence[ScoreRecord],
    t_min: float = TEMPERATURE_MIN,
    t_max: float = TEMPERATURE_MAX,
) -> TemperatureModel:
    """Fit T on calibration records by golden-section search over beta = 1/T.

    The bracket [1/t_max, 1/t_min] is shrunk to width 1e-8; if the optimum sits
    on a bracket end the temperature snaps to that bound and `clamped` is set.
    A single-class calibration set is rejected (the objective would push T to a
    bound for a degenerate reason).
    """
    if not cal_records:
        raise ValueError("calibration set is empty")
    if not 0.0 < t_min < t_max:
        raise ValueError("need 0 < t_min < t_max")
    labels = np.array([rec.label for rec in cal_records], dtype=float)
    if labels.min() == labels.max():
        raise ValueError("calibration set contains a single class; cannot fit temperature")
    logits = np.array([rec.logit for rec in cal_records], dtype=float)

    lo, hi = 1.0 / t_max, 1.0 / t_min
    a, b = lo, hi
    c = b - _GOLDEN * (b - a)
    d = a + _GOLDEN * (b - a)
    fc = _mean_nll_at_beta(logits, labels, c)
    fd = _mean_nll_at_beta(logits, labels, d)
    while b - a > _BRACKET_TOL:
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - _GOLDEN * (b - a)
            fc = _mean_nll_at_beta(logits, labels, c)
        else:
            a, c, fc = c, d, fd
            d = a + _GOLDEN * (b - a)
            fd = _mean_nll_at_beta(logits, labels, d)
    beta = 0.5 * (a + b)

    clamped = False
    if beta >= hi - _CLAMP_TOL:
        beta, clamped = hi, True
    elif beta <= lo + _CLAMP_TOL:
        beta, clamped = lo, True

    nll_before = _mean_nll_at_beta(logits, labels, 1.0)
    nll_opt = _mean_nll_at_beta(logits, labels, beta)
    if lo <= 1.0 <= hi and nll_before < nll_opt:
        beta, nll_opt, clamped = 1.0, nll_before, False

    temperature = 1.0 / beta
    if clamped:
        # remove float residue so the reported bound is exact
        temperature = t_max if beta == lo else t_min
    return TemperatureModel(
        temperature=temperature,
        nll_before=nll_before,
        nll_after=nll_opt,
        n_cal_fit=len(cal_records),
        clamped=clamped,
    )


def apply_temperature(
    records: Sequence[ScoreRecord], model: TemperatureModel
) -> list[float]:
    """Calibrated probabilities sigmoid(logit / T), preserving record order."""
    t = model.temperature
    return [sigmoid(rec.logit / t) for rec in records]


@dataclass(frozen=True)
class ReliabilityBin:
    """One confidence bin: [lower, upper) except the last bin, which is closed."""

    lower: float
    upper: float
    count: int
    mean_confidence: float | None
    mean_accuracy: float | None


@dataclass(frozen=True)
class ReliabilityTable:
    bins: tuple[ReliabilityBin, ...]
    ece: float
    n: int

    def to_csv(self) -> str:
        lines = ["bin_lower,bin_upper,count,mean_confidence,mean_accuracy"]
        for b in self.bins:
            conf = "" if b.mean_confidence is None else repr(b.mean_confidence)
            acc = "" if b.mean_accuracy is None else repr(b.mean_accuracy)
            lines.append(f"{b.lower!r},{b.upper!r},{b.count},{conf},{acc}")
        return "\n".join(lines) + "\n"


def _validate_pairs(probs: Sequence[float], labels: Sequence[int]) -> None:
    if len(probs) != len(labels):
        raise ValueError(f"length mismatch: {len(probs)} probs vs {len(labels)} labels")
    if len(probs) == 0:
        raise ValueError("empty input")


def ece(
    probs: Sequence[float], labels: Sequence[int], n_bins: int = DEFAULT_ECE_BINS
) -> ReliabilityTable:
    """Expected calibration error over equal-width confidence bins on [0.5, 1].

    Confidence is max(p, 1-p), the predicted class is 1[p >= 0.5], and each
    non-empty bin contributes (count/n) * |accuracy - confidence|. Bin
    membership uses floor((conf - 0.5) * 2 * n_bins) clipped to the last bin,
    so boundary confidences land deterministically.
    """
    _validate_pairs(probs, labels)
    if n_bins < 1:
        raise ValueError("n_bins must be >= 1")
    n = len(probs)
    width = 0.5 / n_bins
    members: list[list[tuple[float, int]]] = [[] for _ in range(n_bins)]
    for p, y in zip(probs, labels):
        if not 0.0 <= p <= 1.0:
            raise ValueError(f"probability {p!r} outside [0, 1]")
        conf = p if p >= 0.5 else 1.0 - p
        pred = 1 if p >= 0.5 else 0
        idx = int((conf - 0.5) * (2 * n_bins))
        if idx >= n_bins:
            idx = n_bins - 1
        members[idx].append((conf, int(pred == y)))
    bins = []
    total = 0.0
    for m, bucket in enumerate(members):
        lower = 0.5 + m * width
        upper = 0.5 + (m + 1) * width
        if not bucket:
            bins.append(ReliabilityBin(lower, upper, 0, None, None))
            continue
        count = len(bucket)
        mean_conf = math.fsum(c for c, _ in bucket) / count
        mean_acc = math.fsum(a for _, a in bucket) / count
        bins.append(ReliabilityBin(lower, upper, count, mean_conf, mean_acc))
        total += (count / n) * abs(mean_acc - mean_conf)
    return ReliabilityTable(bins=tuple(bins), ece=total, n=n)


def brier(probs: Sequence[float], labels: Sequence[int]) -> float:
    """Mean squared error between probabilities and binary labels."""
    _validate_pairs(probs, labels)
    return math.fsum((p - y) ** 2 for p, y in zip(probs, labels)) / len(probs)


def nll(probs: Sequence[float], labels: Sequence[int]) -> float:
    """Mean negative log-likelihood; probabilities clipped to [1e-12, 1-1e-12].

    Clipping happens only inside this metric, stored probabilities are never
    modified.
    """
    _validate_pairs(probs, labels)
    terms = []
    for p, y in zip(probs, labels):
        q = min(max(p, _PROB_CLIP), 1.0 - _PROB_CLIP)
        terms.append(-math.log(q) if y == 1 else -math.log(1.0 - q))
    return math.fsum(terms) / len(probs)
