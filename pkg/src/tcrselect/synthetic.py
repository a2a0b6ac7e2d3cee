"""Synthetic score-level harness for coverage and calibration-size experiments.

Generates exchangeable calibration/test score sets with a known miscalibration:
true probabilities p_i come from a two-component Beta mixture skewed toward the
requested positive rate, labels are Bernoulli(p_i), and logits are the true
log-odds multiplied by miscalibration_temperature. Fitting a temperature on
such data should recover the planted factor. No sequence content here; the
sequence-level path goes through the corpus and scorer modules.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from statistics import pstdev
from typing import Sequence

import numpy as np

from .calibration import apply_temperature, ece, fit_temperature
from .conformal import fit_threshold, nonconformity_calibration, quantile_index
from .scorer import ScoreRecord

# mixture components for the true probabilities: binder-like and background
HI_BETA = (8.0, 2.0)   # mean 0.8
LO_BETA = (1.0, 49.0)  # mean 0.02
_P_CLIP = 1e-4  # keeps logits bounded so float sigmoids stay inside (0, 1)

_HI_MEAN = HI_BETA[0] / (HI_BETA[0] + HI_BETA[1])
_LO_MEAN = LO_BETA[0] / (LO_BETA[0] + LO_BETA[1])


@dataclass(frozen=True)
class SyntheticSpec:
    """Shape of one synthetic draw; trial t of an experiment uses seed + t."""

    n_cal: int
    n_test: int
    miscalibration_temperature: float = 3.0
    base_positive_rate: float = 0.045
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n_cal < 1 or self.n_test < 1:
            raise ValueError("n_cal and n_test must be >= 1")
        if self.miscalibration_temperature <= 0:
            raise ValueError("miscalibration_temperature must be > 0")
        if not _LO_MEAN < self.base_positive_rate < _HI_MEAN:
            raise ValueError(
                f"base_positive_rate must lie in ({_LO_MEAN:.3f}, {_HI_MEAN:.3f}) "
                f"to be reachable by the mixture"
            )


def generate(spec: SyntheticSpec) -> tuple[list[ScoreRecord], list[ScoreRecord]]:
    """One seeded draw of (calibration records, test records).

    Both sets come from a single i.i.d. stream, so they are exchangeable by
    construction. Expected positive rate equals spec.base_positive_rate.
    """
    rng = np.random.default_rng(spec.seed)
    n = spec.n_cal + spec.n_test
    w_hi = (spec.base_positive_rate - _LO_MEAN) / (_HI_MEAN - _LO_MEAN)
    from_hi = rng.random(n) < w_hi
    p = np.where(
        from_hi,
        rng.beta(HI_BETA[0], HI_BETA[1], n),
        rng.beta(LO_BETA[0], LO_BETA[1], n),
    )
    p = np.clip(p, _P_CLIP, 1.0 - _P_CLIP)
    labels = (rng.random(n) < p).astype(int)
    logits = spec.miscalibration_temperature * np.log(p / (1.0 - p))
    records = [
        ScoreRecord.from_logit(f"syn-{i:06d}", float(z), int(y))
        for i, (z, y) in enumerate(zip(logits, labels))
    ]
    return records[: spec.n_cal], records[spec.n_cal :]


@dataclass(frozen=True)
class CoverageSummary:
    """Aggregate of per-trial coverage measurements."""

    epsilon: float
    n_cal: int
    n_trials: int
    mean_coverage: float
    sd_coverage: float
    retain_all_trials: int
    coverages: tuple[float, ...]


def _one_trial(spec: SyntheticSpec, epsilon: float, want_ece: bool) -> tuple[float, float | None]:
    """(coverage, test ECE after scaling) for a single seeded draw.

    Coverage uses the same true-label nonconformity on calibration and test,
    the exchangeable quantity the marginal guarantee speaks about. The deployed
    label-free rule retains a superset of these points.
    """
    cal, test = generate(spec)
    temperature = fit_temperature(cal)
    cal_probs = apply_temperature(cal, temperature)
    cal_scores = [
        nonconformity_calibration(p, rec.label) for p, rec in zip(cal_probs, cal)
    ]
    rule = fit_threshold(cal_scores, epsilon)
    test_probs = apply_temperature(test, temperature)
    test_scores = [
        nonconformity_calibration(p, rec.label) for p, rec in zip(test_probs, test)
    ]
    if rule.retain_all:
        coverage = 1.0
    else:
        coverage = sum(1 for s in test_scores if s <= rule.threshold) / len(test_scores)
    ece_after = None
    if want_ece:
        ece_after = ece(test_probs, [rec.label for rec in test]).ece
    return coverage, ece_after


def coverage_experiment(
    spec: SyntheticSpec, epsilon: float, n_trials: int
) -> CoverageSummary:
    """Repeated seeded trials of generate -> fit temperature -> fit threshold.

    Trial t uses seed spec.seed + t. Under exchangeability the mean coverage
    is bounded below by 1 - epsilon - 1/(n_cal + 1).
    """
    if n_trials < 1:
        raise ValueError("n_trials must be >= 1")
    # the sentinel depends only on (n_cal, epsilon), so it hits every trial or none
    retain_all = quantile_index(spec.n_cal, epsilon) > spec.n_cal
    coverages = []
    for t in range(n_trials):
        trial_spec = replace(spec, seed=spec.seed + t)
        coverage, _ = _one_trial(trial_spec, epsilon, want_ece=False)
        coverages.append(coverage)
    return CoverageSummary(
        epsilon=epsilon,
        n_cal=spec.n_cal,
        n_trials=n_trials,
        mean_coverage=math.fsum(coverages) / n_trials,
        sd_coverage=pstdev(coverages) if n_trials > 1 else 0.0,
        retain_all_trials=n_trials if retain_all else 0,
        coverages=tuple(coverages),
    )


@dataclass(frozen=True)
class SizeSweepRow:
    n_cal: int
    mean_ece_after: float
    mean_coverage: float


def calibration_size_sweep(
    spec: SyntheticSpec,
    sizes: Sequence[int],
    epsilon: float,
    n_trials: int = 20,
) -> list[SizeSweepRow]:
    """Mean post-scaling test ECE and mean coverage at each calibration size.

    spec supplies everything but n_cal, which the sweep overrides per row.
    Larger calibration sets estimate the temperature better, so the ECE column
    is non-increasing in expectation; coverage concentrates near 1 - epsilon.
    """
    if not sizes:
        raise ValueError("sizes is empty")
    if n_trials < 1:
        raise ValueError("n_trials must be >= 1")
    rows = []
    for size in sizes:
        eces = []
        coverages = []
        for t in range(n_trials):
            trial_spec = replace(spec, n_cal=size, seed=spec.seed + t)
            coverage, ece_after = _one_trial(trial_spec, epsilon, want_ece=True)
            coverages.append(coverage)
            eces.append(ece_after)
        rows.append(
            SizeSweepRow(
                n_cal=size,
                mean_ece_after=math.fsum(eces) / n_trials,
                mean_coverage=math.fsum(coverages) / n_trials,
            )
        )
    return rows
