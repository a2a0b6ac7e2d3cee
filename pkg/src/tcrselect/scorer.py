"""Built-in reference scorer: bag-of-k-mers logistic model on sequence pairs.

Stands in for a heavyweight sequence encoder so the calibration and abstention
machinery downstream can be exercised end to end. Features are overlapping
k-mer counts with separate TCR-side and peptide-side namespaces; the model is
a linear classifier trained by full-batch gradient descent on class-weighted
binary cross-entropy with an l2 penalty. Externally produced logits can be
ingested from a TSV instead.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np
from scipy.sparse import csr_matrix

from .data import Dataset, SequenceExample

TCR_NAMESPACE = "tcr"
PEPTIDE_NAMESPACE = "pep"
_JOIN = "|"  # keeps k-mers spanning the cdr3a/cdr3b junction distinct

DEFAULT_KMER_SIZE = 3
DEFAULT_L2 = 1e-4


def sigmoid(logit: float) -> float:
    """Numerically stable logistic function."""
    if logit >= 0.0:
        return 1.0 / (1.0 + math.exp(-logit))
    e = math.exp(logit)
    return e / (1.0 + e)


@dataclass(frozen=True, slots=True)
class ScoreRecord:
    """A scored example: raw logit, its probability, and the true label."""

    example_id: str
    logit: float
    prob_raw: float
    label: int

    def __post_init__(self) -> None:
        if not math.isfinite(self.logit):
            raise ValueError(f"non-finite logit for {self.example_id!r}")
        if not 0.0 <= self.prob_raw <= 1.0:
            raise ValueError(f"prob_raw out of [0, 1] for {self.example_id!r}")
        if abs(self.prob_raw - sigmoid(self.logit)) > 1e-12:
            raise ValueError(
                f"prob_raw does not match sigmoid(logit) for {self.example_id!r}"
            )
        if self.label not in (0, 1):
            raise ValueError(f"label must be 0 or 1 for {self.example_id!r}")

    @classmethod
    def from_logit(cls, example_id: str, logit: float, label: int) -> "ScoreRecord":
        return cls(example_id=example_id, logit=logit, prob_raw=sigmoid(logit), label=label)


@dataclass(frozen=True)
class TrainingConfig:
    """Hyperparameters for the built-in scorer."""

    kmer_size: int = DEFAULT_KMER_SIZE
    learning_rate: float = 0.1
    epochs: int = 300
    l2: float = DEFAULT_L2
    seed: int = 0
    include_cdr3a: bool = True

    def __post_init__(self) -> None:
        if self.kmer_size < 1:
            raise ValueError("kmer_size must be >= 1")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.l2 < 0:
            raise ValueError("l2 must be >= 0")


def _tcr_string(example: SequenceExample, include_cdr3a: bool) -> str:
    return example.cdr3a + _JOIN + example.cdr3b if include_cdr3a else example.cdr3b


def kmer_counts(
    example: SequenceExample, kmer_size: int, include_cdr3a: bool = True
) -> dict[str, int]:
    """Namespaced overlapping k-mer counts for one example.

    Keys are "tcr:<kmer>" over the joined cdr3a|cdr3b string and "pep:<kmer>"
    over the peptide. A field shorter than k contributes nothing.
    """
    counts: dict[str, int] = {}
    for namespace, seq in (
        (TCR_NAMESPACE, _tcr_string(example, include_cdr3a)),
        (PEPTIDE_NAMESPACE, example.peptide),
    ):
        for start in range(len(seq) - kmer_size + 1):
            key = namespace + ":" + seq[start : start + kmer_size]
            counts[key] = counts.get(key, 0) + 1
    return counts


def build_vocabulary(
    data: Dataset, kmer_size: int, include_cdr3a: bool = True
) -> dict[str, int]:
    """Map each k-mer seen in data to a stable index, in first-seen order."""
    vocab: dict[str, int] = {}
    for ex in data:
        for key in kmer_counts(ex, kmer_size, include_cdr3a):
            if key not in vocab:
                vocab[key] = len(vocab)
    return vocab


def featurize(
    example: SequenceExample,
    kmer_size: int,
    vocabulary: Mapping[str, int],
    include_cdr3a: bool = True,
) -> dict[int, int]:
    """Sparse count vector for one example; out-of-vocabulary k-mers ignored."""
    vec: dict[int, int] = {}
    for key, count in kmer_counts(example, kmer_size, include_cdr3a).items():
        idx = vocabulary.get(key)
        if idx is not None:
            vec[idx] = count
    return vec


def class_weights(n_pos: int, n_neg: int) -> tuple[float, float]:
    """Inverse-prevalence weights (w_pos, w_neg) = (n/(2 n_pos), n/(2 n_neg))."""
    if n_pos <= 0 or n_neg <= 0:
        raise ValueError(f"both classes required, got n_pos={n_pos}, n_neg={n_neg}")
    n = n_pos + n_neg
    return n / (2.0 * n_pos), n / (2.0 * n_neg)


def _design_matrix(
    data: Dataset, kmer_size: int, vocabulary: Mapping[str, int], include_cdr3a: bool
) -> csr_matrix:
    indptr = [0]
    indices: list[int] = []
    values: list[float] = []
    for ex in data:
        vec = featurize(ex, kmer_size, vocabulary, include_cdr3a)
        for idx in sorted(vec):
            indices.append(idx)
            values.append(float(vec[idx]))
        indptr.append(len(indices))
    return csr_matrix(
        (np.array(values), np.array(indices, dtype=np.int64), np.array(indptr, dtype=np.int64)),
        shape=(len(data), len(vocabulary)),
    )


def loss_and_grad(
    X: csr_matrix,
    y: np.ndarray,
    sample_weights: np.ndarray,
    weights: np.ndarray,
    bias: float,
    l2: float,
) -> tuple[float, np.ndarray, float]:
    """Class-weighted mean BCE plus 0.5*l2*||w||^2 (bias unpenalized).

    Returns (loss, grad_weights, grad_bias). Per-sample cross-entropy is
    computed as softplus(z) - y*z, which is exact and overflow-safe.
    """
    n = X.shape[0]
    # overflow to inf is expected when training diverges; the caller checks
    # for a non-finite loss and reports it
    with np.errstate(over="ignore"):
        z = X @ weights + bias
        per_sample = np.logaddexp(0.0, z) - y * z
        loss = float(np.mean(sample_weights * per_sample)) + 0.5 * l2 * float(weights @ weights)
        p = 1.0 / (1.0 + np.exp(-np.clip(z, -500.0, 500.0)))
        coef = sample_weights * (p - y) / n
        grad_w = np.asarray(X.T @ coef) + l2 * weights
        grad_b = float(np.sum(coef))
    return loss, grad_w, grad_b


@dataclass
class LinearScorerModel:
    """Trained linear scorer plus everything needed to reproduce its features."""

    kmer_size: int
    vocabulary: dict[str, int]
    weights: np.ndarray
    bias: float
    class_weights: tuple[float, float]
    include_cdr3a: bool = True
    l2: float = DEFAULT_L2
    learning_rate: float = 0.1
    epochs: int = 300
    seed: int = 0
    final_train_loss: float = float("nan")
    train_fingerprint: str = ""

    def __post_init__(self) -> None:
        self.weights = np.asarray(self.weights, dtype=float)
        if self.weights.shape != (len(self.vocabulary),):
            raise ValueError("weights length must equal vocabulary size")

    def fingerprint(self) -> str:
        return hashlib.sha256(self.to_json().encode("utf-8")).hexdigest()

    def to_json(self) -> str:
        payload = {
            "kmer_size": self.kmer_size,
            "vocabulary": self.vocabulary,
            "weights": [float(w) for w in self.weights],
            "bias": float(self.bias),
            "class_weights": [float(c) for c in self.class_weights],
            "include_cdr3a": self.include_cdr3a,
            "l2": self.l2,
            "learning_rate": self.learning_rate,
            "epochs": self.epochs,
            "seed": self.seed,
            "final_train_loss": self.final_train_loss,
            "train_fingerprint": self.train_fingerprint,
        }
        return json.dumps(payload, indent=2, sort_keys=True) + "\n"

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json(), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "LinearScorerModel":
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(
            kmer_size=raw["kmer_size"],
            vocabulary={k: int(v) for k, v in raw["vocabulary"].items()},
            weights=np.array(raw["weights"], dtype=float),
            bias=raw["bias"],
            class_weights=(raw["class_weights"][0], raw["class_weights"][1]),
            include_cdr3a=raw["include_cdr3a"],
            l2=raw["l2"],
            learning_rate=raw["learning_rate"],
            epochs=raw["epochs"],
            seed=raw["seed"],
            final_train_loss=raw["final_train_loss"],
            train_fingerprint=raw["train_fingerprint"],
        )


def ids_fingerprint(ids: Iterable[str]) -> str:
    return hashlib.sha256("\n".join(ids).encode("utf-8")).hexdigest()


def train_linear(
    train: Dataset,
    config: TrainingConfig = TrainingConfig(),
    loss_callback: Callable[[int, float], None] | None = None,
) -> LinearScorerModel:
    """Fit the k-mer logistic scorer on the training split.

    Deterministic: zero initialization, full-batch updates. Class weights come
    from the training split only. Raises if the loss goes non-finite (the
    learning rate is too large) or if a class is missing.
    """
    labels = np.array([ex.label for ex in train], dtype=float)
    n_pos = int(labels.sum())
    w_pos, w_neg = class_weights(n_pos, len(labels) - n_pos)
    vocabulary = build_vocabulary(train, config.kmer_size, config.include_cdr3a)
    X = _design_matrix(train, config.kmer_size, vocabulary, config.include_cdr3a)
    sample_w = np.where(labels == 1.0, w_pos, w_neg)
    weights = np.zeros(len(vocabulary))
    bias = 0.0
    loss = float("nan")
    for epoch in range(config.epochs):
        loss, grad_w, grad_b = loss_and_grad(X, labels, sample_w, weights, bias, config.l2)
        if not math.isfinite(loss):
            raise ValueError(
                f"training diverged at epoch {epoch} (loss not finite); "
                f"reduce learning_rate from {config.learning_rate}"
            )
        if loss_callback is not None:
            loss_callback(epoch, loss)
        weights = weights - config.learning_rate * grad_w
        bias = bias - config.learning_rate * grad_b
    loss, _, _ = loss_and_grad(X, labels, sample_w, weights, bias, config.l2)
    if not math.isfinite(loss):
        raise ValueError(
            f"training diverged (final loss not finite); "
            f"reduce learning_rate from {config.learning_rate}"
        )
    return LinearScorerModel(
        kmer_size=config.kmer_size,
        vocabulary=vocabulary,
        weights=weights,
        bias=bias,
        class_weights=(w_pos, w_neg),
        include_cdr3a=config.include_cdr3a,
        l2=config.l2,
        learning_rate=config.learning_rate,
        epochs=config.epochs,
        seed=config.seed,
        final_train_loss=loss,
        train_fingerprint=ids_fingerprint(ex.id for ex in train),
    )


def score(model: LinearScorerModel, data: Dataset) -> list[ScoreRecord]:
    """Logit and probability for every example, preserving dataset order."""
    records = []
    for ex in data:
        vec = featurize(ex, model.kmer_size, model.vocabulary, model.include_cdr3a)
        logit = model.bias
        for idx, count in vec.items():
            logit += model.weights[idx] * count
        records.append(ScoreRecord.from_logit(ex.id, float(logit), ex.label))
    return records


def export_logits(records: Sequence[ScoreRecord], path: str | Path) -> None:
    """TSV of example_id and logit, one record per line, no header."""
    with open(path, "w", encoding="utf-8", newline="") as handle:
        for rec in records:
            handle.write(f"{rec.example_id}\t{rec.logit!r}\n")


def ingest_logits(path: str | Path, data: Dataset) -> list[ScoreRecord]:
    """Join an external logit TSV against a dataset's labels.

    Every dataset id must appear exactly once; ids in the file that are not in
    the dataset are permitted (one file can serve several splits). Missing,
    duplicate, or non-finite entries raise ValueError naming the id.
    """
    logits: dict[str, float] = {}
    with open(path, "r", encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise ValueError(f"line {line_no}: expected 'id<TAB>logit', got {line!r}")
            ex_id, raw = parts
            if ex_id in logits:
                raise ValueError(f"duplicate logit for id {ex_id!r}")
            try:
                value = float(raw)
            except ValueError:
                raise ValueError(f"unparseable logit for id {ex_id!r}: {raw!r}") from None
            if not math.isfinite(value):
                raise ValueError(f"non-finite logit for id {ex_id!r}")
            logits[ex_id] = value
    records = []
    for ex in data:
        if ex.id not in logits:
            raise ValueError(f"missing logit for id {ex.id!r}")
        records.append(ScoreRecord.from_logit(ex.id, logits[ex.id], ex.label))
    return records
