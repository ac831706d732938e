"""Metrics kernel plus logistic-regression and naive-Bayes baselines."""

import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Mapping, NamedTuple, Optional, Sequence

import numpy as np
from scipy import sparse

from .dataset import FAKE, DatasetSplit, FeatureAssembler, NewsRecord
from .errors import ConfigError, ContractError, DimensionError
from .text import Vocabulary, tokenize


logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ConfusionMatrix:
    """Counts with fake (1) as the positive class."""

    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    @classmethod
    def from_labels(cls, y_true: Sequence[int], y_pred: Sequence[int]) -> "ConfusionMatrix":
        truth = np.asarray(y_true, dtype=np.int64)
        pred = np.asarray(y_pred, dtype=np.int64)
        if truth.shape != pred.shape:
            raise DimensionError(f"{truth.shape[0]} labels but {pred.shape[0]} predictions")
        return cls(
            tp=int(np.sum((truth == FAKE) & (pred == FAKE))),
            fp=int(np.sum((truth != FAKE) & (pred == FAKE))),
            tn=int(np.sum((truth != FAKE) & (pred != FAKE))),
            fn=int(np.sum((truth == FAKE) & (pred != FAKE))),
        )


class Metrics(NamedTuple):
    accuracy: float
    precision: float
    recall: float
    f1: float

    def to_dict(self) -> Dict[str, float]:
        return self._asdict()


def compute_metrics(cm: ConfusionMatrix) -> Metrics:
    """Accuracy, precision, recall and F1; zero denominators give 0."""
    if cm.total <= 0:
        raise ContractError("cannot compute metrics over zero records")

    accuracy = (cm.tp + cm.tn) / cm.total
    precision = cm.tp / (cm.tp + cm.fp) if cm.tp + cm.fp else 0.0
    recall = cm.tp / (cm.tp + cm.fn) if cm.tp + cm.fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return Metrics(accuracy, precision, recall, f1)


def _record_text(record: NewsRecord) -> str:
    return f"{record.news_text} {record.tweet_text}"


def bag_of_words(texts: Sequence[str], vocab: Vocabulary) -> sparse.csr_matrix:
    """Token counts over the vocabulary (reserved ids excluded), one row per text."""
    from sklearn.feature_extraction.text import CountVectorizer

    if len(vocab) <= 2:
        raise ContractError("bag of words needs a non-empty vocabulary")
    vectorizer = CountVectorizer(
        analyzer=tokenize,
        vocabulary={token: index - 2 for token, index in vocab.token_to_index.items()},
        dtype=np.float64,
    )
    return vectorizer.fit_transform(texts).tocsr()


def _sigmoid(z: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def _check_binary(y: np.ndarray, what: str) -> None:
    if not np.isin(y, (0, 1)).all():
        raise ContractError(f"{what}: labels must be 0 or 1")
    if len(np.unique(y)) < 2:
        raise ContractError(f"{what}: training set holds a single class")


@dataclass
class LogisticRegressionModel:
    weights: np.ndarray
    bias: float
    l2: float = 0.0
    loss_history: List[float] = field(default_factory=list)

    def predict_proba(self, X) -> np.ndarray:
        return _sigmoid(np.asarray(X @ self.weights).ravel() + self.bias)

    def predict(self, X) -> np.ndarray:
        return (self.predict_proba(X) > 0.5).astype(np.int64)

    def loss(self, X, y: np.ndarray) -> float:
        p = np.clip(self.predict_proba(X), 1e-12, 1 - 1e-12)
        bce = -np.mean(y * np.log(p) + (1 - y) * np.log(1 - p))
        return float(bce + 0.5 * self.l2 * np.dot(self.weights, self.weights))


def train_logreg(
    X,
    y: Sequence[int],
    l2: float = 0.0,
    epochs: int = 200,
    lr: float = 0.1,
    seed: int = 0,
    batch_size: Optional[int] = None
) -> LogisticRegressionModel:
    """Gradient descent on L2-regularized binary cross-entropy.

    Args:
        X: Feature matrix (dense or scipy sparse), one row per example
        y: Binary labels
        l2: Ridge penalty on the weights (bias unpenalized)
        epochs: Passes over the data
        lr: Step size
        seed: Seeds the minibatch order
        batch_size: Minibatch size; None for full-batch descent
    """
    labels = np.asarray(y, dtype=np.float64)
    if X.shape[0] != labels.shape[0]:
        raise DimensionError(f"{X.shape[0]} rows but {labels.shape[0]} labels")
    _check_binary(labels, "train_logreg")
    if lr <= 0 or epochs < 1 or l2 < 0:
        raise ConfigError(f"invalid logistic regression settings lr={lr}, epochs={epochs}, l2={l2}")

    n = X.shape[0]
    model = LogisticRegressionModel(weights=np.zeros(X.shape[1]), bias=0.0, l2=l2)
    rng = np.random.default_rng(seed)
    step = n if batch_size is None else batch_size

    for epoch in range(epochs):
        order = np.arange(n) if batch_size is None else rng.permutation(n)
        for start in range(0, n, step):
            rows = order[start:start + step]
            Xb, yb = X[rows], labels[rows]
            residual = model.predict_proba(Xb) - yb
            grad_w = np.asarray(Xb.T @ residual).ravel() / len(rows) + l2 * model.weights
            model.weights = model.weights - lr * grad_w
            model.bias -= lr * float(residual.mean())
        model.loss_history.append(model.loss(X, labels))
        logger.debug(f"logreg epoch {epoch + 1}: loss {model.loss_history[-1]:.6f}")

    return model


@dataclass
class NaiveBayesModel:
    class_log_prior: np.ndarray
    feature_log_prob: np.ndarray
    alpha: float

    def joint_log_likelihood(self, X) -> np.ndarray:
        return np.asarray(X @ self.feature_log_prob.T) + self.class_log_prior

    def predict(self, X) -> np.ndarray:
        jll = self.joint_log_likelihood(X)
        # ties go to class 0
        return (jll[:, 1] > jll[:, 0]).astype(np.int64)


def train_nb(X, y: Sequence[int], alpha: float = 1.0) -> NaiveBayesModel:
    """Multinomial naive Bayes with additive smoothing."""
    if alpha <= 0:
        raise ConfigError(f"alpha must be positive, got {alpha}")
    if X.shape[1] == 0:
        raise ContractError("naive Bayes needs a non-empty vocabulary")
    labels = np.asarray(y, dtype=np.int64)
    if X.shape[0] != labels.shape[0]:
        raise DimensionError(f"{X.shape[0]} rows but {labels.shape[0]} labels")
    _check_binary(labels, "train_nb")

    vocab_size = X.shape[1]
    priors, log_probs = [], []
    for c in (0, 1):
        rows = labels == c
        counts = np.asarray(X[rows].sum(axis=0), dtype=np.float64).ravel()
        priors.append(np.log(rows.sum() / labels.shape[0]))
        log_probs.append(np.log((counts + alpha) / (counts.sum() + alpha * vocab_size)))

    return NaiveBayesModel(
        class_log_prior=np.array(priors),
        feature_log_prob=np.vstack(log_probs),
        alpha=alpha,
    )


@dataclass
class BaselineReport:
    method: str
    params: Dict[str, Any]
    metrics: Metrics
    train_size: int
    test_size: int

    def to_dict(self) -> Dict[str, Any]:
        return {
            "method": self.method,
            "params": self.params,
            "train_size": self.train_size,
            "test_size": self.test_size,
            **self.metrics.to_dict(),
        }


def run_baseline(
    method: str,
    records: Mapping[str, NewsRecord],
    split_: DatasetSplit,
    assembler: FeatureAssembler,
    seed: int = 0,
    alpha: float = 1.0,
    l2: float = 0.0,
    epochs: int = 200,
    lr: float = 0.1
) -> BaselineReport:
    """Train a supervised baseline on every labeled train record; score on test.

    Logistic regression sees bag-of-words counts plus aux features; naive
    Bayes sees the counts only.
    """
    if method not in ("logreg", "nb"):
        raise ConfigError(f"Unknown baseline method: {method}. Use 'logreg' or 'nb'")

    train_ids = [i for i in split_.train if records[i].is_labeled]
    test_ids = list(split_.test)

    def design(ids: Sequence[str]):
        bow = bag_of_words([_record_text(records[i]) for i in ids], assembler.vocab)
        if method == "nb":
            return bow
        aux = np.stack([assembler.assemble(records[i]).aux for i in ids])
        return sparse.hstack([bow, sparse.csr_matrix(aux)]).tocsr()

    y_train = [records[i].label for i in train_ids]
    y_test = [records[i].label for i in test_ids]
    X_train, X_test = design(train_ids), design(test_ids)

    params: Dict[str, Any]
    if method == "logreg":
        params = {"l2": l2, "epochs": epochs, "lr": lr, "seed": seed}
        predictions = train_logreg(X_train, y_train, l2=l2, epochs=epochs, lr=lr,
                                   seed=seed).predict(X_test)
    else:
        params = {"alpha": alpha}
        predictions = train_nb(X_train, y_train, alpha=alpha).predict(X_test)

    metrics = compute_metrics(ConfusionMatrix.from_labels(y_test, predictions))
    logger.info(
        f"Baseline {method}: accuracy {metrics.accuracy:.4f}, f1 {metrics.f1:.4f} "
        f"({len(train_ids)} train / {len(test_ids)} test)"
    )
    return BaselineReport(method, params, metrics, len(train_ids), len(test_ids))
