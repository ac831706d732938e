"""Fold-wise self-training with confidence-thresholded pseudo-labels.

Round 1 trains on the labeled first fold. Each later round scores the next
fold with the previous round's model, keeps predictions above ``sigma``
(or below ``1 - sigma``) as hard labels, retrains from scratch on the grown
set and reports on validation; the last round reports on test.
"""

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, FrozenSet, List, Literal, Mapping, Optional, Sequence, Tuple

import numpy as np

from .baselines import ConfusionMatrix, Metrics, compute_metrics
from .dataset import DatasetSplit, FeatureVector, FoldPlan, NewsRecord, fingerprint
from .errors import ConfigError, ContractError, LeakageError
from .model import HybridNewsModel, ModelConfig, make_batches, predict_proba, train_epoch


logger = logging.getLogger(__name__)

Decision = Literal["accepted_1", "accepted_0", "rejected"]
ACCEPTED_FAKE: Decision = "accepted_1"
ACCEPTED_REAL: Decision = "accepted_0"
REJECTED: Decision = "rejected"


@dataclass
class SelfTrainConfig:
    """Settings of the self-training loop."""

    k: int = 5
    sigma: float = 0.95
    epochs_per_round: int = 10
    seed: int = 0
    reject_policy: str = "drop"
    batch_size: int = 32
    learning_rate: float = 1e-3

    def validate(self) -> None:
        if not 0.5 < self.sigma < 1.0:
            raise ConfigError(f"sigma must lie in (0.5, 1), got {self.sigma}")
        if self.k < 2:
            raise ConfigError(f"k must be at least 2, got {self.k}")
        if self.epochs_per_round < 1 or self.batch_size < 1:
            raise ConfigError("epochs_per_round and batch_size must be at least 1")
        if self.reject_policy not in ("drop", "defer"):
            raise ConfigError(f"reject_policy must be drop or defer, got {self.reject_policy}")
        if self.learning_rate <= 0:
            raise ConfigError(f"learning_rate must be positive, got {self.learning_rate}")


def decide(probability: float, sigma: float) -> Decision:
    """Accept as fake above sigma, as real below 1 - sigma, else reject."""
    if probability > sigma:
        return ACCEPTED_FAKE
    if 1.0 - probability > sigma:
        return ACCEPTED_REAL
    return REJECTED


@dataclass(frozen=True)
class PseudoLabel:
    record_id: str
    probability: float
    decision: Decision
    round_index: int

    @property
    def label(self) -> Optional[int]:
        if self.decision == ACCEPTED_FAKE:
            return 1
        if self.decision == ACCEPTED_REAL:
            return 0
        return None


@dataclass
class PseudoLabelBatch:
    """Scored records of one round."""

    round_index: int
    sigma: float
    entries: List[PseudoLabel] = field(default_factory=list)

    @property
    def accepted(self) -> List[PseudoLabel]:
        return [e for e in self.entries if e.decision != REJECTED]

    @property
    def rejected(self) -> List[PseudoLabel]:
        return [e for e in self.entries if e.decision == REJECTED]

    def to_dicts(self) -> List[Dict[str, Any]]:
        return [
            {"id": e.record_id, "p": e.probability, "decision": e.decision}
            for e in self.entries
        ]


@dataclass
class RoundReport:
    """Metrics and set sizes for one round."""

    label: str
    split: str
    accuracy: float
    precision: float
    recall: float
    f1: float
    train_size: int
    accepted: int = 0
    rejected: int = 0

    COLUMNS = ("Accuracy", "Precision", "Recall", "F1-Score", "Train", "Accepted", "Rejected")

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @property
    def metrics(self) -> Metrics:
        return Metrics(self.accuracy, self.precision, self.recall, self.f1)


def round_label(round_index: int, k: int) -> str:
    """Row names: Fold1-Val, Fold+2-Val, ..., Fold+k-Test."""
    if round_index == 1:
        return "Fold1-Val"
    if round_index == k:
        return f"Fold+{k}-Test"
    return f"Fold+{round_index}-Val"


def pseudo_label(
    model: HybridNewsModel,
    fold_features: Sequence[FeatureVector],
    sigma: float,
    round_index: int = 0
) -> PseudoLabelBatch:
    """Score a fold with a frozen model and apply the sigma rule."""
    if not fold_features:
        raise ContractError("cannot pseudo-label an empty fold")
    probabilities = predict_proba(model, fold_features)
    return PseudoLabelBatch(
        round_index=round_index,
        sigma=sigma,
        entries=[
            PseudoLabel(f.record_id, float(p), decide(float(p), sigma), round_index)
            for f, p in zip(fold_features, probabilities)
        ],
    )


def augment_train_set(
    current_train: Mapping[str, int],
    batch: PseudoLabelBatch,
    reject_policy: str = "drop",
    previously_deferred: FrozenSet[str] = frozenset()
) -> Tuple[Dict[str, int], List[str]]:
    """Add accepted pseudo-labels to the train set.

    Args:
        current_train: Record id to hard label
        batch: Decisions for this round
        reject_policy: 'drop' discards rejected records; 'defer' re-scores them
            once after the next retraining
        previously_deferred: Ids that were already deferred once

    Returns:
        (new train set, ids to re-score next round)
    """
    train = dict(current_train)
    for entry in batch.accepted:
        if entry.record_id in train:
            raise ContractError(f"record {entry.record_id!r} is already in the train set")
        train[entry.record_id] = entry.label

    deferred: List[str] = []
    if reject_policy == "defer":
        deferred = [e.record_id for e in batch.rejected if e.record_id not in previously_deferred]
    elif reject_policy != "drop":
        raise ConfigError(f"reject_policy must be drop or defer, got {reject_policy}")
    return train, deferred


def evaluate(
    model: HybridNewsModel,
    record_ids: Sequence[str],
    split_: DatasetSplit,
    split_name: str,
    features: Mapping[str, FeatureVector],
    labels: Mapping[str, int]
) -> Metrics:
    """Threshold probabilities at 0.5 (ties count as real) and compute metrics."""
    allowed = set(split_.ids(split_name))
    outside = [i for i in record_ids if i not in allowed]
    if outside:
        raise ContractError(
            f"{len(outside)} ids are not in the {split_name} split, e.g. {outside[0]!r} "
            f"({split_.membership(outside[0])})"
        )
    probabilities = predict_proba(model, [features[i] for i in record_ids])
    predictions = (probabilities > 0.5).astype(np.int64)
    truth = [labels[i] for i in record_ids]
    return compute_metrics(ConfusionMatrix.from_labels(truth, predictions))


class SelfTrainer:
    """Runs the self-training rounds and keeps their artifacts."""

    def __init__(
        self,
        split_: DatasetSplit,
        fold_plan: FoldPlan,
        records: Mapping[str, NewsRecord],
        features: Mapping[str, FeatureVector],
        model_config: ModelConfig,
        config: SelfTrainConfig,
        log_path: Optional[Path] = None
    ):
        config.validate()
        model_config.validate()
        if fold_plan.k != config.k:
            raise ConfigError(f"fold plan has k={fold_plan.k}, config asks for k={config.k}")
        self.split = split_
        self.fold_plan = fold_plan
        self.records = records
        self.features = features
        self.model_config = model_config
        self.config = config
        self.log_path = Path(log_path) if log_path is not None else None
        self.model: Optional[HybridNewsModel] = None
        self.batches: List[PseudoLabelBatch] = []
        self.train_sizes: List[int] = []

    def _held_out_labels(self) -> Dict[str, int]:
        # true labels are read for validation and test only
        return {
            i: self.records[i].label
            for i in self.split.validation + self.split.test
            if self.records[i].is_labeled
        }

    def _check_disjoint(self, train: Mapping[str, int]) -> None:
        held_out = set(self.split.validation) | set(self.split.test)
        leaked = sorted(held_out.intersection(train))
        if leaked:
            raise LeakageError(
                f"train set holds {len(leaked)} held-out ids, e.g. {leaked[0]!r} "
                f"({self.split.membership(leaked[0])})"
            )

    def _check_labeled(self) -> None:
        missing = sorted(i for i in self.fold_plan.labeled
                         if i not in self.records or not self.records[i].is_labeled)
        if missing:
            raise ContractError(
                f"fold plan marks {len(missing)} ids labeled that carry no label, "
                f"e.g. {missing[0]!r}"
            )

    def _fit(self, train: Mapping[str, int], round_index: int) -> HybridNewsModel:
        """Train a freshly initialized model on the given hard labels."""
        cfg = self.config
        model = HybridNewsModel(self.model_config, seed=(cfg.seed, round_index))
        ids = list(train)
        feats = [self.features[i] for i in ids]
        labels = [train[i] for i in ids]
        for epoch in range(cfg.epochs_per_round):
            rng = np.random.default_rng((cfg.seed, round_index, epoch))
            batches = make_batches(feats, labels, batch_size=cfg.batch_size, rng=rng)
            loss = train_epoch(model, batches, lr=cfg.learning_rate)
            logger.debug(f"round {round_index} epoch {epoch + 1}: mean loss {loss:.6f}")
        return model

    def _score(self, model: HybridNewsModel, ids: Sequence[str], round_index: int) -> PseudoLabelBatch:
        return pseudo_label(model, [self.features[i] for i in ids], self.config.sigma, round_index)

    def _report(
        self,
        model: HybridNewsModel,
        round_index: int,
        train: Mapping[str, int],
        batch: Optional[PseudoLabelBatch]
    ) -> RoundReport:
        k = self.config.k
        split_name = "test" if round_index == k else "validation"
        metrics = evaluate(
            model, self.split.ids(split_name), self.split, split_name,
            self.features, self._held_out_labels()
        )
        report = RoundReport(
            label=round_label(round_index, k),
            split=split_name,
            accuracy=metrics.accuracy,
            precision=metrics.precision,
            recall=metrics.recall,
            f1=metrics.f1,
            train_size=len(train),
            accepted=len(batch.accepted) if batch else 0,
            rejected=len(batch.rejected) if batch else 0,
        )
        logger.info(
            f"{report.label}: train {report.train_size}, accepted {report.accepted}, "
            f"rejected {report.rejected}, accuracy {report.accuracy:.4f}, f1 {report.f1:.4f}"
        )
        self._log_round(report, round_index, train, batch)
        return report

    def _log_round(
        self,
        report: RoundReport,
        round_index: int,
        train: Mapping[str, int],
        batch: Optional[PseudoLabelBatch]
    ) -> None:
        if self.log_path is None:
            return
        entry = {
            "round": report.label,
            "round_index": round_index,
            "sigma": self.config.sigma,
            "train_size": report.train_size,
            "train_ids_sha256": fingerprint(train),
            "accepted": report.accepted,
            "rejected": report.rejected,
            "metrics": report.metrics.to_dict(),
            "decisions": batch.to_dicts() if batch else [],
        }
        with open(self.log_path, 'a', encoding='utf-8') as f:
            f.write(json.dumps(entry) + "\n")

    def run(self) -> List[RoundReport]:
        """Execute all k rounds; returns one report per round."""
        cfg = self.config
        self.fold_plan.check_against(self.split)
        self._check_labeled()
        if self.log_path is not None:
            self.log_path.write_text("", encoding="utf-8")

        train: Dict[str, int] = {
            i: self.records[i].label for i in self.fold_plan.fold(1) if i in self.fold_plan.labeled
        }
        self._check_disjoint(train)
        self.train_sizes = [len(train)]
        model = self._fit(train, 1)
        reports = [self._report(model, 1, train, None)]

        deferred: List[str] = []
        for round_index in range(2, cfg.k + 1):
            to_score = list(self.fold_plan.fold(round_index)) + deferred
            batch = self._score(model, to_score, round_index)
            self.batches.append(batch)
            train, deferred = augment_train_set(
                train, batch, cfg.reject_policy, previously_deferred=frozenset(deferred)
            )
            self._check_disjoint(train)
            if not batch.accepted:
                logger.warning(
                    f"{round_label(round_index, cfg.k)} accepted no records "
                    f"at sigma={cfg.sigma}; retraining on the unchanged train set"
                )
            self.train_sizes.append(len(train))
            model = self._fit(train, round_index)
            reports.append(self._report(model, round_index, train, batch))

        if deferred:
            logger.info(f"Dropping {len(deferred)} records still rejected after the last round")
        self.model = model
        return reports


def run_self_training(
    split_: DatasetSplit,
    fold_plan: FoldPlan,
    records: Mapping[str, NewsRecord],
    features: Mapping[str, FeatureVector],
    model_config: ModelConfig,
    config: SelfTrainConfig,
    log_path: Optional[Path] = None
) -> List[RoundReport]:
    """Run the whole self-training loop and return the k round reports."""
    return SelfTrainer(
        split_, fold_plan, records, features, model_config, config, log_path
    ).run()


def verify_run_log(path: Path, split_: Optional[DatasetSplit] = None) -> int:
    """Replay a round log and check the pseudo-labeling invariants.

    Checks every decision against the sigma rule, that the train set never
    shrinks and grows by exactly the accepted count, and (with a split)
    that no accepted id is a validation or test id.

    Returns:
        Number of decisions checked
    """
    held_out = set(split_.validation) | set(split_.test) if split_ is not None else set()
    checked = 0
    previous_size: Optional[int] = None
    with open(path, 'r', encoding='utf-8') as f:
        for line_number, line in enumerate(f, start=1):
            if not line.strip():
                continue
            entry = json.loads(line)
            sigma = float(entry["sigma"])
            accepted = 0
            for decision in entry["decisions"]:
                expected = decide(float(decision["p"]), sigma)
                if decision["decision"] != expected:
                    raise ContractError(
                        f"{path}:{line_number}: {decision['id']} logged {decision['decision']} "
                        f"but p={decision['p']} with sigma={sigma} gives {expected}"
                    )
                if expected != REJECTED:
                    accepted += 1
                    if decision["id"] in held_out:
                        raise LeakageError(
                            f"{path}:{line_number}: held-out id {decision['id']!r} was absorbed"
                        )
                checked += 1

            size = int(entry["train_size"])
            if previous_size is not None and size != previous_size + accepted:
                raise ContractError(
                    f"{path}:{line_number}: train set went from {previous_size} to {size} "
                    f"with {accepted} accepted records"
                )
            previous_size = size
    return checked
