"""Corpus loading, leakage-free splitting, fold planning and feature assembly."""

import hashlib
import json
import logging
from collections import Counter
from dataclasses import asdict, dataclass, field
from datetime import date
from pathlib import Path
from typing import (
    Any, Dict, FrozenSet, Iterable, List, Mapping, Optional, Sequence, Tuple
)

import numpy as np

from .errors import ConfigError, ContractError, CorpusError, LeakageError
from .sentiment import SentimentEncoder, encode_record
from .text import TokenSequence, Vocabulary, encode_text, strip_markup


logger = logging.getLogger(__name__)

FAKE = 1
REAL = 0

TEXT_FIELDS = ("title", "news_text", "source", "tweet_text")
DATE_FIELDS = ("news_date", "tweet_date", "user_registration_date")
NUMERIC_FIELDS = (
    "retweet_count", "user_tweet_count", "follower_count", "following_count", "like_count"
)
DATE_EPOCH = date(2000, 1, 1)
DATE_SCALE = 1.0 / 10000.0
SENTIMENT_COLUMNS = (
    "news_neg", "news_neu", "news_pos", "tweet_neg", "tweet_neu", "tweet_pos"
)


@dataclass
class NewsRecord:
    """One news item with its tweet and the posting user's profile."""

    id: str
    title: str = ""
    news_text: str = ""
    source: str = ""
    tweet_text: str = ""
    reply_texts: List[str] = field(default_factory=list)
    news_date: Optional[date] = None
    tweet_date: Optional[date] = None
    user_registration_date: Optional[date] = None
    retweet_count: Optional[int] = None
    user_tweet_count: Optional[int] = None
    follower_count: Optional[int] = None
    following_count: Optional[int] = None
    like_count: Optional[int] = None
    post_device: Optional[str] = None
    label: Optional[int] = None

    @property
    def is_labeled(self) -> bool:
        return self.label is not None

    def to_dict(self) -> Dict[str, Any]:
        """Convert to dictionary for JSON serialization."""
        data = asdict(self)
        for name in DATE_FIELDS:
            value = data[name]
            data[name] = value.isoformat() if value is not None else None
        return data

    @classmethod
    def from_dict(cls, data: Mapping[str, Any], line_number: Optional[int] = None) -> "NewsRecord":
        """Create from a parsed JSON object or CSV row."""
        raw_id = data.get("id")
        if raw_id is None or str(raw_id).strip() == "":
            raise CorpusError("record has no id", line_number=line_number)
        record_id = str(raw_id).strip()

        try:
            values: Dict[str, Any] = {"id": record_id}
            for name in TEXT_FIELDS:
                values[name] = strip_markup(_parse_text(data.get(name)))
            values["reply_texts"] = _parse_replies(data.get("reply_texts"))
            for name in DATE_FIELDS:
                values[name] = _parse_date(data.get(name))
            for name in NUMERIC_FIELDS:
                values[name] = _parse_count(data.get(name))
            device = data.get("post_device")
            values["post_device"] = str(device).strip() or None if device is not None else None
            values["label"] = _parse_label(data.get("label"))
        except ValueError as e:
            raise CorpusError(f"record {record_id}: {e}", line_number=line_number,
                              record_id=record_id)
        return cls(**values)


def _is_missing(value: Any) -> bool:
    return value is None or (isinstance(value, str) and value.strip() == "")


def _parse_text(value: Any) -> str:
    return "" if value is None else str(value)


def _parse_replies(value: Any) -> List[str]:
    if _is_missing(value):
        return []
    if isinstance(value, str):
        # CSV stores the list JSON-encoded
        try:
            value = json.loads(value)
        except json.JSONDecodeError:
            raise ValueError("reply_texts is not a JSON array")
    if not isinstance(value, list):
        raise ValueError("reply_texts must be a list of strings")
    return [strip_markup(str(v)) for v in value]


def _parse_date(value: Any) -> Optional[date]:
    if _is_missing(value):
        return None
    try:
        return date.fromisoformat(str(value).strip()[:10])
    except ValueError:
        raise ValueError(f"invalid date {value!r}, expected YYYY-MM-DD")


def _parse_count(value: Any) -> Optional[int]:
    if _is_missing(value):
        return None
    try:
        number = float(value)
    except (TypeError, ValueError):
        raise ValueError(f"invalid count {value!r}")
    if number < 0 or not number.is_integer():
        raise ValueError(f"count must be a non-negative integer, got {value!r}")
    return int(number)


def _parse_label(value: Any) -> Optional[int]:
    if _is_missing(value):
        return None
    normalized = str(value).strip().lower()
    if normalized in ("1", "1.0", "fake", "true"):
        return FAKE
    if normalized in ("0", "0.0", "real", "false"):
        return REAL
    raise ValueError(f"label must be 1/fake, 0/real or absent, got {value!r}")


def _iter_jsonl(path: Path) -> Iterable[Tuple[int, Dict[str, Any]]]:
    with open(path, 'r', encoding='utf-8') as f:
        for line_number, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                data = json.loads(line)
            except json.JSONDecodeError as e:
                raise CorpusError(f"malformed JSON ({e.msg})", line_number=line_number)
            if not isinstance(data, dict):
                raise CorpusError("expected a JSON object", line_number=line_number)
            yield line_number, data


def _iter_csv(path: Path) -> Iterable[Tuple[int, Dict[str, Any]]]:
    import pandas as pd

    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False)
    except pd.errors.EmptyDataError:
        return
    except pd.errors.ParserError as e:
        raise CorpusError(f"malformed CSV: {e}")

    # header is line 1
    for offset, row in enumerate(frame.to_dict(orient="records")):
        yield offset + 2, row


def load_records(path: Path, fmt: Optional[str] = None) -> List[NewsRecord]:
    """Load a corpus from JSONL or CSV.

    Args:
        path: Corpus file
        fmt: 'jsonl' or 'csv' (inferred from the suffix when None)

    Returns:
        Records in file order
    """
    path = Path(path)
    if fmt is None:
        fmt = "csv" if path.suffix.lower() == ".csv" else "jsonl"
    if fmt not in ("jsonl", "csv"):
        raise ConfigError(f"Unknown corpus format: {fmt}")

    rows = _iter_jsonl(path) if fmt == "jsonl" else _iter_csv(path)
    records: List[NewsRecord] = []
    seen: Dict[str, int] = {}
    for line_number, row in rows:
        record = NewsRecord.from_dict(row, line_number=line_number)
        if record.id in seen:
            raise CorpusError(
                f"duplicate id {record.id!r} (first seen on line {seen[record.id]})",
                line_number=line_number,
                record_id=record.id,
            )
        seen[record.id] = line_number
        records.append(record)

    if not records:
        raise CorpusError(f"empty corpus: {path}")

    logger.info(f"Loaded {len(records)} records from {path}")
    return records


def write_jsonl(records: Iterable[NewsRecord], path: Path) -> None:
    """Write records as normalized JSONL."""
    with open(path, 'w', encoding='utf-8') as f:
        for record in records:
            f.write(json.dumps(record.to_dict(), ensure_ascii=False) + "\n")


def corpus_summary(records: Sequence[NewsRecord]) -> Dict[str, int]:
    labeled = [r for r in records if r.is_labeled]
    fake = sum(1 for r in labeled if r.label == FAKE)
    return {
        "total": len(records),
        "labeled": len(labeled),
        "unlabeled": len(records) - len(labeled),
        "fake": fake,
        "real": len(labeled) - fake,
    }


def index_records(records: Iterable[NewsRecord]) -> Dict[str, NewsRecord]:
    return {record.id: record for record in records}


def fingerprint(ids: Iterable[str]) -> str:
    """Order-independent hash of a set of record ids."""
    joined = "\n".join(sorted(ids))
    return hashlib.sha256(joined.encode('utf-8')).hexdigest()


@dataclass(frozen=True)
class DatasetSplit:
    """Disjoint train / validation / test id sets."""

    train: Tuple[str, ...]
    validation: Tuple[str, ...]
    test: Tuple[str, ...]

    SPLITS = ("train", "validation", "test")

    def __post_init__(self):
        self.check()

    def check(self) -> None:
        """Raise LeakageError if any two splits share an id."""
        train, validation, test = set(self.train), set(self.validation), set(self.test)
        for name, shared in (
            ("train/validation", train & validation),
            ("train/test", train & test),
            ("validation/test", validation & test),
        ):
            if shared:
                raise LeakageError(f"{name} share {len(shared)} ids, e.g. {sorted(shared)[0]!r}")

    def ids(self, name: str) -> Tuple[str, ...]:
        if name not in self.SPLITS:
            raise ConfigError(f"Unknown split {name!r}; use one of {self.SPLITS}")
        return getattr(self, name)

    def membership(self, record_id: str) -> Optional[str]:
        for name in self.SPLITS:
            if record_id in getattr(self, name):
                return name
        return None

    def train_fingerprint(self) -> str:
        return fingerprint(self.train)

    def to_dict(self) -> Dict[str, List[str]]:
        return {name: list(getattr(self, name)) for name in self.SPLITS}


def _stratified_take(
    n: int,
    fake: List[str],
    real: List[str],
    fake_fraction: float
) -> Tuple[List[str], List[str], List[str]]:
    """Take n ids matching the fake fraction; returns (taken, fake_left, real_left)."""
    n_fake = int(np.floor(n * fake_fraction + 0.5))
    n_fake = min(max(n_fake, n - len(real)), len(fake))
    n_real = n - n_fake
    return fake[:n_fake] + real[:n_real], fake[n_fake:], real[n_real:]


def split(
    records: Sequence[NewsRecord],
    ratios: Tuple[float, float, float] = (0.6, 0.2, 0.2),
    seed: int = 0
) -> DatasetSplit:
    """Seeded, label-stratified train/validation/test split.

    Validation and test are drawn from labeled records only; unlabeled
    records always stay in train.
    """
    if len(ratios) != 3 or any(r <= 0 for r in ratios):
        raise ConfigError(f"ratios must be three positive numbers, got {ratios}")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ConfigError(f"ratios must sum to 1, got {sum(ratios)}")

    n = len(records)
    n_val = int(np.floor(n * ratios[1] + 0.5))
    n_test = int(np.floor(n * ratios[2] + 0.5))
    n_train = n - n_val - n_test
    if min(n_train, n_val, n_test) <= 0:
        raise ConfigError(
            f"ratios {ratios} over {n} records leave an empty split "
            f"({n_train}/{n_val}/{n_test})"
        )

    ordered = sorted(records, key=lambda r: r.id)
    rng = np.random.default_rng(seed)
    fake = [r.id for r in ordered if r.label == FAKE]
    real = [r.id for r in ordered if r.label == REAL]
    unlabeled = [r.id for r in ordered if not r.is_labeled]
    fake = [fake[i] for i in rng.permutation(len(fake))]
    real = [real[i] for i in rng.permutation(len(real))]

    n_labeled = len(fake) + len(real)
    if n_labeled < n_val + n_test:
        raise ConfigError(
            f"validation and test need {n_val + n_test} labeled records, corpus has {n_labeled}"
        )

    fake_fraction = len(fake) / n_labeled
    validation, fake, real = _stratified_take(n_val, fake, real, fake_fraction)
    test, fake, real = _stratified_take(n_test, fake, real, fake_fraction)
    train = fake + real + unlabeled

    result = DatasetSplit(
        train=tuple(sorted(train)),
        validation=tuple(sorted(validation)),
        test=tuple(sorted(test)),
    )
    logger.info(
        f"Split {n} records into {len(result.train)} train / "
        f"{len(result.validation)} validation / {len(result.test)} test (seed {seed})"
    )
    return result


@dataclass(frozen=True)
class FoldPlan:
    """k folds over the train split; only fold 1 exposes labels."""

    k: int
    folds: Tuple[Tuple[str, ...], ...]
    seed: int
    labeled: FrozenSet[str]

    def fold(self, number: int) -> Tuple[str, ...]:
        """Fold by 1-based number."""
        if not 1 <= number <= self.k:
            raise ConfigError(f"fold number must be in 1..{self.k}, got {number}")
        return self.folds[number - 1]

    @property
    def sizes(self) -> List[int]:
        return [len(f) for f in self.folds]

    def all_ids(self) -> List[str]:
        return [record_id for fold in self.folds for record_id in fold]

    def check_against(self, split_: DatasetSplit) -> None:
        """Leakage guard: folds must partition the train split exactly."""
        if len(self.folds) != self.k:
            raise ContractError(f"plan declares k={self.k} but holds {len(self.folds)} folds")

        ids = self.all_ids()
        counts = Counter(ids)
        repeated = sorted(i for i, c in counts.items() if c > 1)
        if repeated:
            raise ContractError(f"id {repeated[0]!r} appears in more than one fold")

        held_out = set(split_.validation) | set(split_.test)
        leaked = sorted(set(ids) & held_out)
        if leaked:
            raise LeakageError(
                f"fold plan contains {len(leaked)} validation/test ids, e.g. {leaked[0]!r} "
                f"({split_.membership(leaked[0])})"
            )

        if set(ids) != set(split_.train):
            raise ContractError("fold plan does not cover exactly the train split")
        if not self.labeled <= set(self.folds[0]):
            raise LeakageError("labels are exposed outside fold 1")

    def to_dict(self) -> Dict[str, Any]:
        return {
            "k": self.k,
            "seed": self.seed,
            "folds": [list(f) for f in self.folds],
            "labeled": sorted(self.labeled),
        }

    def save(self, path: Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: Path) -> "FoldPlan":
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
            return cls(
                k=int(data["k"]),
                folds=tuple(tuple(f) for f in data["folds"]),
                seed=int(data["seed"]),
                labeled=frozenset(data["labeled"]),
            )
        except (OSError, KeyError, TypeError, ValueError) as e:
            raise ConfigError(f"Cannot read fold plan {path}: {e}")


def make_folds(
    split_: DatasetSplit,
    records: Mapping[str, NewsRecord],
    k: int = 5,
    seed: int = 0
) -> FoldPlan:
    """Partition the train split into k folds with labels only in fold 1.

    Fold sizes differ by at most one, with the remainder going to the
    earliest folds. Fold 1 is filled from labeled train records.
    """
    if k < 2:
        raise ConfigError(f"k must be at least 2, got {k}")

    train = list(split_.train)
    labeled_ids = [i for i in train if records[i].is_labeled]
    if not labeled_ids:
        raise ContractError("the train split has no labeled records; fold 1 needs labels")
    if len(labeled_ids) < k:
        raise ContractError(f"the train split has {len(labeled_ids)} labeled records, need {k}")

    base, remainder = divmod(len(train), k)
    sizes = [base + (1 if i < remainder else 0) for i in range(k)]

    rng = np.random.default_rng(seed)
    labeled_order = [labeled_ids[i] for i in rng.permutation(len(labeled_ids))]
    labeled_set = set(labeled_ids)
    unlabeled = [i for i in train if i not in labeled_set]

    first = labeled_order[:sizes[0]]
    rest = labeled_order[sizes[0]:] + unlabeled
    rest = [rest[i] for i in rng.permutation(len(rest))]
    if len(first) < sizes[0]:
        shortfall = sizes[0] - len(first)
        logger.warning(
            f"Only {len(first)} labeled train records for a fold of {sizes[0]}; "
            f"{shortfall} unlabeled records fill fold 1 and are not trained on"
        )
        first, rest = first + rest[:shortfall], rest[shortfall:]

    folds = [tuple(first)]
    start = 0
    for size in sizes[1:]:
        folds.append(tuple(rest[start:start + size]))
        start += size

    plan = FoldPlan(
        k=k,
        folds=tuple(folds),
        seed=seed,
        labeled=frozenset(i for i in first if records[i].is_labeled),
    )
    logger.info(
        f"Folded {len(train)} train records into sizes {plan.sizes}; "
        f"{len(plan.labeled)} labels visible ({len(plan.labeled) / len(train):.1%})"
    )
    return plan


@dataclass
class NormalizationStats:
    """Train-split statistics, tagged with the fingerprint of the ids they came from."""

    fingerprint: str
    medians: Dict[str, float]
    means: Dict[str, float]
    stds: Dict[str, float]
    devices: Tuple[str, ...] = ()

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data["devices"] = list(self.devices)
        return data

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "NormalizationStats":
        return cls(
            fingerprint=data["fingerprint"],
            medians=dict(data["medians"]),
            means=dict(data["means"]),
            stds=dict(data["stds"]),
            devices=tuple(data.get("devices", ())),
        )

    def save(self, path: Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: Path) -> "NormalizationStats":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def compute_stats(
    records: Mapping[str, NewsRecord],
    ids: Sequence[str],
    max_devices: int = 5
) -> NormalizationStats:
    """Median, mean and std of each numeric field over the given ids.

    Pass the train split's ids; the fingerprint ties the result to them.
    """
    if not ids:
        raise ContractError("cannot compute statistics over zero records")

    medians: Dict[str, float] = {}
    means: Dict[str, float] = {}
    stds: Dict[str, float] = {}
    for name in NUMERIC_FIELDS:
        raw = [getattr(records[i], name) for i in ids]
        present = np.array([v for v in raw if v is not None], dtype=np.float64)
        median = float(np.median(present)) if present.size else 0.0
        imputed = np.array([median if v is None else v for v in raw], dtype=np.float64)
        medians[name] = median
        means[name] = float(imputed.mean())
        stds[name] = float(imputed.std())

    device_counts = Counter(records[i].post_device for i in ids if records[i].post_device)
    devices = tuple(
        d for d, _ in sorted(device_counts.items(), key=lambda item: (-item[1], item[0]))
    )[:max_devices]

    return NormalizationStats(
        fingerprint=fingerprint(ids),
        medians=medians,
        means=means,
        stds=stds,
        devices=devices,
    )


@dataclass(frozen=True, eq=False)
class FeatureVector:
    """Model inputs for one record: token channels plus auxiliary columns."""

    record_id: str
    channels: Tuple[TokenSequence, ...]
    aux: np.ndarray


class FeatureAssembler:
    """Turns records into FeatureVectors with train-split statistics.

    Aux layout: z-scored numeric fields, two scaled date features, then the
    sentiment 6-tuple and the device one-hot when enabled.
    """

    def __init__(
        self,
        vocab: Vocabulary,
        encoder: SentimentEncoder,
        stats: NormalizationStats,
        max_seq_len: int = 100,
        use_sentiment: bool = True,
        device_features: bool = False,
        train_fingerprint: Optional[str] = None
    ):
        if train_fingerprint is not None and stats.fingerprint != train_fingerprint:
            raise LeakageError(
                "normalization statistics were not computed on this train split "
                f"(stats {stats.fingerprint[:12]}, train {train_fingerprint[:12]})"
            )
        self.vocab = vocab
        self.encoder = encoder
        self.stats = stats
        self.max_seq_len = max_seq_len
        self.use_sentiment = use_sentiment
        self.device_features = device_features

    @property
    def aux_columns(self) -> List[str]:
        columns = list(NUMERIC_FIELDS) + ["news_days", "account_age_days"]
        if self.use_sentiment:
            columns += list(SENTIMENT_COLUMNS)
        if self.device_features:
            columns += [f"device={d}" for d in self.stats.devices] + ["device=other"]
        return columns

    @property
    def aux_dim(self) -> int:
        return len(self.aux_columns)

    def _numeric(self, record: NewsRecord) -> List[float]:
        values = []
        for name in NUMERIC_FIELDS:
            raw = getattr(record, name)
            value = self.stats.medians[name] if raw is None else float(raw)
            std = self.stats.stds[name]
            values.append((value - self.stats.means[name]) / std if std > 0 else 0.0)
        return values

    @staticmethod
    def _dates(record: NewsRecord) -> List[float]:
        news_days = 0.0
        if record.news_date is not None:
            news_days = (record.news_date - DATE_EPOCH).days * DATE_SCALE
        account_age = 0.0
        if record.tweet_date is not None and record.user_registration_date is not None:
            account_age = (record.tweet_date - record.user_registration_date).days * DATE_SCALE
        return [news_days, account_age]

    def _device(self, record: NewsRecord) -> List[float]:
        one_hot = [0.0] * (len(self.stats.devices) + 1)
        if record.post_device in self.stats.devices:
            one_hot[self.stats.devices.index(record.post_device)] = 1.0
        else:
            one_hot[-1] = 1.0
        return one_hot

    def assemble(self, record: NewsRecord) -> FeatureVector:
        aux = self._numeric(record) + self._dates(record)
        if self.use_sentiment:
            aux += list(encode_record(self.encoder, record.news_text, record.tweet_text,
                                      record_id=record.id))
        if self.device_features:
            aux += self._device(record)

        return FeatureVector(
            record_id=record.id,
            channels=(
                encode_text(record.news_text, self.vocab, self.max_seq_len),
                encode_text(record.tweet_text, self.vocab, self.max_seq_len),
            ),
            aux=np.array(aux, dtype=np.float64),
        )

    def assemble_all(self, records: Iterable[NewsRecord]) -> Dict[str, FeatureVector]:
        return {record.id: self.assemble(record) for record in records}


def assemble_features(
    record: NewsRecord,
    vocab: Vocabulary,
    encoder: SentimentEncoder,
    stats: NormalizationStats,
    split_: DatasetSplit,
    max_seq_len: int = 100
) -> FeatureVector:
    """Assemble one record, refusing statistics from anything but the train split."""
    assembler = FeatureAssembler(
        vocab, encoder, stats, max_seq_len=max_seq_len,
        train_fingerprint=split_.train_fingerprint()
    )
    return assembler.assemble(record)
