"""Sentiment encoding of news and tweet text into six nominal columns."""

import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, FrozenSet, Literal, Optional, Tuple

from .config import config
from .errors import ConfigError, SentimentLookupError
from .text import tokenize


logger = logging.getLogger(__name__)

TextField = Literal["news", "tweet"]

BUNDLED_LEXICON_DIR = Path(__file__).parent / "lexicon"
SIDECAR_COLUMNS = (
    "record_id", "news_neg", "news_neu", "news_pos", "tweet_neg", "tweet_neu", "tweet_pos"
)


@dataclass(frozen=True)
class SentimentScore:
    """Negative / neutral / positive proportions summing to 1."""

    negative: float
    neutral: float
    positive: float

    def __post_init__(self):
        values = (self.negative, self.neutral, self.positive)
        if any(v < -1e-9 or v > 1 + 1e-9 for v in values) or abs(sum(values) - 1.0) > 1e-6:
            raise ConfigError(f"Sentiment proportions must lie in [0, 1] and sum to 1: {values}")

    def as_tuple(self) -> Tuple[float, float, float]:
        return (self.negative, self.neutral, self.positive)


NEUTRAL = SentimentScore(0.0, 1.0, 0.0)


class SentimentEncoder(ABC):
    """Abstract base class for sentiment encoders."""

    @abstractmethod
    def score(
        self,
        text: str,
        record_id: Optional[str] = None,
        field: TextField = "news"
    ) -> SentimentScore:
        """Score one text field of one record."""
        pass


def _read_word_list(path: Path) -> FrozenSet[str]:
    """Read one word per line; ';' starts a comment line."""
    words = set()
    with open(path, 'r', encoding='utf-8') as f:
        for line in f:
            word = line.strip().lower()
            if word and not word.startswith(';'):
                words.add(word)
    return frozenset(words)


class LexiconEncoder(SentimentEncoder):
    """Counts positive and negative opinion words.

    With P positive, N negative and T total tokens the score is
    (N/T', (T-P-N)/T', P/T') where T' = max(T, 1).
    """

    def __init__(self, positive: FrozenSet[str], negative: FrozenSet[str]):
        overlap = positive & negative
        if overlap:
            logger.warning(f"{len(overlap)} words are in both lexicons; counting them as positive")
        self.positive = frozenset(positive)
        self.negative = frozenset(negative) - self.positive

    @classmethod
    def from_directory(cls, directory: Optional[Path] = None) -> "LexiconEncoder":
        """Load ``positive-words.txt`` and ``negative-words.txt``.

        Args:
            directory: Word-list directory (defaults to VERAZ_LEXICON_DIR, then the bundled lists)
        """
        if directory is None:
            directory = config.lexicon_dir or BUNDLED_LEXICON_DIR
        directory = Path(directory)
        encoder = cls(
            _read_word_list(directory / "positive-words.txt"),
            _read_word_list(directory / "negative-words.txt"),
        )
        logger.debug(
            f"Loaded lexicon from {directory}: {len(encoder.positive)} positive, "
            f"{len(encoder.negative)} negative"
        )
        return encoder

    def score(
        self,
        text: str,
        record_id: Optional[str] = None,
        field: TextField = "news"
    ) -> SentimentScore:
        tokens = tokenize(text or "")
        if not tokens:
            return NEUTRAL

        n_pos = sum(1 for t in tokens if t in self.positive)
        n_neg = sum(1 for t in tokens if t in self.negative)
        total = len(tokens)
        return SentimentScore(
            negative=n_neg / total,
            neutral=(total - n_pos - n_neg) / total,
            positive=n_pos / total,
        )


class PrecomputedEncoder(SentimentEncoder):
    """Serves scores produced elsewhere (e.g. a pretrained pipeline).

    Reads a CSV sidecar with header
    ``record_id,news_neg,news_neu,news_pos,tweet_neg,tweet_neu,tweet_pos``.
    """

    def __init__(self, scores: Dict[str, Dict[str, SentimentScore]]):
        self._scores = scores

    @classmethod
    def from_csv(cls, path: Path) -> "PrecomputedEncoder":
        import pandas as pd

        frame = pd.read_csv(path, dtype={"record_id": str}, keep_default_na=False)
        missing = [c for c in SIDECAR_COLUMNS if c not in frame.columns]
        if missing:
            raise ConfigError(f"Sentiment sidecar {path} lacks columns: {', '.join(missing)}")

        scores: Dict[str, Dict[str, SentimentScore]] = {}
        for row in frame.itertuples(index=False):
            scores[str(row.record_id)] = {
                "news": SentimentScore(
                    float(row.news_neg), float(row.news_neu), float(row.news_pos)
                ),
                "tweet": SentimentScore(
                    float(row.tweet_neg), float(row.tweet_neu), float(row.tweet_pos)
                ),
            }
        logger.info(f"Loaded precomputed sentiment for {len(scores)} records from {path}")
        return cls(scores)

    def __len__(self) -> int:
        return len(self._scores)

    def score(
        self,
        text: str,
        record_id: Optional[str] = None,
        field: TextField = "news"
    ) -> SentimentScore:
        if record_id is None or record_id not in self._scores:
            raise SentimentLookupError(str(record_id))
        return self._scores[record_id][field]


def score_text(
    encoder: SentimentEncoder,
    text: str,
    record_id: Optional[str] = None,
    field: TextField = "news"
) -> SentimentScore:
    """Score a single text with the given encoder."""
    return encoder.score(text, record_id=record_id, field=field)


def encode_record(
    encoder: SentimentEncoder,
    news_text: str,
    tweet_text: str,
    record_id: Optional[str] = None
) -> Tuple[float, float, float, float, float, float]:
    """Six columns: news (neg, neu, pos) followed by tweet (neg, neu, pos)."""
    news = score_text(encoder, news_text, record_id=record_id, field="news")
    tweet = score_text(encoder, tweet_text, record_id=record_id, field="tweet")
    return news.as_tuple() + tweet.as_tuple()


def make_encoder(choice: str, sidecar_path: Optional[str] = None) -> SentimentEncoder:
    """Build the encoder named in a run configuration."""
    if choice == "lexicon":
        return LexiconEncoder.from_directory()
    if choice == "precomputed":
        if not sidecar_path:
            raise ConfigError("The precomputed encoder needs a sidecar path")
        return PrecomputedEncoder.from_csv(Path(sidecar_path))
    raise ConfigError(f"Unknown sentiment encoder: {choice}")
