"""Tokenization, vocabulary and fixed-length encoding of text fields."""

import logging
import re
import unicodedata
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence

import numpy as np

from .errors import ConfigError, ContractError


logger = logging.getLogger(__name__)

URL_TOKEN = "<url>"
USER_TOKEN = "<user>"

_URL_PATTERN = re.compile(r"^(?:https?://|www\.)\S+", re.IGNORECASE)
_MARKUP_PATTERN = re.compile(r"<\s*/?\s*[a-zA-Z][a-zA-Z0-9]*(?:\s[^<>]*)?/?\s*>")


def _is_punctuation(ch: str) -> bool:
    return unicodedata.category(ch)[0] in ("P", "S")


def strip_markup(text: str) -> str:
    """Remove HTML tags from crawled text; plain text is returned unchanged."""
    if not text or not _MARKUP_PATTERN.search(text):
        return text

    from bs4 import BeautifulSoup

    soup = BeautifulSoup(text, 'lxml')

    # Remove script and style tags
    for tag in soup(['script', 'style']):
        tag.decompose()

    return ' '.join(soup.get_text(' ').split())


def tokenize(text: str) -> List[str]:
    """Split text into lowercase tokens.

    Splits on Unicode whitespace and strips leading/trailing punctuation.
    URLs become ``<url>`` and @-mentions become ``<user>``.

    Example:
        >>> tokenize("see https://x.co/ab @bob")
        ['see', '<url>', '<user>']
    """
    tokens: List[str] = []
    for raw in text.lower().split():
        start, end = 0, len(raw)
        while start < end and _is_punctuation(raw[start]):
            start += 1
        while end > start and _is_punctuation(raw[end - 1]):
            end -= 1
        core = raw[start:end]
        if not core:
            continue

        if _URL_PATTERN.match(core):
            tokens.append(URL_TOKEN)
        elif start > 0 and raw[start - 1] == "@":
            tokens.append(USER_TOKEN)
        else:
            tokens.append(core)
    return tokens


class Vocabulary:
    """Token to index map; 0 is padding and 1 is unknown."""

    PAD_INDEX = 0
    UNK_INDEX = 1
    PAD_TOKEN = "<pad>"
    UNK_TOKEN = "<unk>"

    def __init__(
        self,
        token_to_index: Dict[str, int],
        min_frequency: int = 2,
        max_size: int = 20000
    ):
        expected = set(range(2, len(token_to_index) + 2))
        if set(token_to_index.values()) != expected:
            raise ContractError("Vocabulary indices must be contiguous from 2")
        self.token_to_index = dict(token_to_index)
        self.min_frequency = min_frequency
        self.max_size = max_size

    def __len__(self) -> int:
        return len(self.token_to_index) + 2

    def __contains__(self, token: str) -> bool:
        return token in self.token_to_index

    def __eq__(self, other: object) -> bool:
        return isinstance(other, Vocabulary) and self.token_to_index == other.token_to_index

    def lookup(self, token: str) -> int:
        return self.token_to_index.get(token, self.UNK_INDEX)

    def tokens(self) -> List[str]:
        """Tokens in index order, excluding the reserved entries."""
        return sorted(self.token_to_index, key=self.token_to_index.__getitem__)

    def save(self, path: Path) -> None:
        """Write ``token<TAB>index`` lines, reserved entries first."""
        lines = [f"{self.PAD_TOKEN}\t{self.PAD_INDEX}", f"{self.UNK_TOKEN}\t{self.UNK_INDEX}"]
        lines.extend(f"{token}\t{self.token_to_index[token]}" for token in self.tokens())
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: Path) -> "Vocabulary":
        mapping: Dict[str, int] = {}
        with open(path, 'r', encoding='utf-8') as f:
            for line_number, line in enumerate(f, start=1):
                line = line.rstrip("\n")
                if not line:
                    continue
                token, sep, index = line.rpartition("\t")
                if not sep:
                    raise ContractError(f"{path}:{line_number}: expected 'token<TAB>index'")
                if int(index) < 2:
                    continue
                mapping[token] = int(index)
        return cls(mapping)


def build_vocab(
    corpus: Iterable[Sequence[str]],
    min_frequency: int = 2,
    max_size: int = 20000
) -> Vocabulary:
    """Build a vocabulary from training-split token lists.

    Tokens seen at least ``min_frequency`` times are ranked by count
    (descending) then token (ascending) and truncated to ``max_size - 2``.
    """
    if max_size < 3:
        raise ConfigError(f"max_size must be at least 3, got {max_size}")
    if min_frequency < 1:
        raise ConfigError(f"min_frequency must be at least 1, got {min_frequency}")

    counts: Counter = Counter()
    for tokens in corpus:
        counts.update(tokens)

    ranked = sorted(
        (item for item in counts.items() if item[1] >= min_frequency),
        key=lambda item: (-item[1], item[0])
    )[:max_size - 2]

    vocab = Vocabulary(
        {token: i for i, (token, _) in enumerate(ranked, start=2)},
        min_frequency=min_frequency,
        max_size=max_size
    )
    logger.info(f"Built vocabulary of {len(vocab)} entries from {len(counts)} distinct tokens")
    return vocab


@dataclass(frozen=True, eq=False)
class TokenSequence:
    """Right-padded token ids with the count of real tokens."""

    ids: np.ndarray
    true_length: int

    def __len__(self) -> int:
        return int(self.ids.shape[0])


def encode_pad(tokens: Sequence[str], vocab: Vocabulary, max_seq_len: int) -> TokenSequence:
    """Map tokens to ids, keep the first ``max_seq_len`` and right-pad with 0."""
    if max_seq_len < 1:
        raise ConfigError(f"max_seq_len must be at least 1, got {max_seq_len}")

    kept = tokens[:max_seq_len]
    ids = np.zeros(max_seq_len, dtype=np.int64)
    ids[:len(kept)] = [vocab.lookup(token) for token in kept]
    return TokenSequence(ids=ids, true_length=len(kept))


def encode_text(text: Optional[str], vocab: Vocabulary, max_seq_len: int) -> TokenSequence:
    return encode_pad(tokenize(text or ""), vocab, max_seq_len)
