"""Shared fixtures: small deterministic corpora and tiny model settings."""

import json
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np
import pytest

from veraz.dataset import NewsRecord, index_records


FAKE_WORDS = ["shocking", "hoax", "scam", "terrible", "awful"]
REAL_WORDS = ["report", "committee", "agreed", "budget", "stable"]
FILLER = ["the", "city", "people", "today", "said"]


def make_record_dict(n: int, label: Optional[int]) -> Dict:
    """A corpus row whose text leans toward its class."""
    words = FAKE_WORDS if label == 1 else REAL_WORDS
    news = " ".join(words[(n + i) % 5] if i % 2 == 0 else FILLER[(n + i) % 5] for i in range(6))
    tweet = f"@user{n} {words[n % 5]} {FILLER[n % 5]} https://t.co/{n}"
    return {
        "id": f"r{n:04d}",
        "title": f"title {n}",
        "news_text": news,
        "source": "example",
        "tweet_text": tweet,
        "reply_texts": ["ok"],
        "news_date": f"2018-0{1 + n % 9}-1{n % 10}",
        "tweet_date": f"2018-0{1 + n % 9}-2{n % 8}",
        "user_registration_date": "2012-05-01" if label == 0 else "2017-11-20",
        "retweet_count": 10 * (n % 7) + (40 if label == 1 else 0),
        "user_tweet_count": 100 + n,
        "follower_count": None if n % 11 == 0 else 50 * (n % 5),
        "following_count": 20 + n % 3,
        "like_count": n % 9,
        "post_device": ["Twitter for iPhone", "Twitter Web App"][n % 2],
        "label": label,
    }


def make_rows(n_fake: int, n_real: int, n_unlabeled: int = 0) -> List[Dict]:
    rows = []
    n = 0
    for label, count in ((1, n_fake), (0, n_real), (None, n_unlabeled)):
        for _ in range(count):
            rows.append(make_record_dict(n, label))
            n += 1
    return rows


def write_jsonl(rows: List[Dict], path: Path) -> Path:
    with open(path, 'w', encoding='utf-8') as f:
        for row in rows:
            f.write(json.dumps(row) + "\n")
    return path


@pytest.fixture
def records() -> List[NewsRecord]:
    """60 labeled records (30 per class) and 6 unlabeled ones."""
    return [NewsRecord.from_dict(row) for row in make_rows(30, 30, 6)]


@pytest.fixture
def records_map(records) -> Dict[str, NewsRecord]:
    return index_records(records)


@pytest.fixture
def corpus_path(tmp_path) -> Path:
    return write_jsonl(make_rows(30, 30, 6), tmp_path / "corpus.jsonl")


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_flags() -> List[str]:
    """CLI flags that keep a self-training run to a few seconds."""
    return [
        "--k", "2", "--epochs", "1", "--batch-size", "16",
        "--embed-dim", "4", "--hidden-dim", "4", "--dense-dim", "4",
        "--max-seq-len", "8", "--min-frequency", "1",
    ]
