"""Topic question answering: rank a topic text's sentences against the input.

A topic document (for example an encyclopedia extract about dinosaurs) is
split into sentences and indexed once; each user message is treated as a
query and the best-matching sentence is proposed verbatim, with the BM25
score squashed into a certainty via s/(s+1).
"""

from __future__ import annotations

import math
import os
import re
import tempfile
from dataclasses import dataclass
from pathlib import Path
from urllib.parse import quote

import requests

from .dialogue import Proposal, Source
from .encoding import tokenize

BM25_K1 = 1.2
BM25_B = 0.75

# Terminator followed by whitespace or end of text. Abbreviations like
# "Mr. Smith" split incorrectly; accepted limitation for plain-text topics.
_SENTENCE_END = re.compile(r"(?<=[.!?])(?:\s+|$)")


class EmptyTopic(Exception):
    """No sentence survived filtering; the topic text is unusable."""


class OfflineMiss(Exception):
    """Offline mode and the title is not in the cache."""


class FetchFailed(Exception):
    """Network error or non-2xx response from the topic endpoint."""


@dataclass(frozen=True)
class TopicIndex:
    title: str
    sentences: tuple[str, ...]
    tokenized: tuple[tuple[str, ...], ...]
    doc_freq: dict[str, int]
    sentence_lengths: tuple[int, ...]
    avg_length: float


def build_index(title: str, raw_text: str) -> TopicIndex:
    """Sentence-split the text and precompute BM25 statistics.

    Sentences end at '.', '!' or '?' followed by whitespace or end of text;
    fragments with fewer than 2 tokens are dropped.
    """
    if not raw_text:
        raise EmptyTopic(f"topic {title!r}: empty text")
    sentences = []
    tokenized = []
    for piece in _SENTENCE_END.split(raw_text):
        sent = " ".join(piece.split())
        if not sent:
            continue
        tokens = tokenize(sent)
        if len(tokens) < 2:
            continue
        sentences.append(sent)
        tokenized.append(tuple(tokens))
    if not sentences:
        raise EmptyTopic(f"topic {title!r}: no sentence with >= 2 tokens")

    doc_freq: dict[str, int] = {}
    for tokens in tokenized:
        for tok in set(tokens):
            doc_freq[tok] = doc_freq.get(tok, 0) + 1
    lengths = tuple(len(t) for t in tokenized)
    return TopicIndex(
        title=title,
        sentences=tuple(sentences),
        tokenized=tuple(tokenized),
        doc_freq=doc_freq,
        sentence_lengths=lengths,
        avg_length=sum(lengths) / len(lengths),
    )


def bm25_score(index: TopicIndex, query_tokens: list[str], sentence_i: int) -> float:
    """Okapi BM25 of one sentence against the query tokens (with multiplicity)."""
    ns = len(index.sentences)
    tokens = index.tokenized[sentence_i]
    length = index.sentence_lengths[sentence_i]
    score = 0.0
    for tok in query_tokens:
        df = index.doc_freq.get(tok, 0)
        if df == 0:
            continue
        tf = tokens.count(tok)
        if tf == 0:
            continue
        idf = math.log(1.0 + (ns - df + 0.5) / (df + 0.5))
        denom = tf + BM25_K1 * (1.0 - BM25_B + BM25_B * length / index.avg_length)
        score += idf * tf * (BM25_K1 + 1.0) / denom
    return score


def propose_topic(index: TopicIndex, query: str) -> Proposal | None:
    """Best-scoring sentence as a proposal, or None when nothing matches.

    Ties go to the lowest sentence index; certainty is s/(s+1) of the top
    BM25 score, monotone in s and always < 1.
    """
    query_tokens = tokenize(query)
    best_i, best_s = -1, 0.0
    for i in range(len(index.sentences)):
        s = bm25_score(index, query_tokens, i)
        if s > best_s:
            best_i, best_s = i, s
    if best_i < 0:
        return None
    return Proposal(
        source=Source.TOPIC,
        text=index.sentences[best_i],
        certainty=best_s / (best_s + 1.0),
    )


def cache_path(cache_dir: str | Path, title: str) -> Path:
    return Path(cache_dir) / (quote(title, safe="") + ".txt")


def fetch_topic(
    title: str,
    cache_dir: str | Path,
    offline: bool = False,
    base_url: str = "",
    timeout: float = 10.0,
) -> str:
    """Return the topic page text, cache-first.

    Live fetches GET ``base_url + url-encoded title`` (the endpoint must
    yield plain text) and land in the cache via write-to-temp-then-rename,
    so concurrent fetches of the same title cannot leave a torn file.
    """
    if not title:
        raise ValueError("title must be non-empty")
    path = cache_path(cache_dir, title)
    if path.exists():
        return path.read_text(encoding="utf-8")
    if offline:
        raise OfflineMiss(f"offline and {title!r} not cached")
    if not base_url:
        raise FetchFailed(f"no topic base_url configured, cannot fetch {title!r}")
    url = base_url + quote(title, safe="")
    try:
        resp = requests.get(url, timeout=timeout)
    except requests.RequestException as exc:
        raise FetchFailed(f"GET {url} failed: {exc}") from exc
    if not 200 <= resp.status_code < 300:
        raise FetchFailed(f"GET {url} returned {resp.status_code}")
    body = resp.text
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(body)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return body


def load_topic(
    title: str,
    cache_dir: str | Path,
    offline: bool,
    base_url: str,
    bundled_dir: str | Path | None = None,
) -> TopicIndex:
    """fetch_topic with fallback to a bundled topic file, then build_index."""
    try:
        raw = fetch_topic(title, cache_dir, offline=offline, base_url=base_url)
    except (OfflineMiss, FetchFailed):
        if bundled_dir is None:
            raise
        bundled = cache_path(bundled_dir, title)
        if not bundled.exists():
            raise
        raw = bundled.read_text(encoding="utf-8")
    return build_index(title, raw)
