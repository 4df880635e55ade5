"""Deterministic text encoding: tokens, hashed sentence vectors, buckets.

The selector needs sentence vectors that are cheap, reproducible across
platforms, and discretizable into a finite table. Sentences become hashed
bags of unigrams and adjacent bigrams (FNV-1a 64-bit, signed by the hash's
top bit), L2-normalized; vectors are bucketed by the sign pattern of seeded
random projections, so a bucket id is an integer in [0, 2^k).
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field

import numpy as np

from .dialogue import DialogueState, window

DEFAULT_DIM = 64
DEFAULT_BITS = 12

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_U64 = 0xFFFFFFFFFFFFFFFF


def fnv1a64(data: str) -> int:
    """FNV-1a over the UTF-8 bytes; 64-bit wraparound."""
    h = _FNV_OFFSET
    for byte in data.encode("utf-8"):
        h ^= byte
        h = (h * _FNV_PRIME) & _U64
    return h


def tokenize(text: str) -> list[str]:
    """Lowercase, split on whitespace, strip non-alphanumeric edges.

    Interior punctuation survives ("massy's" keeps its apostrophe); pieces
    that strip to nothing are dropped.
    """
    out = []
    for piece in text.lower().split():
        start, end = 0, len(piece)
        while start < end and not piece[start].isalnum():
            start += 1
        while end > start and not piece[end - 1].isalnum():
            end -= 1
        if end > start:
            out.append(piece[start:end])
    return out


def _features(tokens: list[str]) -> list[str]:
    feats = list(tokens)
    feats.extend(f"{a} {b}" for a, b in zip(tokens, tokens[1:]))
    return feats


def encode_sentence(tokens: list[str], dim: int = DEFAULT_DIM) -> np.ndarray:
    """Signed hashed bag of unigrams + adjacent bigrams, L2-normalized.

    Empty token lists map to the all-zero vector; any non-empty list yields
    a unit vector (an odd number of +-1 contributions can never cancel to
    zero exactly).
    """
    if dim < 1:
        raise ValueError("dim must be >= 1")
    v = np.zeros(dim, dtype=np.float64)
    for feat in _features(tokens):
        h = fnv1a64(feat)
        sign = 1.0 if (h >> 63) == 0 else -1.0
        v[h % dim] += sign
    return _l2_normalize(v)


def _l2_normalize(v: np.ndarray) -> np.ndarray:
    norm = float(np.linalg.norm(v))
    return v / norm if norm > 0.0 else v


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    """dot(a,b)/(|a||b|); 0.0 when either vector is all-zero."""
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    na, nb = float(np.linalg.norm(a)), float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(np.dot(a, b) / (na * nb))


def encode_state(state: DialogueState, dim: int = DEFAULT_DIM) -> np.ndarray:
    """Mean of the windowed turns' sentence vectors, re-normalized.

    Empty window gives the zero vector. The window spans both speakers'
    turns; what was said matters, not who said it.
    """
    turns = window(state)
    if not turns:
        return np.zeros(dim, dtype=np.float64)
    acc = np.zeros(dim, dtype=np.float64)
    for turn in turns:
        acc += encode_sentence(tokenize(turn.text), dim)
    return _l2_normalize(acc / len(turns))


@dataclass(frozen=True)
class ProjectionMatrix:
    """k seeded hyperplanes over dimension D; fully determined by (seed,k,D).

    Entries are uniform in [-1,1) from the stdlib Mersenne Twister, whose
    random() stream is guaranteed stable across Python versions and
    platforms given the same seed.
    """

    seed: int
    bits: int = DEFAULT_BITS
    dim: int = DEFAULT_DIM
    rows: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        if self.bits < 1 or self.dim < 1:
            raise ValueError("bits and dim must be >= 1")
        rng = random.Random(self.seed)
        rows = np.array(
            [[2.0 * rng.random() - 1.0 for _ in range(self.dim)] for _ in range(self.bits)],
            dtype=np.float64,
        )
        object.__setattr__(self, "rows", rows)

    @property
    def n_buckets(self) -> int:
        return 1 << self.bits


def project_bucket(v: np.ndarray, proj: ProjectionMatrix) -> int:
    """Bucket id whose bit i is set iff dot(rows[i], v) >= 0.

    Sign pattern is invariant under positive scaling of v; the zero vector
    lands deterministically in bucket 2^k - 1 (every dot is 0 >= 0).
    """
    if v.shape != (proj.dim,):
        raise ValueError(f"vector has shape {v.shape}, projection expects ({proj.dim},)")
    bucket = 0
    dots = proj.rows @ v
    for i in range(proj.bits):
        if dots[i] >= 0.0:
            bucket |= 1 << i
    return bucket
