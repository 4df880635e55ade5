"""Shared dialogue domain types: turns, session state, and candidate replies.

Everything here is immutable after construction; mutation means building a
new value (``DialogueState.append`` returns a fresh state), which keeps the
types safe to share across concurrent readers.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import IO, Iterable


class Speaker(Enum):
    USER = "user"
    SYSTEM = "system"


class Source(Enum):
    """Which reply generator produced a candidate."""

    TOPIC = "topic"
    CONTEXT = "context"
    POETRY = "poetry"


@dataclass(frozen=True)
class Turn:
    """One utterance in a session; ``index`` is the 0-based position."""

    speaker: Speaker
    text: str
    index: int

    def __post_init__(self) -> None:
        if not self.text.strip():
            raise ValueError("turn text must be non-empty after trimming")
        if self.index < 0:
            raise ValueError("turn index must be >= 0")


@dataclass(frozen=True)
class DialogueState:
    """Ordered turn history plus the context window size N.

    Turn indices run 0,1,2,... with no gaps. Speakers may repeat (corpus
    transcripts are not guaranteed to alternate); live chat sessions do
    alternate, which the service layer enforces.
    """

    turns: tuple[Turn, ...] = ()
    context_window: int = 4

    def __post_init__(self) -> None:
        if self.context_window < 1:
            raise ValueError("context_window must be >= 1")
        for i, turn in enumerate(self.turns):
            if turn.index != i:
                raise ValueError(
                    f"turn indices must increase by 1 from 0, got {turn.index} at position {i}"
                )

    def append(self, speaker: Speaker, text: str) -> "DialogueState":
        """Return a new state with one more turn; prior turns are shared."""
        turn = Turn(speaker=speaker, text=text, index=len(self.turns))
        return replace(self, turns=self.turns + (turn,))


def window(state: DialogueState) -> list[Turn]:
    """Last min(N, len(turns)) turns in original order."""
    return list(state.turns[-state.context_window:]) if state.turns else []


def from_utterances(
    utterances: Iterable[str],
    context_window: int = 4,
    first: Speaker = Speaker.USER,
) -> DialogueState:
    """Build a state from bare utterances, assigning alternating speakers.

    Corpus files carry no speaker labels; alternation starting from ``first``
    is a convention only (nothing downstream reads the speaker of corpus
    turns).
    """
    state = DialogueState(context_window=context_window)
    speaker = first
    for text in utterances:
        state = state.append(speaker, text)
        speaker = Speaker.SYSTEM if speaker is Speaker.USER else Speaker.USER
    return state


@dataclass(frozen=True)
class Proposal:
    """A candidate reply from one subsystem with its certainty in [0,1]."""

    source: Source
    text: str
    certainty: float

    def __post_init__(self) -> None:
        if not self.text:
            raise ValueError("proposal text must be non-empty")
        if not 0.0 <= self.certainty <= 1.0:
            raise ValueError(f"certainty must be in [0,1], got {self.certainty}")


# --- transcript log ---------------------------------------------------------
#
# Append-only file, one JSON object per line:
#   {"index": int, "speaker": "user"|"system", "text": str, "ts": ISO-8601}

def transcript_record(turn: Turn, ts: str) -> str:
    return json.dumps(
        {"index": turn.index, "speaker": turn.speaker.value, "text": turn.text, "ts": ts},
        ensure_ascii=False,
    )


def write_transcript_line(fh: IO[str], turn: Turn, ts: str) -> None:
    fh.write(transcript_record(turn, ts) + "\n")
    fh.flush()


def read_transcript(lines: Iterable[str], context_window: int = 4) -> DialogueState:
    """Rebuild a DialogueState from transcript log lines."""
    turns = []
    for line in lines:
        line = line.strip()
        if not line:
            continue
        rec = json.loads(line)
        turns.append(Turn(speaker=Speaker(rec["speaker"]), text=rec["text"], index=rec["index"]))
    return DialogueState(turns=tuple(turns), context_window=context_window)
