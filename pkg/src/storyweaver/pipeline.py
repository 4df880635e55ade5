"""The configured trio of reply generators behind one interface.

Both the offline trainer and the live engine consume subsystems through
this object: topic retrieval and the seq2seq responder are optional (a
missing asset just means fewer candidates), poetry is always present and
total, so there is always at least one proposal.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

from .dialogue import DialogueState, Proposal, Source
from .poetry import RhymeLexicon, Template, propose_poetry
from .seq2seq import Seq2SeqModel, Vocab, propose_context
from .topic import TopicIndex, propose_topic


@dataclass
class CandidateGenerator:
    templates: list[Template]
    lexicon: RhymeLexicon
    glossary: dict[str, str]
    topic_index: TopicIndex | None = None
    model: Seq2SeqModel | None = None
    vocab: Vocab | None = None

    def per_source_calls(
        self, state: DialogueState, poetry_seed: int
    ) -> list[tuple[Source, Callable[[], Proposal | None]]]:
        query = state.turns[-1].text if state.turns else ""
        calls: list[tuple[Source, Callable[[], Proposal | None]]] = []
        if self.topic_index is not None:
            index = self.topic_index
            calls.append((Source.TOPIC, lambda: propose_topic(index, query)))
        if self.model is not None and self.vocab is not None:
            model, vocab = self.model, self.vocab
            calls.append((Source.CONTEXT, lambda: propose_context(model, vocab, state)))
        calls.append(
            (
                Source.POETRY,
                lambda: propose_poetry(
                    self.templates, self.lexicon, self.glossary, query, poetry_seed
                ),
            )
        )
        return calls

    def generate(self, state: DialogueState, poetry_seed: int) -> list[Proposal]:
        """All available proposals; a subsystem that raises contributes none."""
        proposals = []
        for _, call in self.per_source_calls(state, poetry_seed):
            try:
                prop = call()
            except Exception:
                continue
            if prop is not None:
                proposals.append(prop)
        return proposals
