"""Reply arbitration: Q-learning over bucketed (state, candidate) pairs,
fused with hand-coded lexical rules and subsystem certainty.

Each decision scores every surviving candidate as

    score = Q(state_bucket, action_bucket) + boost + lambda_conf * certainty

where boosts come from BOOST rules matched against the user's input and
BLOCK rules have already removed candidates echoing forbidden phrases.
Training replays corpora: the reward for picking a candidate is its cosine
similarity to the utterance that actually followed, and transitions are
teacher-forced from the corpus text.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Callable, Protocol

from .dialogue import DialogueState, Proposal, Source, from_utterances
from .encoding import (
    ProjectionMatrix,
    cosine,
    encode_sentence,
    encode_state,
    project_bucket,
    tokenize,
)


class CorpusEmpty(Exception):
    """No dialogue with at least two utterances."""


class SubsystemUnavailable(Exception):
    """A subsystem raised on every eligible turn."""


class RuleKind(Enum):
    BLOCK = "block"
    BOOST = "boost"


@dataclass(frozen=True)
class LexicalRule:
    """BLOCK drops candidates containing the pattern; BOOST adds weight to
    one subsystem's candidates when the user input contains the pattern.

    Patterns match as contiguous token subsequences, case-insensitively
    (both sides go through the shared tokenizer).
    """

    kind: RuleKind
    pattern: tuple[str, ...]
    target: Source | None = None
    weight: float = 0.0

    def __post_init__(self) -> None:
        if not self.pattern:
            raise ValueError("rule pattern must be non-empty")
        if self.kind is RuleKind.BOOST:
            if self.target is None or self.weight <= 0:
                raise ValueError("BOOST rules need a target and a positive weight")
        elif self.target is not None or self.weight:
            raise ValueError("BLOCK rules take no target or weight")


@dataclass(frozen=True)
class Hyperparams:
    alpha: float = 0.1
    gamma: float = 0.9
    epsilon_start: float = 0.2
    epsilon_end: float = 0.01
    lambda_conf: float = 0.3

    def __post_init__(self) -> None:
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError("alpha must be in (0,1]")
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError("gamma must be in [0,1)")
        if self.lambda_conf < 0.0:
            raise ValueError("lambda_conf must be >= 0")
        for name in ("epsilon_start", "epsilon_end"):
            eps = getattr(self, name)
            if not 0.0 <= eps <= 1.0:
                raise ValueError(f"{name} must be in [0,1]")


@dataclass
class QTable:
    """Sparse map (state_bucket, action_bucket) -> Q; missing entries are 0."""

    entries: dict[tuple[int, int], float] = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def q(self, s: int, a: int) -> float:
        return self.entries.get((s, a), 0.0)

    def set(self, s: int, a: int, value: float) -> None:
        self.entries[(s, a)] = value


def save_qtable(table: QTable, path: str | Path) -> None:
    """Entries sorted by (s,a) so identical tables are byte-identical files."""
    payload = {
        "meta": table.meta,
        "entries": [[s, a, q] for (s, a), q in sorted(table.entries.items())],
    }
    Path(path).write_text(
        json.dumps(payload, ensure_ascii=False, sort_keys=True), encoding="utf-8"
    )


def load_qtable(path: str | Path) -> QTable:
    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    return QTable(
        entries={(int(s), int(a)): float(q) for s, a, q in payload["entries"]},
        meta=payload.get("meta", {}),
    )


def reward(candidate_text: str, next_utterance: str) -> float:
    """Cosine similarity between the pick and the utterance that followed."""
    return cosine(
        encode_sentence(tokenize(candidate_text)),
        encode_sentence(tokenize(next_utterance)),
    )


def q_update(
    table: QTable,
    s: int,
    a: int,
    r: float,
    s_next: int,
    candidate_buckets_next: list[int],
    hp: Hyperparams,
) -> float:
    """Standard one-step update toward r + gamma * max Q(s', a').

    The max over an empty next-candidate list is 0, which makes terminal
    transitions converge geometrically to the raw reward.
    """
    best_next = max((table.q(s_next, a2) for a2 in candidate_buckets_next), default=0.0)
    q_new = table.q(s, a) + hp.alpha * (r + hp.gamma * best_next - table.q(s, a))
    table.set(s, a, q_new)
    return q_new


def _contains_pattern(tokens: list[str], pattern: tuple[str, ...]) -> bool:
    n = len(pattern)
    return any(tuple(tokens[i : i + n]) == pattern for i in range(len(tokens) - n + 1))


def apply_rules(
    rules: list[LexicalRule], user_input: str, proposals: list[Proposal]
) -> list[tuple[Proposal, float]]:
    """BLOCK against candidate text, BOOST against the user input.

    Returns surviving proposals with their additive boost (0 by default);
    a proposal matching any BLOCK pattern is gone regardless of boosts.
    """
    input_tokens = tokenize(user_input)
    active_boosts: dict[Source, float] = {}
    for rule in rules:
        if rule.kind is RuleKind.BOOST and _contains_pattern(input_tokens, rule.pattern):
            assert rule.target is not None
            active_boosts[rule.target] = active_boosts.get(rule.target, 0.0) + rule.weight

    out = []
    for prop in proposals:
        cand_tokens = tokenize(prop.text)
        if any(
            rule.kind is RuleKind.BLOCK and _contains_pattern(cand_tokens, rule.pattern)
            for rule in rules
        ):
            continue
        out.append((prop, active_boosts.get(prop.source, 0.0)))
    return out


_PRIORITY = {Source.POETRY: 0, Source.TOPIC: 1, Source.CONTEXT: 2}

DEFAULT_FALLBACK = "Let's get back to our story!"


@dataclass(frozen=True)
class CandidateScore:
    proposal: Proposal
    q: float
    boost: float
    total: float
    chosen: bool = False


def _tie_key(scored: tuple[Proposal, float, float, float]):
    prop, _, _, total = scored
    return (-total, _PRIORITY[prop.source], len(prop.text), prop.text)


def bucket_text(text: str, proj: ProjectionMatrix) -> int:
    return project_bucket(encode_sentence(tokenize(text), proj.dim), proj)


def select(
    state: DialogueState,
    proposals: list[Proposal],
    table: QTable,
    rules: list[LexicalRule],
    hp: Hyperparams,
    proj: ProjectionMatrix,
    fallback_text: str = DEFAULT_FALLBACK,
) -> tuple[Proposal, list[CandidateScore]]:
    """Pick the best surviving candidate; total by construction.

    Ties break POETRY > TOPIC > CONTEXT, then shorter text, then
    lexicographic. When everything was blocked (or no subsystem produced
    anything) the configured fallback becomes a synthetic POETRY reply.
    The returned breakdown lists every scored candidate, exactly one of
    them flagged chosen.
    """
    user_input = state.turns[-1].text if state.turns else ""
    survivors = apply_rules(rules, user_input, proposals)
    if not survivors:
        fallback = Proposal(source=Source.POETRY, text=fallback_text, certainty=0.0)
        return fallback, [
            CandidateScore(proposal=fallback, q=0.0, boost=0.0, total=0.0, chosen=True)
        ]

    s_bucket = project_bucket(encode_state(state, proj.dim), proj)
    scored = []
    for prop, boost in survivors:
        q = table.q(s_bucket, bucket_text(prop.text, proj))
        total = q + boost + hp.lambda_conf * prop.certainty
        scored.append((prop, q, boost, total))
    winner = min(scored, key=_tie_key)[0]
    breakdown = [
        CandidateScore(proposal=p, q=q, boost=b, total=t, chosen=p is winner)
        for p, q, b, t in scored
    ]
    return winner, breakdown


# --- offline training --------------------------------------------------------


class CandidateSource(Protocol):
    """The configured trio of subsystems.

    ``per_source_calls`` returns one zero-argument callable per subsystem;
    each yields a Proposal or None. Keeping the calls separate lets the
    trainer attribute failures to the subsystem that raised.
    """

    def per_source_calls(
        self, state: DialogueState, poetry_seed: int
    ) -> list[tuple[Source, Callable[[], Proposal | None]]]: ...


def _epsilon_at(i: int, total: int, hp: Hyperparams) -> float:
    if total <= 1:
        return hp.epsilon_end
    frac = i / (total - 1)
    return hp.epsilon_start + (hp.epsilon_end - hp.epsilon_start) * frac


def _exploit_pick(
    scored: list[tuple[Proposal, float, float, float]]
) -> Proposal:
    return min(scored, key=_tie_key)[0]


def _score_survivors(
    survivors: list[tuple[Proposal, float]],
    s_bucket: int,
    table: QTable,
    hp: Hyperparams,
    proj: ProjectionMatrix,
) -> list[tuple[Proposal, float, float, float]]:
    scored = []
    for prop, boost in survivors:
        q = table.q(s_bucket, bucket_text(prop.text, proj))
        scored.append((prop, q, boost, q + boost + hp.lambda_conf * prop.certainty))
    return scored


@dataclass
class _SourceStats:
    attempts: int = 0
    errors: int = 0


def _dialogue_proposals(
    dialogue: list[str],
    gen: CandidateSource,
    rules: list[LexicalRule],
    seed: int,
    context_window: int,
    stats: dict[Source, _SourceStats],
) -> list[list[tuple[Proposal, float]]]:
    """Blocked-filtered proposals for every position of one dialogue.

    BOOST rules stay out of training and evaluation; only BLOCK filtering
    applies, so boosts here are always 0.
    """
    block_rules = [r for r in rules if r.kind is RuleKind.BLOCK]
    out = []
    for t in range(len(dialogue)):
        state = from_utterances(dialogue[: t + 1], context_window=context_window)
        proposals = []
        for source, propose in gen.per_source_calls(state, seed + t):
            st = stats.setdefault(source, _SourceStats())
            st.attempts += 1
            try:
                prop = propose()
            except Exception:
                st.errors += 1
                continue
            if prop is not None:
                proposals.append(prop)
        out.append(apply_rules(block_rules, dialogue[t], proposals))
    return out


def train_selector(
    corpus: list[list[str]],
    gen: CandidateSource,
    hp: Hyperparams,
    proj: ProjectionMatrix,
    seed: int,
    rules: list[LexicalRule] | None = None,
    context_window: int = 4,
    progress: Callable[[int, float], None] | None = None,
    progress_every: int = 100,
) -> QTable:
    """Replay the corpus with epsilon-greedy picks and one-step updates.

    The next state is teacher-forced from the corpus (the training text,
    not the picked candidate, defines the trajectory); next-step candidate
    buckets come from the subsystems' proposals at the following position.
    """
    rules = list(rules or [])
    eligible = [d for d in corpus if len(d) >= 2]
    total_turns = sum(len(d) - 1 for d in eligible)
    if total_turns == 0:
        raise CorpusEmpty("corpus: no dialogues")

    rng = random.Random(seed)
    table = QTable(
        meta={
            "seed": seed,
            "D": proj.dim,
            "k": proj.bits,
            "alpha": hp.alpha,
            "gamma": hp.gamma,
            "trained_turns": 0,
        }
    )
    stats: dict[Source, _SourceStats] = {}
    turn_i = 0
    reward_sum = 0.0
    for dialogue in eligible:
        survivors_at = _dialogue_proposals(
            dialogue, gen, rules, seed, context_window, stats
        )
        for t in range(len(dialogue) - 1):
            eps = _epsilon_at(turn_i, total_turns, hp)
            survivors = survivors_at[t]
            turn_i += 1
            if not survivors:
                continue
            state = from_utterances(dialogue[: t + 1], context_window=context_window)
            s_bucket = project_bucket(encode_state(state, proj.dim), proj)
            scored = _score_survivors(survivors, s_bucket, table, hp, proj)
            if rng.random() < eps:
                pick = survivors[rng.randrange(len(survivors))][0]
            else:
                pick = _exploit_pick(scored)
            r = reward(pick.text, dialogue[t + 1])
            reward_sum += r
            next_state = from_utterances(dialogue[: t + 2], context_window=context_window)
            s_next = project_bucket(encode_state(next_state, proj.dim), proj)
            next_buckets = [bucket_text(p.text, proj) for p, _ in survivors_at[t + 1]]
            q_update(table, s_bucket, bucket_text(pick.text, proj), r, s_next, next_buckets, hp)
            table.meta["trained_turns"] += 1
            if progress and turn_i % progress_every == 0:
                progress(turn_i, reward_sum / turn_i)

    for source, st in stats.items():
        if st.attempts > 0 and st.errors == st.attempts:
            raise SubsystemUnavailable(f"{source.value} errored on every turn")
    if progress and turn_i % progress_every != 0:
        progress(turn_i, reward_sum / max(turn_i, 1))
    return table


def evaluate_policy(
    corpus: list[list[str]],
    table: QTable,
    gen: CandidateSource,
    hp: Hyperparams,
    proj: ProjectionMatrix,
    rules: list[LexicalRule] | None = None,
    context_window: int = 4,
) -> float:
    """Mean reward of the greedy (epsilon=0) policy over all eligible turns.

    Turns where every candidate was blocked contribute nothing (no decision
    was made there).
    """
    rules = list(rules or [])
    eligible = [d for d in corpus if len(d) >= 2]
    if not eligible:
        raise CorpusEmpty("corpus: no dialogues")
    stats: dict[Source, _SourceStats] = {}
    rewards = []
    for dialogue in eligible:
        survivors_at = _dialogue_proposals(dialogue, gen, rules, 0, context_window, stats)
        for t in range(len(dialogue) - 1):
            survivors = survivors_at[t]
            if not survivors:
                continue
            state = from_utterances(dialogue[: t + 1], context_window=context_window)
            s_bucket = project_bucket(encode_state(state, proj.dim), proj)
            pick = _exploit_pick(_score_survivors(survivors, s_bucket, table, hp, proj))
            rewards.append(reward(pick.text, dialogue[t + 1]))
    if not rewards:
        raise CorpusEmpty("corpus: no scorable turns")
    return sum(rewards) / len(rewards)


# --- file formats -------------------------------------------------------------


def load_corpus(path: str | Path) -> list[list[str]]:
    """One utterance per line; blank lines separate dialogues; '#' comments."""
    dialogues: list[list[str]] = []
    current: list[str] = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line.startswith("#"):
                continue
            if not line:
                if current:
                    dialogues.append(current)
                    current = []
                continue
            current.append(line)
    if current:
        dialogues.append(current)
    return dialogues


def parse_rules(lines: list[str], origin: str = "<rules>") -> list[LexicalRule]:
    """Lines "block: w1 w2 ..." or "boost: <TOPIC|CONTEXT|POETRY> <w>: w1 w2 ..."."""
    rules = []
    for lineno, raw in enumerate(lines, 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        kind, _, rest = line.partition(":")
        kind = kind.strip().lower()
        if kind == "block":
            pattern = tuple(tokenize(rest))
            if not pattern:
                raise ValueError(f"{origin}:{lineno}: empty block pattern")
            rules.append(LexicalRule(kind=RuleKind.BLOCK, pattern=pattern))
        elif kind == "boost":
            head, sep, words = rest.partition(":")
            if not sep:
                raise ValueError(f"{origin}:{lineno}: boost needs '<target> <weight>: words'")
            parts = head.split()
            if len(parts) != 2:
                raise ValueError(f"{origin}:{lineno}: boost head must be '<target> <weight>'")
            try:
                target = Source[parts[0].upper()]
            except KeyError:
                raise ValueError(f"{origin}:{lineno}: unknown subsystem {parts[0]!r}") from None
            weight = float(parts[1])
            pattern = tuple(tokenize(words))
            if not pattern:
                raise ValueError(f"{origin}:{lineno}: empty boost pattern")
            rules.append(
                LexicalRule(kind=RuleKind.BOOST, pattern=pattern, target=target, weight=weight)
            )
        else:
            raise ValueError(f"{origin}:{lineno}: expected 'block:' or 'boost:'")
    return rules


def load_rules(path: str | Path) -> list[LexicalRule]:
    with open(path, encoding="utf-8") as fh:
        return parse_rules(fh.readlines(), origin=str(path))
