"""Template verse replies built from rhyme lookups and word definitions.

This generator is total: whatever the child types, some template fills.
It anchors on a focus noun from the input, tries rhyme templates first
(funniest), then definition templates, then plain noun templates, and
finally a slotless fallback that must exist in every template file.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path

from .dialogue import Proposal, Source
from .encoding import tokenize

VOWELS = frozenset(
    "AA AE AH AO AW AY EH ER EY IH IY OW OY UH UW".split()
)

_SLOT = re.compile(r"\{([a-z]+)\}")
KNOWN_SLOTS = frozenset({"noun", "rhyme", "definition"})

CERTAINTY_RHYME = 0.9
CERTAINTY_DEFINITION = 0.7
CERTAINTY_PLAIN = 0.5

FALLBACK_NOUN = "story"


class ConfigError(Exception):
    """Malformed poetry asset file."""


def _split_stress(phoneme: str) -> tuple[str, str]:
    """("AE", "1") for "AE1"; stress is "" on consonants/bare vowels."""
    if phoneme and phoneme[-1].isdigit():
        return phoneme[:-1], phoneme[-1]
    return phoneme, ""


def rhyme_tail(phonemes: list[str] | tuple[str, ...]) -> list[str]:
    """Suffix from the last primary-stressed vowel to the end.

    Words with no stress-1 vowel fall back to their last vowel of any
    stress; words with no vowel at all have an empty tail.
    """
    last_primary = -1
    last_vowel = -1
    for i, ph in enumerate(phonemes):
        base, stress = _split_stress(ph)
        if base in VOWELS:
            last_vowel = i
            if stress == "1":
                last_primary = i
    start = last_primary if last_primary >= 0 else last_vowel
    return list(phonemes[start:]) if start >= 0 else []


def _tails_match(tail_a: list[str], tail_b: list[str]) -> bool:
    """Equal tails; stress digits ignored everywhere except the first phoneme."""
    if len(tail_a) != len(tail_b) or not tail_a:
        return False
    if tail_a[0] != tail_b[0]:
        return False
    for pa, pb in zip(tail_a[1:], tail_b[1:]):
        if _split_stress(pa)[0] != _split_stress(pb)[0]:
            return False
    return True


@dataclass(frozen=True)
class RhymeLexicon:
    entries: dict[str, tuple[str, ...]]

    def __contains__(self, word: str) -> bool:
        return word in self.entries

    def __len__(self) -> int:
        return len(self.entries)

    def tail(self, word: str) -> list[str]:
        return rhyme_tail(self.entries[word]) if word in self.entries else []

    def rhymes_for(self, word: str) -> list[str]:
        """All lexicon words rhyming with ``word``, lexicographic order."""
        tail = self.tail(word)
        if not tail:
            return []
        return sorted(
            other
            for other, phonemes in self.entries.items()
            if other != word and _tails_match(tail, rhyme_tail(phonemes))
        )


def rhymes(a: str, b: str, lex: RhymeLexicon) -> bool:
    """Perfect rhyme: distinct lexicon words with matching phoneme tails."""
    if a == b or a not in lex or b not in lex:
        return False
    return _tails_match(lex.tail(a), lex.tail(b))


def load_lexicon(path: str | Path) -> RhymeLexicon:
    """Pronouncing dictionary: "WORD  PH1 PH2 ..." lines, ";;;" comments."""
    entries: dict[str, tuple[str, ...]] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if line.startswith(";;;") or not line.strip():
                continue
            parts = line.split()
            if len(parts) < 2:
                raise ConfigError(f"{path}:{lineno}: entry needs a word and >= 1 phoneme")
            word = parts[0].lower()
            if word not in entries:  # first pronunciation wins
                entries[word] = tuple(parts[1:])
    return RhymeLexicon(entries=entries)


@dataclass(frozen=True)
class Template:
    id: int
    pattern: str
    slots: frozenset[str]


def load_templates(path: str | Path) -> list[Template]:
    """One template per line, '#' comments; validates slot usage.

    At least one template must be fillable unconditionally (no slots, or
    {noun} only) so replies can never fail.
    """
    templates = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            slots = frozenset(_SLOT.findall(line))
            unknown = slots - KNOWN_SLOTS
            if unknown:
                raise ConfigError(f"template {line!r}: unknown slots {sorted(unknown)}")
            leftover = _SLOT.sub("", line)
            if "{" in leftover or "}" in leftover:
                raise ConfigError(f"template {line!r}: stray brace outside a slot")
            if "rhyme" in slots and "noun" not in slots:
                raise ConfigError(f"template {line!r}: {{rhyme}} requires {{noun}}")
            templates.append(Template(id=len(templates), pattern=line, slots=slots))
    if not templates:
        raise ConfigError(f"{path}: no templates")
    if not any(t.slots <= {"noun"} for t in templates):
        raise ConfigError(f"{path}: no fallback template (need one with no slots or {{noun}} only)")
    return templates


def load_glossary(path: str | Path) -> dict[str, str]:
    """word<TAB>definition lines; words lowercased."""
    gloss: dict[str, str] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line.strip() or line.startswith("#"):
                continue
            if "\t" not in line:
                raise ConfigError(f"{path}:{lineno}: expected word<TAB>definition")
            word, definition = line.split("\t", 1)
            word, definition = word.strip().lower(), definition.strip()
            if not word or not definition:
                raise ConfigError(f"{path}:{lineno}: empty word or definition")
            gloss[word] = definition
    return gloss


def _focus_noun(tokens: list[str], lex: RhymeLexicon, gloss: dict[str, str]) -> str:
    noun = ""
    for tok in tokens:
        if tok in gloss:
            noun = tok
    if not noun:
        for tok in tokens:
            if len(tok) >= 3:
                noun = tok
    if not noun:
        return FALLBACK_NOUN
    # naive plural strip: "cats" -> "cat" when only the singular is known
    if noun not in lex and noun not in gloss and noun.endswith("s"):
        stripped = noun[:-1]
        if stripped in lex or stripped in gloss:
            return stripped
    return noun


def propose_poetry(
    templates: list[Template],
    lex: RhymeLexicon,
    gloss: dict[str, str],
    input_text: str,
    rng_seed: int = 0,
) -> Proposal:
    """Fill the first template (in id order) whose slots all resolve.

    The rhyme slot takes one of the focus noun's rhymes: candidates sorted
    lexicographically, the pick rotated deterministically by rng_seed.
    Certainty reflects how much material landed: 0.9 with a rhyme, 0.7
    with a definition, 0.5 otherwise.
    """
    noun = _focus_noun(tokenize(input_text), lex, gloss)
    rhyme_words = lex.rhymes_for(noun)
    definition = gloss.get(noun)

    for template in templates:
        fills: dict[str, str] = {}
        if "noun" in template.slots:
            fills["noun"] = noun
        if "rhyme" in template.slots:
            if not rhyme_words:
                continue
            fills["rhyme"] = rhyme_words[rng_seed % len(rhyme_words)]
        if "definition" in template.slots:
            if definition is None:
                continue
            fills["definition"] = definition
        text = _SLOT.sub(lambda m: fills[m.group(1)], template.pattern)
        if "rhyme" in fills:
            certainty = CERTAINTY_RHYME
        elif "definition" in fills:
            certainty = CERTAINTY_DEFINITION
        else:
            certainty = CERTAINTY_PLAIN
        return Proposal(source=Source.POETRY, text=text, certainty=certainty)

    raise AssertionError("unreachable: load_templates guarantees a fallback template")
