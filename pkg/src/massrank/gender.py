"""Caption gender classification and neutralization from word lists.

Matching is on whole words only, case- and punctuation-insensitive
("Man," matches "man"; "manual" never does).  Neutralization replaces
every gendered word with its mapped neutral alternative, preserving a
leading capital, and is idempotent because replacements are required to
be ungendered themselves.

The shipped default list is a reconstruction of the word categories used
by the usual image-search bias protocol (man/woman, boy/girl, he/she,
his/her, ... mapped to person/child/they/their and so on); the exact
upstream list is not public, so results may differ at the margin.  Ship
your own TSV to override: ``word<TAB>m|f<TAB>replacement`` per line,
``#`` comments allowed.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Mapping

from .errors import InvalidInputError, TableFormatError

_WORD_RE = re.compile(r"\w+", re.UNICODE)

CLASS_MASCULINE = "m"
CLASS_FEMININE = "f"

LABEL_MASCULINE = "masculine"
LABEL_FEMININE = "feminine"
LABEL_BOTH = "both"
LABEL_NEUTRAL = "neutral"

MIXED_POLICIES = ("both", "neither")


@dataclass(frozen=True)
class GenderLexicon:
    """Masculine/feminine word sets plus a neutral replacement map."""

    masculine: frozenset[str]
    feminine: frozenset[str]
    neutral_map: Mapping[str, str]

    def __post_init__(self) -> None:
        overlap = self.masculine & self.feminine
        if overlap:
            raise InvalidInputError(f"words in both gender lists: {sorted(overlap)}")
        gendered = self.masculine | self.feminine
        missing = gendered - set(self.neutral_map)
        if missing:
            raise InvalidInputError(f"gendered words without replacements: {sorted(missing)}")
        for word, replacement in self.neutral_map.items():
            if word not in gendered:
                raise InvalidInputError(f"replacement for non-gendered word {word!r}")
            bad = [t for t in _WORD_RE.findall(replacement.lower()) if t in gendered]
            if bad:
                raise InvalidInputError(
                    f"replacement {replacement!r} for {word!r} contains gendered words {bad}"
                )
        object.__setattr__(self, "_pattern", _compile_pattern(gendered))

    def pattern(self) -> re.Pattern:
        return self._pattern  # type: ignore[attr-defined]


def _compile_pattern(words: frozenset[str]) -> re.Pattern:
    # Longest-first alternation so multiword or prefix-sharing entries
    # cannot shadow each other.
    ordered = sorted(words, key=lambda w: (-len(w), w))
    body = "|".join(re.escape(w) for w in ordered) or r"(?!x)x"
    return re.compile(rf"\b(?:{body})\b", re.IGNORECASE | re.UNICODE)


def classify_caption(caption: str, lex: GenderLexicon, mixed_policy: str = "both") -> str:
    """Classify a caption as masculine, feminine, both, or neutral.

    With ``mixed_policy="neither"`` a caption matching both lists is
    reported as neutral, so it contributes to neither retrieval-bias count.
    """
    if not caption:
        raise InvalidInputError("caption must be non-empty")
    if mixed_policy not in MIXED_POLICIES:
        raise InvalidInputError(f"mixed_policy must be one of {MIXED_POLICIES}")
    tokens = {t.lower() for t in _WORD_RE.findall(caption)}
    has_m = bool(tokens & lex.masculine)
    has_f = bool(tokens & lex.feminine)
    if has_m and has_f:
        return LABEL_BOTH if mixed_policy == "both" else LABEL_NEUTRAL
    if has_m:
        return LABEL_MASCULINE
    if has_f:
        return LABEL_FEMININE
    return LABEL_NEUTRAL


def neutralize_caption(caption: str, lex: GenderLexicon) -> str:
    """Replace every gendered word with its neutral alternative.

    A replaced word that starts with a capital (sentence start, titles)
    keeps a capital first letter.  Idempotent by the lexicon invariant.
    """
    if not caption:
        raise InvalidInputError("caption must be non-empty")

    def substitute(match: re.Match) -> str:
        word = match.group(0)
        replacement = lex.neutral_map[word.lower()]
        if word[:1].isupper():
            return replacement[:1].upper() + replacement[1:]
        return replacement

    return lex.pattern().sub(substitute, caption)


def load_lexicon(path: str | Path) -> GenderLexicon:
    """Load a TSV lexicon: ``word<TAB>m|f<TAB>replacement`` per line."""
    masculine: set[str] = set()
    feminine: set[str] = set()
    neutral_map: dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise TableFormatError(f"{path}:{lineno}: expected 3 tab-separated fields")
            word, cls, replacement = (p.strip() for p in parts)
            if not word or not replacement:
                raise TableFormatError(f"{path}:{lineno}: empty word or replacement")
            word = word.lower()
            if word in neutral_map:
                raise TableFormatError(f"{path}:{lineno}: duplicate word {word!r}")
            if cls == CLASS_MASCULINE:
                masculine.add(word)
            elif cls == CLASS_FEMININE:
                feminine.add(word)
            else:
                raise TableFormatError(f"{path}:{lineno}: class must be 'm' or 'f', got {cls!r}")
            neutral_map[word] = replacement
    try:
        return GenderLexicon(frozenset(masculine), frozenset(feminine), neutral_map)
    except InvalidInputError as exc:
        raise TableFormatError(f"{path}: {exc}") from None


@lru_cache(maxsize=1)
def default_lexicon() -> GenderLexicon:
    """The packaged reconstruction of the retrieval-bias word list."""
    with resources.as_file(resources.files("massrank.data") / "gender_lexicon.tsv") as path:
        return load_lexicon(path)
