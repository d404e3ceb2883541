"""Tokenisation, the shipped stopword list, and deterministic keyword extraction."""

from __future__ import annotations

import re
from typing import Iterable

# Word characters joined by inner hyphens or apostrophes: "t-shirt", "user's".
TOKEN_RE = re.compile(r"[a-z0-9]+(?:['\-][a-z0-9]+)*")

STOPWORDS: frozenset[str] = frozenset(
    """
    a an the and or but if of to in on at by for with from as into
    is are was were be been do does did has have had
    i me my we our you your he his she her it its they their
    this that these those there here what which who when where how
    not no so some any all
    """.split()
)


def tokenize(text: str) -> list[str]:
    return TOKEN_RE.findall(text.lower())


def content_runs(text: str) -> list[list[str]]:
    """Maximal runs of consecutive non-stopword tokens.

    Sentence punctuation (anything other than whitespace between two tokens)
    also ends a run.
    """
    runs: list[list[str]] = []
    current: list[str] = []
    last_end = 0
    lowered = text.lower()
    for match in TOKEN_RE.finditer(lowered):
        gap = lowered[last_end : match.start()]
        last_end = match.end()
        token = match.group()
        if current and gap.strip():
            runs.append(current)
            current = []
        if token in STOPWORDS:
            if current:
                runs.append(current)
                current = []
            continue
        current.append(token)
    if current:
        runs.append(current)
    return runs


def extract_keywords(texts: Iterable[str], max_phrase_words: int = 3) -> list[str]:
    """Content words plus short phrases, lowercased and deduplicated in order.

    Runs of two to ``max_phrase_words`` words are kept whole ("new engineer",
    "yellow t-shirt"); longer runs contribute their adjacent word pairs.
    """
    seen: dict[str, None] = {}
    for text in texts:
        for run in content_runs(text):
            if 2 <= len(run) <= max_phrase_words:
                seen.setdefault(" ".join(run), None)
            elif len(run) > max_phrase_words:
                for a, b in zip(run, run[1:]):
                    seen.setdefault(f"{a} {b}", None)
            for word in run:
                seen.setdefault(word, None)
    return list(seen)
