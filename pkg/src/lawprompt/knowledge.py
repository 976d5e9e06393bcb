"""Knowledge-snippet matching against a legal lexicon.

Terms are compiled into an Aho-Corasick automaton over characters, so a
case is scanned once regardless of lexicon size. Matching has plain
substring semantics: no word boundaries, overlapping terms all count.
"""
from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

from .corpus import Vocab

log = logging.getLogger(__name__)


class _Automaton:
    """Goto/failure automaton. Node 0 is the root."""

    def __init__(self, terms: Sequence[str]):
        self.goto: list[dict[str, int]] = [{}]
        self.fail: list[int] = [0]
        # indices into ``terms`` ending at each node, including via failure links
        self.out: list[tuple[int, ...]] = [()]
        own: list[list[int]] = [[]]
        for ti, term in enumerate(terms):
            node = 0
            for ch in term:
                nxt = self.goto[node].get(ch)
                if nxt is None:
                    nxt = len(self.goto)
                    self.goto[node][ch] = nxt
                    self.goto.append({})
                    self.fail.append(0)
                    own.append([])
                node = nxt
            own[node].append(ti)
        self.out = [tuple(o) for o in own]

        queue = deque(self.goto[0].values())
        while queue:
            node = queue.popleft()
            for ch, child in self.goto[node].items():
                queue.append(child)
                f = self.fail[node]
                while f and ch not in self.goto[f]:
                    f = self.fail[f]
                target = self.goto[f].get(ch, 0)
                self.fail[child] = target if target != child else 0
                self.out[child] = self.out[child] + self.out[self.fail[child]]

    def iter_matches(self, text: str):
        """Yield ``(end_index_exclusive, term_index)`` for every occurrence."""
        goto, fail, out = self.goto, self.fail, self.out
        node = 0
        for i, ch in enumerate(text):
            while node and ch not in goto[node]:
                node = fail[node]
            node = goto[node].get(ch, 0)
            for ti in out[node]:
                yield i + 1, ti


@dataclass(frozen=True)
class SnippetMatch:
    term: str
    first_offset: int


class Lexicon:
    """An immutable set of distinct, non-empty terms with a compiled matcher."""

    def __init__(self, terms: Iterable[str]):
        cleaned = [t for t in dict.fromkeys(terms) if t]
        self.terms: tuple[str, ...] = tuple(cleaned)
        self._termset = frozenset(self.terms)
        self._automaton = _Automaton(self.terms)

    def __len__(self):
        return len(self.terms)

    def __contains__(self, term):
        return term in self._termset

    def __repr__(self):
        return f"Lexicon({len(self.terms)} terms)"

    def match(self, text: str) -> list[SnippetMatch]:
        return match_snippets(self, text)


def load_lexicon(path) -> Lexicon:
    """Read one term per line; an optional TAB-separated frequency is ignored."""
    terms = []
    with Path(path).open(encoding="utf-8") as fh:
        for line in fh:
            term = line.rstrip("\r\n").split("\t", 1)[0].strip()
            if term:
                terms.append(term)
    lex = Lexicon(terms)
    if not len(lex):
        log.warning("lexicon %s is empty", path)
    return lex


def save_lexicon(lexicon: Lexicon, path, counts: dict[str, int] | None = None) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for term in lexicon.terms:
            if counts is not None:
                fh.write(f"{term}\t{counts.get(term, 0)}\n")
            else:
                fh.write(term + "\n")


def match_snippets(lexicon: Lexicon, text: str) -> list[SnippetMatch]:
    """Each matched term once, at its first occurrence.

    Ordered by offset; at equal offsets the longer term comes first.
    """
    first: dict[int, int] = {}
    terms = lexicon.terms
    for end, ti in lexicon._automaton.iter_matches(text):
        if ti not in first:
            # the first end position of a fixed-length term is also its first start
            first[ti] = end - len(terms[ti])
    matches = [SnippetMatch(terms[ti], off) for ti, off in first.items()]
    matches.sort(key=lambda m: (m.first_offset, -len(m.term), m.term))
    return matches


def snippets_to_tokens(matches: Sequence[SnippetMatch], vocab: Vocab, separator: str = ",") -> list[int]:
    if not matches:
        return []
    return vocab.encode(separator.join(m.term for m in matches))
