"""Factual-element extraction through a conversational-LLM contract.

The conversation is three messages: a definition of factual elements, an
acknowledgement, and the instruction carrying the case in ``< >`` and each
article in ``<< >>``. Literal angle brackets inside texts are swapped for
their fullwidth forms first so the delimiters stay unambiguous.
"""
from __future__ import annotations

import json
import logging
import os
import re
import urllib.error
import urllib.request
from dataclasses import dataclass
from typing import Iterable, Protocol, Sequence

from .corpus import Article
from .errors import PromptTooLongError, TransportError
from .knowledge import Lexicon

log = logging.getLogger(__name__)

DEFINITION = (
    "Factual elements in a case description refer to: specific facts used to describe and "
    "prove the circumstances of the case, including basic information such as time, location, "
    "characters, and the sequence of events."
)
ACKNOWLEDGEMENT = (
    "That's correct. Factual elements in a case description are indeed the specific details "
    "used to outline and substantiate the circumstances of a case."
)
INSTRUCTION = (
    "Please analyze the case description in < > based on the legal articles in << >>, "
    "and list 5-10 factual elements into []"
)
DEFAULT_MAX_PROMPT_CHARS = 200_000


@dataclass(frozen=True)
class ChatMessage:
    role: str
    content: str

    def __post_init__(self):
        if self.role not in ("user", "assistant"):
            raise ValueError(f"bad role {self.role!r}")
        if not self.content:
            raise ValueError("message content must be non-empty")

    def to_json(self):
        return {"role": self.role, "content": self.content}


@dataclass(frozen=True)
class FactList:
    elements: tuple[str, ...] = ()

    def __len__(self):
        return len(self.elements)

    def __iter__(self):
        return iter(self.elements)


class LlmClient(Protocol):
    def ask(self, messages: Sequence[ChatMessage]) -> str: ...


def escape_brackets(text: str) -> str:
    return text.replace("<", "＜").replace(">", "＞")


def _article_text(a) -> str:
    return a.text if isinstance(a, Article) else str(a)


def build_question(case_text: str, articles: Sequence[Article | str]) -> list[ChatMessage]:
    if not articles:
        raise ValueError("build_question needs at least one article")
    body = [INSTRUCTION, "<" + escape_brackets(case_text) + ">"]
    body += ["<<" + escape_brackets(_article_text(a)) + ">>" for a in articles]
    return [
        ChatMessage("user", DEFINITION),
        ChatMessage("assistant", ACKNOWLEDGEMENT),
        ChatMessage("user", "\n".join(body)),
    ]


def unpack_question(messages: Sequence[ChatMessage]) -> tuple[str, list[str]]:
    """Inverse of :func:`build_question`: recover the (escaped) case and article texts."""
    rest = messages[-1].content[len(INSTRUCTION):]
    case_text = ""
    articles = []
    for m in re.finditer(r"<<([^<>]*)>>|<([^<>]*)>", rest):
        if m.group(1) is not None:
            articles.append(m.group(1))
        else:
            case_text = m.group(2)
    return case_text, articles


_MARKER = re.compile(r"^(?:[-*•·]+|\d+[.)、]|\(\d+\)|（\d+）)\s*")


def _split_elements(chunk: str) -> list[str]:
    out = []
    for piece in re.split(r"[\n;；]", chunk):
        piece = _MARKER.sub("", piece.strip()).strip()
        if piece:
            out.append(piece)
    return out


def parse_fact_list(response: str) -> FactList:
    """Pull the factual elements out of a free-text answer.

    Uses the first ``[...]`` span, split on newlines, semicolons and
    leading list markers. A JSON string list inside the brackets is also
    accepted. Without brackets the whole response is split by line.
    """
    if not response or not response.strip():
        log.info("empty LLM response; no factual elements")
        return FactList()
    start = response.find("[")
    end = response.find("]", start + 1) if start >= 0 else -1
    if start < 0 or end < 0:
        log.warning("no bracketed list in LLM response; falling back to line split")
        return FactList(tuple(_split_elements(response)))
    span = response[start:end + 1]
    try:
        parsed = json.loads(span)
    except json.JSONDecodeError:
        parsed = None
    if isinstance(parsed, list) and all(isinstance(p, str) for p in parsed):
        items = [_MARKER.sub("", p.strip()).strip() for p in parsed]
        return FactList(tuple(p for p in items if p))
    return FactList(tuple(_split_elements(span[1:-1])))


_SENTENCE_END = re.compile(r"[。.!?！？；;]")


def split_sentences(text: str) -> list[str]:
    return [s.strip() for s in _SENTENCE_END.split(text) if s.strip()]


def _bigrams(text: str) -> set[str]:
    return {text[i:i + 2] for i in range(len(text) - 1)}


def mock_extract(case_text: str, articles: Iterable[Article | str], lexicon: Lexicon | None) -> str:
    """Deterministic stand-in for a conversational LLM.

    Lists the case sentences that contain a lexicon term or share any
    two-character substring with an article (at most 10); if none do, the
    first sentence.
    """
    sentences = split_sentences(case_text)
    if not sentences:
        return "[]"
    article_grams: set[str] = set()
    for a in articles:
        article_grams |= _bigrams(_article_text(a))
    picked = []
    for s in sentences:
        hit = lexicon is not None and bool(lexicon.match(s))
        if hit or not _bigrams(s).isdisjoint(article_grams):
            picked.append(s)
            if len(picked) == 10:
                break
    if not picked:
        picked = sentences[:1]
    picked = [s.replace("[", "［").replace("]", "］") for s in picked]
    return "[" + "\n".join(picked) + "]"


class MockExtractorClient:
    """Answers the factual-element question with :func:`mock_extract`."""

    def __init__(self, lexicon: Lexicon | None = None):
        self.lexicon = lexicon

    def ask(self, messages: Sequence[ChatMessage]) -> str:
        case_text, articles = unpack_question(messages)
        return mock_extract(case_text, articles, self.lexicon)


class RemoteHttpClient:
    """POSTs ``{"messages": [...]}`` to an endpoint that answers ``{"content": ...}``."""

    def __init__(self, endpoint: str | None = None, timeout: float = 30.0):
        endpoint = endpoint or os.environ.get("LLM_ENDPOINT")
        if not endpoint:
            raise ValueError("no LLM endpoint configured (llm_endpoint / LLM_ENDPOINT)")
        self.endpoint = endpoint
        self.timeout = timeout

    def ask(self, messages: Sequence[ChatMessage]) -> str:
        payload = json.dumps({"messages": [m.to_json() for m in messages]}).encode("utf-8")
        req = urllib.request.Request(
            self.endpoint, data=payload, headers={"Content-Type": "application/json"}, method="POST"
        )
        try:
            with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                body = resp.read()
        except (urllib.error.URLError, TimeoutError, OSError) as exc:
            raise TransportError(f"request to {self.endpoint} failed: {exc}") from exc
        try:
            content = json.loads(body)["content"]
        except (ValueError, KeyError, TypeError) as exc:
            raise TransportError(f"bad response from {self.endpoint}: {exc}") from exc
        if not isinstance(content, str):
            raise TransportError("response field 'content' is not a string")
        return content


def extract_facts(client: LlmClient, case_text: str, articles: Sequence[Article | str],
                  retries: int = 1, max_prompt_chars: int = DEFAULT_MAX_PROMPT_CHARS) -> FactList:
    messages = build_question(case_text, articles)
    size = sum(len(m.content) for m in messages)
    if size > max_prompt_chars:
        raise PromptTooLongError(f"prompt has {size} characters, cap is {max_prompt_chars}")
    for attempt in range(retries + 1):
        try:
            response = client.ask(messages)
            break
        except TransportError:
            if attempt == retries:
                raise
            log.warning("LLM transport error, retrying (%d/%d)", attempt + 1, retries)
    return parse_fact_list(response)
