"""Question decomposition into retrieval keywords.

The primary path renders the keyword-extraction prompt and parses the model
reply as a flat list. A rule-based fallback keeps linking alive offline or
when the model reply is unusable: it never raises.
"""

from __future__ import annotations

import ast
import json
import logging
from dataclasses import dataclass

from . import prompts
from .embedding import tokenize
from .errors import ProviderTransportError, SchemalinkError

logger = logging.getLogger(__name__)

MIN_TOKEN_LENGTH = 3

# Published stopword list: fixed so the fallback extractor is deterministic
# across installs. Tokens shorter than MIN_TOKEN_LENGTH are dropped anyway.
STOPWORDS = frozenset(
    """
    a about above after again all also am an and any are as at be because been
    before being below between both but by can cannot could did do does doing
    down during each few for from further had has have having he her here hers
    herself him himself his how i if in into is it its itself just me more most
    my myself no nor not now of off on once only or other our ours ourselves
    out over own same she should so some such than that the their theirs them
    themselves then there these they this those through to too under until up
    very was we were what when where which while who whom why will with would
    you your yours yourself yourselves
    """.split()
)


@dataclass(frozen=True)
class KeywordSet:
    """Keywords extracted from one question, plus how they were produced."""

    question: str
    keywords: tuple[str, ...]
    source: str  # "llm" | "fallback"

    def queries(self, append_to_question: bool = False) -> list[str]:
        """Retrieval queries: every keyword plus the question itself.

        With append_to_question=True each keyword is appended to the question
        instead of being issued on its own (ablation variant).
        """
        if append_to_question:
            candidates = [f"{self.question} {kw}" for kw in self.keywords]
        else:
            candidates = list(self.keywords)
        candidates.append(self.question)
        return _dedupe(candidates)


def fallback_keywords(question: str) -> KeywordSet:
    """Deterministic rule-based extractor.

    Lowercases, splits on non-alphanumeric (keeping underscores), drops
    stopwords and short tokens, and emits surviving unigrams in first-occurrence
    order followed by bigrams of originally-adjacent survivors. A question with
    no surviving tokens falls back to the question itself as the sole keyword.
    """
    if not question:
        raise ValueError("question must be non-empty")
    tokens = tokenize(question)
    survives = [t not in STOPWORDS and len(t) >= MIN_TOKEN_LENGTH for t in tokens]
    unigrams = [t for t, ok in zip(tokens, survives) if ok]
    bigrams = [
        f"{tokens[i]} {tokens[i + 1]}"
        for i in range(len(tokens) - 1)
        if survives[i] and survives[i + 1]
    ]
    keywords = _dedupe(unigrams + bigrams)
    if not keywords:
        keywords = [question]
    return KeywordSet(question=question, keywords=tuple(keywords), source="fallback")


def extract_keywords(question: str, llm) -> KeywordSet:
    """Ask a text model for keywords; degrade to fallback_keywords on failure.

    The model reply must contain a flat bracketed list of strings. One parse
    retry is attempted before degrading; provider transport failures degrade
    immediately rather than aborting the caller's pipeline.
    """
    if not question:
        raise ValueError("question must be non-empty")
    prompt = prompts.render(prompts.KEYWORD_EXTRACTION, QUESTION=question)
    messages = [{"role": "user", "content": prompt}]
    for attempt in range(2):
        try:
            reply = llm.complete(messages)
        except (ProviderTransportError, SchemalinkError) as exc:
            logger.warning("keyword model failed (%s); using fallback extractor", exc)
            return fallback_keywords(question)
        parsed = parse_keyword_list(reply)
        if parsed is not None:
            return KeywordSet(
                question=question, keywords=tuple(_dedupe(parsed)), source="llm"
            )
        logger.warning("keyword reply unparseable (attempt %d)", attempt + 1)
    logger.warning("keyword reply unparseable twice; using fallback extractor")
    return fallback_keywords(question)


def parse_keyword_list(text: str) -> list[str] | None:
    """Find the first well-formed flat bracketed list of strings in text.

    Returns None when no such list exists. Accepts JSON and Python-style
    (single-quoted) lists since models emit both.
    """
    start = text.find("[")
    while start != -1:
        end = text.find("]", start)
        while end != -1:
            candidate = text[start : end + 1]
            for loads in (json.loads, ast.literal_eval):
                try:
                    value = loads(candidate)
                except (ValueError, SyntaxError):
                    continue
                if isinstance(value, list) and all(
                    isinstance(item, (str, int, float)) for item in value
                ):
                    return [str(item) for item in value]
            end = text.find("]", end + 1)
        start = text.find("[", start + 1)
    return None


def _dedupe(items: list[str]) -> list[str]:
    """Trim, drop empties, and keep the first occurrence per case-folded form."""
    seen: set[str] = set()
    out: list[str] = []
    for item in items:
        trimmed = item.strip()
        key = trimmed.casefold()
        if not trimmed or key in seen:
            continue
        seen.add(key)
        out.append(trimmed)
    return out
