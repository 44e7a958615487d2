"""
Shared tokenizer for keyword, sparse and embedding code paths.
Unicode-aware split on non-alphanumerics, case-folded; numbers such as 91.2
stay one token because model tables are number-heavy.
"""
import re
from typing import Iterable

TOKEN_RE = re.compile(r"\d+(?:[.,]\d+)*|[^\W_]+")


def tokenize(text: str, stopwords: Iterable[str] = ()) -> list[str]:
    tokens = TOKEN_RE.findall(text.casefold())
    if stopwords:
        stop = set(stopwords)
        tokens = [t for t in tokens if t not in stop]
    return tokens


def distinct(tokens: Iterable[str], limit: int | None = None) -> list[str]:
    """First-occurrence order, optionally capped."""
    out = list(dict.fromkeys(tokens))
    return out if limit is None else out[:limit]
