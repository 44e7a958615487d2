"""
Sparse retrieval over table metadata.
TermIndex keeps explicit postings for inspection and persistence; scoring is
delegated to rank-bm25's Okapi implementation built from the same tokens.
"""
import logging
import pickle
from collections import Counter
from pathlib import Path

import numpy as np
from rank_bm25 import BM25Okapi

from tokenizer import distinct, tokenize

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1


class TermIndex:
    def __init__(self, k1: float = 0.9, b: float = 0.4, stopwords: tuple[str, ...] = ()):
        self.k1 = k1
        self.b = b
        self.stopwords = tuple(stopwords)
        self.doc_ids: list[str] = []
        self.doc_tokens: list[list[str]] = []
        self.postings: dict[str, list[tuple[str, int]]] = {}
        self.bm25: BM25Okapi | None = None

    @property
    def doc_lengths(self) -> dict[str, int]:
        return {d: len(toks) for d, toks in zip(self.doc_ids, self.doc_tokens)}

    @property
    def avg_doc_length(self) -> float:
        return float(np.mean([len(t) for t in self.doc_tokens])) if self.doc_tokens else 0.0

    def build(self, documents: dict[str, str]) -> "TermIndex":
        """Index table_id -> text; documents without tokens are left out."""
        self.doc_ids, self.doc_tokens = [], []
        skipped = 0
        for table_id in sorted(documents):
            tokens = tokenize(documents[table_id], self.stopwords)
            if not tokens:
                skipped += 1
                continue
            self.doc_ids.append(table_id)
            self.doc_tokens.append(tokens)
        if skipped:
            logger.info("term index: %d documents had no tokens", skipped)
        self._rebuild_index()
        return self

    def _rebuild_index(self):
        postings: dict[str, list[tuple[str, int]]] = {}
        for table_id, tokens in zip(self.doc_ids, self.doc_tokens):
            for term, tf in sorted(Counter(tokens).items()):
                postings.setdefault(term, []).append((table_id, tf))
        self.postings = dict(sorted(postings.items()))
        self.bm25 = BM25Okapi(self.doc_tokens, k1=self.k1, b=self.b) if self.doc_tokens else None

    def query_terms(self, text: str, limit: int = 1024) -> list[str]:
        return distinct(tokenize(text, self.stopwords), limit)

    def scores(self, terms: list[str]) -> dict[str, float]:
        """BM25 score of every document that contains at least one term."""
        if not self.bm25 or not terms:
            return {}
        matched = {table_id for term in terms for table_id, _ in self.postings.get(term, [])}
        if not matched:
            return {}
        raw = self.bm25.get_scores(terms)
        return {d: float(s) for d, s in zip(self.doc_ids, raw) if d in matched}

    def save(self, path: Path) -> None:
        """Version byte, then the pickled index state; same corpus gives the same bytes."""
        path.parent.mkdir(parents=True, exist_ok=True)
        state = {
            "k1": self.k1,
            "b": self.b,
            "stopwords": list(self.stopwords),
            "doc_ids": self.doc_ids,
            "doc_tokens": self.doc_tokens,
        }
        with open(path, "wb") as f:
            f.write(bytes([FORMAT_VERSION]))
            pickle.dump(state, f, protocol=4)

    @classmethod
    def load(cls, path: Path) -> "TermIndex":
        with open(path, "rb") as f:
            version = f.read(1)
            if not version or version[0] != FORMAT_VERSION:
                raise ValueError(f"{path}: unsupported term index version")
            state = pickle.load(f)
        index = cls(k1=state["k1"], b=state["b"], stopwords=tuple(state["stopwords"]))
        index.doc_ids = state["doc_ids"]
        index.doc_tokens = state["doc_tokens"]
        index._rebuild_index()
        return index
