"""
Sparse retrieval over metadata context (README text, captions, mentions).
Query text is cut to its first `max_query_terms` distinct terms.
"""
import logging
from typing import Optional

from bm25_store import TermIndex
from quality import CanonicalTable
from search.base import BaseSearchMethod, RankedResult, build_metadata_context

logger = logging.getLogger(__name__)


def metadata_documents(tables) -> dict[str, str]:
    """table_id -> metadata context, tables without any context left out."""
    docs = {t.table_id: build_metadata_context(t) for t in tables}
    empty = [table_id for table_id, text in docs.items() if not text.strip()]
    if empty:
        logger.info("%d tables have no metadata context and are not indexed", len(empty))
    return {table_id: text for table_id, text in docs.items() if text.strip()}


class SparseSearch(BaseSearchMethod):
    name = "sparse"
    description = "BM25 over metadata context, query truncated to 1024 distinct terms."
    content = "metadata"

    def __init__(self, cfg=None, term_index: Optional[TermIndex] = None):
        super().__init__(cfg)
        self.term_index = term_index

    def build(self, tables):
        docs = metadata_documents(tables)
        # a persisted index is reused only when it covers exactly this pool
        if self.term_index is None or self.term_index.doc_ids != sorted(docs):
            self.term_index = TermIndex(
                k1=self.cfg.bm25_k1, b=self.cfg.bm25_b, stopwords=tuple(self.cfg.sparse_stopwords)
            ).build(docs)

    def score(self, query, flags):
        terms = self.term_index.query_terms(build_metadata_context(query), self.cfg.max_query_terms)
        if not terms:
            flags.add("empty_query_context")
            return {}
        return self.term_index.scores(terms)


def sparse_search(query: CanonicalTable, corpus: list[CanonicalTable], k: int = 1) -> RankedResult:
    return SparseSearch().index(corpus).search(query, k)
