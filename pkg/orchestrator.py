"""
SEARCH ENGINE
Holds the six retrieval methods over one candidate pool; answers single
queries or runs the same query through several methods.
"""
import logging
from typing import Iterable, Optional

from bm25_store import TermIndex
from config import ALL_METHODS, Settings, settings
from embeddings import EmbeddingProvider, get_embeddings
from quality import CanonicalTable
from search import (
    BaseSearchMethod,
    DenseSearch,
    HybridSearch,
    JoinSearch,
    KeywordSearch,
    RankedResult,
    SparseSearch,
    UnionSearch,
    serialize_table,
)
from search.sparse_search import metadata_documents
from vectorstore import VectorIndex

logger = logging.getLogger(__name__)


class SearchEngine:
    def __init__(
        self,
        cfg: Settings = settings,
        provider: Optional[EmbeddingProvider] = None,
        table_vectors: Optional[VectorIndex] = None,
        term_index: Optional[TermIndex] = None,
        metadata_vectors: Optional[VectorIndex] = None,
    ):
        self.cfg = cfg
        provider = provider or get_embeddings(cfg)
        self.methods: dict[str, BaseSearchMethod] = {
            "keyword": KeywordSearch(cfg),
            "join": JoinSearch(cfg),
            "union": UnionSearch(cfg, provider),
            "dense": DenseSearch(cfg, provider, table_vectors),
            "sparse": SparseSearch(cfg, term_index),
            "hybrid": HybridSearch(cfg, provider, term_index, metadata_vectors),
        }
        self.built: set[str] = set()

    def list_methods(self) -> list[dict]:
        return [
            {"name": m.name, "description": m.description, "content": m.content, "headers": m.uses_headers}
            for m in self.methods.values()
        ]

    def get(self, name: str) -> BaseSearchMethod:
        method = self.methods.get(name)
        if method is None:
            raise KeyError(f"unknown search method: {name} (available: {', '.join(self.methods)})")
        return method

    def build(self, pool: Iterable[CanonicalTable], methods: Optional[Iterable[str]] = None) -> "SearchEngine":
        pool = list(pool)
        for name in methods or ALL_METHODS:
            self.get(name).index(pool)
            self.built.add(name)
        logger.info("search engine built over %d tables: %s", len(pool), ", ".join(sorted(self.built)))
        return self

    def query(self, query: CanonicalTable, method: str, k: int = 1) -> RankedResult:
        if method not in self.built:
            raise RuntimeError(f"method {method} has not been built over a pool")
        return self.get(method).search(query, k)

    def compare(self, query: CanonicalTable, methods: Iterable[str], k: int = 1) -> dict[str, RankedResult]:
        """Same query through several methods."""
        return {name: self.query(query, name, k) for name in methods}


def build_indices(
    corpus: list[CanonicalTable],
    cfg: Settings = settings,
    provider: Optional[EmbeddingProvider] = None,
    external: Optional[VectorIndex] = None,
) -> tuple[TermIndex, VectorIndex, VectorIndex]:
    """The persisted indices: metadata terms, table vectors, metadata vectors."""
    provider = provider or get_embeddings(cfg)
    docs = metadata_documents(corpus)
    terms = TermIndex(k1=cfg.bm25_k1, b=cfg.bm25_b, stopwords=tuple(cfg.sparse_stopwords)).build(docs)
    if external is not None:
        dense = DenseSearch(cfg, provider, external).index(corpus)
        table_vectors = dense.vectors
    else:
        table_vectors = VectorIndex.build({t.table_id: serialize_table(t) for t in corpus}, provider)
    metadata_vectors = VectorIndex.build(docs, provider)
    return terms, table_vectors, metadata_vectors
