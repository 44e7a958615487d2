"""
Hybrid retrieval: sparse search picks the top `hybrid_depth` candidates by
metadata, then dense cosine over metadata embeddings re-ranks them.
"""
from typing import Optional

import numpy as np

from bm25_store import TermIndex
from embeddings import EmbeddingProvider, get_embeddings
from quality import CanonicalTable
from search.base import BaseSearchMethod, RankedResult, build_metadata_context
from search.sparse_search import SparseSearch, metadata_documents
from vectorstore import VectorIndex


class HybridSearch(BaseSearchMethod):
    name = "hybrid"
    description = "Sparse top-100 over metadata, re-ranked by metadata embedding similarity."
    content = "metadata"

    def __init__(
        self,
        cfg=None,
        provider: Optional[EmbeddingProvider] = None,
        term_index: Optional[TermIndex] = None,
        vectors: Optional[VectorIndex] = None,
    ):
        super().__init__(cfg)
        self.provider = provider or get_embeddings(self.cfg)
        self.sparse = SparseSearch(self.cfg, term_index)
        self.vectors = vectors

    def build(self, tables):
        self.sparse.index(tables)
        docs = metadata_documents(tables)
        if self.vectors is None or self.vectors.ids != sorted(docs):
            self.vectors = VectorIndex.build(docs, self.provider)

    def score(self, query, flags):
        first_stage = self.sparse.search(query, self.cfg.hybrid_depth)
        flags |= first_stage.flags
        if not first_stage.hits:
            return {}
        q = self.provider.embed(build_metadata_context(query))
        if not np.any(q):
            flags.add("zero_query_vector")
            return {}
        return {table_id: float(self.vectors.vector(table_id) @ q) for table_id in first_stage.table_ids}


def hybrid_search(
    query: CanonicalTable,
    corpus: list[CanonicalTable],
    k: int = 1,
    provider: Optional[EmbeddingProvider] = None,
) -> RankedResult:
    return HybridSearch(provider=provider).index(corpus).search(query, k)
