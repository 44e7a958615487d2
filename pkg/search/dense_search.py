"""
Dense retrieval: cosine similarity between serialized-table embeddings,
exact top-k by exhaustive scan.
"""
import logging
from typing import Optional

import numpy as np

from embeddings import EmbeddingProvider, get_embeddings
from quality import CanonicalTable
from search.base import BaseSearchMethod, RankedResult, serialize_table
from vectorstore import VectorIndex

logger = logging.getLogger(__name__)


class DenseSearch(BaseSearchMethod):
    name = "dense"
    description = "Cosine similarity of table embeddings (values and headers)."
    uses_headers = True

    def __init__(self, cfg=None, provider: Optional[EmbeddingProvider] = None, vectors: Optional[VectorIndex] = None):
        super().__init__(cfg)
        self.provider = provider or get_embeddings(self.cfg)
        self.external = vectors  # imported table embeddings take precedence over the provider

    def embed(self, t: CanonicalTable) -> Optional[np.ndarray]:
        if self.external is not None and t.table_id in self.external:
            return self.external.vector(t.table_id)
        if self.external is not None and self.external.dim != self.provider.dim:
            return None
        return self.provider.embed(serialize_table(t))

    def build(self, tables):
        ids, rows = [], []
        for t in tables:
            vec = self.embed(t)
            if vec is None:
                continue
            ids.append(t.table_id)
            rows.append(vec)
        if len(ids) < len(tables):
            logger.warning("dense index: %d tables have no vector", len(tables) - len(ids))
        dim = self.external.dim if self.external is not None else self.provider.dim
        self.vectors = VectorIndex(ids, np.vstack(rows) if rows else np.zeros((0, dim)))

    def score(self, query, flags):
        q = self.embed(query)
        if q is None or not np.any(q):
            flags.add("zero_query_vector")
            return {}
        return self.vectors.similarities(q)


def dense_search(
    query: CanonicalTable,
    corpus: list[CanonicalTable],
    k: int = 1,
    provider: Optional[EmbeddingProvider] = None,
) -> RankedResult:
    return DenseSearch(provider=provider).index(corpus).search(query, k)
