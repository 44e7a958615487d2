"""
Union search: column-level semantic matching.
Every column is embedded from its body values (headers are not used), and a
candidate is scored by a greedy one-to-one alignment of query columns to
candidate columns under cosine similarity:

    score = mean(similarity of matched pairs) * matched / max(query cols, candidate cols)

Pairs with similarity <= 0 are never matched. This is a self-contained
stand-in for a trained contrastive column encoder, so scores are not
comparable with published numbers for such systems.
"""
import numpy as np

from embeddings import EmbeddingProvider, get_embeddings
from quality import CanonicalTable
from search.base import BaseSearchMethod, RankedResult


def column_texts(t: CanonicalTable) -> list[str]:
    return [" ".join(row[j] for row in t.body if row[j].strip()) for j in range(t.n_cols)]


def greedy_alignment(sim: np.ndarray) -> list[tuple[int, int, float]]:
    """Highest similarity first, ties to the lowest (i, j); each row and column used once."""
    pairs = sorted(
        ((float(sim[i, j]), i, j) for i in range(sim.shape[0]) for j in range(sim.shape[1]) if sim[i, j] > 0),
        key=lambda p: (-p[0], p[1], p[2]),
    )
    used_i, used_j, out = set(), set(), []
    for s, i, j in pairs:
        if i in used_i or j in used_j:
            continue
        used_i.add(i)
        used_j.add(j)
        out.append((i, j, s))
    return out


def unionability(query_cols: np.ndarray, cand_cols: np.ndarray) -> float:
    if not len(query_cols) or not len(cand_cols):
        return 0.0
    matched = greedy_alignment(query_cols @ cand_cols.T)
    if not matched:
        return 0.0
    mean = sum(s for _, _, s in matched) / len(matched)
    return mean * len(matched) / max(len(query_cols), len(cand_cols))


class UnionSearch(BaseSearchMethod):
    name = "union"
    description = "Greedy column alignment under embedding similarity (headers excluded)."

    def __init__(self, cfg=None, provider: EmbeddingProvider | None = None):
        super().__init__(cfg)
        self.provider = provider or get_embeddings(self.cfg)

    def embed_columns(self, t: CanonicalTable) -> np.ndarray:
        texts = column_texts(t)
        if not texts:
            return np.zeros((0, self.provider.dim))
        return np.vstack([self.provider.embed(text) for text in texts])

    def build(self, tables):
        self.columns = {t.table_id: self.embed_columns(t) for t in tables}

    def score(self, query, flags):
        q = self.embed_columns(query)
        if not np.any(q):
            flags.add("zero_query_columns")
        return {table_id: unionability(q, cols) for table_id, cols in self.columns.items()}


def union_search(
    query: CanonicalTable,
    corpus: list[CanonicalTable],
    k: int = 1,
    provider: EmbeddingProvider | None = None,
) -> RankedResult:
    return UnionSearch(provider=provider).index(corpus).search(query, k)
