from search.base import BaseSearchMethod, RankedResult, build_metadata_context, serialize_table
from search.dense_search import DenseSearch, dense_search
from search.hybrid_search import HybridSearch, hybrid_search
from search.join_search import JoinSearch, join_search
from search.keyword_search import KeywordSearch, keyword_search
from search.sparse_search import SparseSearch, sparse_search
from search.union_search import UnionSearch, union_search

__all__ = [
    "BaseSearchMethod",
    "RankedResult",
    "build_metadata_context",
    "serialize_table",
    "KeywordSearch",
    "JoinSearch",
    "UnionSearch",
    "DenseSearch",
    "SparseSearch",
    "HybridSearch",
    "keyword_search",
    "join_search",
    "union_search",
    "dense_search",
    "sparse_search",
    "hybrid_search",
]
