"""
Joinable-table search keyed on the query's right-most column.
"""
from collections import defaultdict

from search.base import BaseSearchMethod, RankedResult
from quality import CanonicalTable


def column_values(t: CanonicalTable, j: int) -> set[str]:
    """Distinct non-empty body values of column j."""
    return {" ".join(row[j].split()) for row in t.body if row[j].strip()}


class JoinSearch(BaseSearchMethod):
    name = "join"
    description = "Overlap between the query's right-most column values and any candidate column."

    def build(self, tables):
        # value -> [(table_id, column)]
        self.postings: dict[str, list[tuple[str, int]]] = defaultdict(list)
        for t in tables:
            for j in range(t.n_cols):
                for value in sorted(column_values(t, j)):
                    self.postings[value].append((t.table_id, j))

    def score(self, query, flags):
        keys = column_values(query, query.n_cols - 1) if query.n_cols else set()
        if not keys:
            flags.add("empty_join_column")
            return {}
        overlap: dict[tuple[str, int], int] = defaultdict(int)
        for value in keys:
            for slot in self.postings.get(value, []):
                overlap[slot] += 1
        scores: dict[str, float] = {}
        for (table_id, _), n in overlap.items():
            scores[table_id] = max(scores.get(table_id, 0.0), float(n))
        return scores


def join_search(query: CanonicalTable, corpus: list[CanonicalTable], k: int = 1) -> RankedResult:
    return JoinSearch().index(corpus).search(query, k)
