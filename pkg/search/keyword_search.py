"""
Keyword search: the query's header tokens are the keywords; a candidate earns
one hit per keyword found anywhere in its serialized content.
"""
from search.base import BaseSearchMethod, RankedResult, serialize_table
from quality import CanonicalTable
from tokenizer import distinct, tokenize


class KeywordSearch(BaseSearchMethod):
    name = "keyword"
    description = "Header tokens of the query matched against candidate content, ranked by hit count."
    uses_headers = True

    def build(self, tables):
        self.contents = {t.table_id: serialize_table(t).casefold() for t in tables}

    @staticmethod
    def query_tokens(query: CanonicalTable, flags: set[str]) -> list[str]:
        rows = query.cells[: query.header_row_count]
        if not rows:
            flags.add("headerless_query")
            rows = query.cells[:1]
        return distinct(tok for row in rows for cell in row for tok in tokenize(cell))

    def score(self, query, flags):
        tokens = self.query_tokens(query, flags)
        scores = {}
        for table_id, content in self.contents.items():
            hits = sum(1 for tok in tokens if tok in content)
            if hits:
                scores[table_id] = float(hits)
        return scores


def keyword_search(query: CanonicalTable, corpus: list[CanonicalTable], k: int = 1) -> RankedResult:
    return KeywordSearch().index(corpus).search(query, k)
