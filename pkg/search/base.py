from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Iterable, Optional

from config import Settings, settings
from processors import CorpusEntry
from quality import CanonicalTable, content_hash, join_contexts


@dataclass
class RankedResult:
    query_id: str
    hits: list[tuple[str, float]] = field(default_factory=list)  # (table_id, score), best first
    method: str = ""
    flags: set[str] = field(default_factory=set)

    @property
    def table_ids(self) -> list[str]:
        return [table_id for table_id, _ in self.hits]


def serialize_table(t: CanonicalTable) -> str:
    """Caption, then rows left to right, rows separated by ` [ROW] `; empty cells skipped."""
    rows = []
    for row in t.cells:
        text = " ".join(" ".join(c.split()) for c in row if c.strip())
        if text:
            rows.append(text)
    body = " [ROW] ".join(rows)
    caption = " ".join((t.caption or "").split())
    return f"{caption} {body}".strip() if caption else body


def build_metadata_context(t: CanonicalTable, occurrences: Optional[Iterable[CorpusEntry]] = None) -> str:
    """Context of every source occurrence of the table, in (doc_id, position) order.

    Without occurrences, the context joined at dedup time is used.
    """
    if occurrences is None:
        return t.context_text
    matching = [
        e for e in occurrences
        if content_hash(e.table.cells, e.table.header_row_count) == t.content_id
    ]
    return join_contexts(e.context_text for e in sorted(matching, key=lambda e: e.table.origin))


def is_excluded(query: CanonicalTable, candidate: CanonicalTable) -> bool:
    """Self, exact-content duplicates and other variants of the same corpus table."""
    return (
        candidate.table_id == query.table_id
        or candidate.content_id == query.content_id
        or candidate.root_id == query.root_id
    )


class BaseSearchMethod(ABC):
    name: str = "base"
    description: str = ""
    content: str = "table"  # what the method reads: table content or metadata
    uses_headers: bool = False

    def __init__(self, cfg: Optional[Settings] = None):
        self.cfg = cfg or settings
        self.tables: dict[str, CanonicalTable] = {}

    def index(self, tables: Iterable[CanonicalTable]) -> "BaseSearchMethod":
        tables = sorted(tables, key=lambda t: t.table_id)
        self.tables = {t.table_id: t for t in tables}
        self.build(tables)
        return self

    @abstractmethod
    def build(self, tables: list[CanonicalTable]) -> None:
        pass

    @abstractmethod
    def score(self, query: CanonicalTable, flags: set[str]) -> dict[str, float]:
        """Scores of candidate tables; candidates missing from the dict are not retrieved."""

    def search(self, query: CanonicalTable, k: int = 1) -> RankedResult:
        flags: set[str] = set()
        scores = self.score(query, flags)
        ranked = sorted(
            (
                (table_id, s) for table_id, s in scores.items()
                if table_id in self.tables and not is_excluded(query, self.tables[table_id])
            ),
            key=lambda hit: (-hit[1], hit[0]),
        )
        return RankedResult(query_id=query.table_id, hits=ranked[:k], method=self.name, flags=flags)
