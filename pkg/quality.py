"""
Quality control: repair extraction defects (misaligned rows, footnotes,
multi-page fragments, formatting artifacts), filter, and deduplicate by
content hash into the canonical corpus.
"""
import logging
import re
from collections import Counter, defaultdict
from dataclasses import dataclass, field, replace
from functools import cached_property
from pathlib import Path
from typing import Iterable, Optional

from bs4 import BeautifulSoup

from errors import ValidationError
from ingestion import LinkKind, LinkRef, SourceDocument, SourceKind, normalize_title
from processors import CorpusEntry, ExtractedTable, Origin, content_hash
from workspace import read_jsonl, write_jsonl

logger = logging.getLogger(__name__)

_REMNANT_CELL_RE = re.compile(r"^:?-+:?$")
CORPUS_FIELDS = (
    "table_id", "source_kinds", "model_ids", "caption", "context_text",
    "header_row_count", "n_rows", "n_cols", "cells",
)


@dataclass(frozen=True)
class Footnote:
    marker: str
    text: str

    def __post_init__(self):
        if not self.marker:
            raise ValidationError("footnote marker must be non-empty")


@dataclass
class CanonicalTable:
    cells: list[list[str]]
    header_row_count: int
    caption: Optional[str] = None
    model_ids: set[str] = field(default_factory=set)
    source_kinds: set[str] = field(default_factory=set)
    context_text: str = ""
    sources: list[Origin] = field(default_factory=list)
    # set on augmented tables only
    base_id: Optional[str] = None
    variant: Optional[str] = None
    seed: Optional[int] = None
    rng: Optional[str] = None

    @cached_property
    def content_id(self) -> str:
        return content_hash(self.cells, self.header_row_count)

    @property
    def table_id(self) -> str:
        if self.variant is not None:
            return f"{self.base_id}~{self.variant}"
        return self.content_id

    @property
    def root_id(self) -> str:
        """Id of the corpus table this one derives from (itself for base tables)."""
        return self.base_id or self.content_id

    @property
    def n_rows(self) -> int:
        return len(self.cells)

    @property
    def n_cols(self) -> int:
        return len(self.cells[0]) if self.cells else 0

    @property
    def body(self) -> list[list[str]]:
        return self.cells[self.header_row_count:]

    def to_record(self) -> dict:
        rec = {
            "table_id": self.table_id,
            "source_kinds": sorted(self.source_kinds),
            "model_ids": sorted(self.model_ids),
            "caption": self.caption,
            "context_text": self.context_text,
            "header_row_count": self.header_row_count,
            "n_rows": self.n_rows,
            "n_cols": self.n_cols,
            "cells": self.cells,
        }
        if self.variant is not None:
            rec.update(base_id=self.base_id, variant=self.variant, seed=self.seed, rng=self.rng)
        return rec

    @classmethod
    def from_record(cls, rec: dict) -> "CanonicalTable":
        return cls(
            cells=[list(r) for r in rec["cells"]],
            header_row_count=rec["header_row_count"],
            caption=rec.get("caption"),
            model_ids=set(rec.get("model_ids", [])),
            source_kinds=set(rec.get("source_kinds", [])),
            context_text=rec.get("context_text", ""),
            base_id=rec.get("base_id"),
            variant=rec.get("variant"),
            seed=rec.get("seed"),
            rng=rec.get("rng"),
        )


# ----------- REPAIRS -----------
def normalize_alignment(t: ExtractedTable) -> ExtractedTable:
    widths = [len(r) for r in t.cells]
    n_cols = max(widths)
    if all(w == n_cols for w in widths):
        return t
    cells = [list(r) + [""] * (n_cols - len(r)) for r in t.cells]
    return replace(t, cells=cells, original_widths=t.original_widths or widths)


def compile_marker_pattern(markers: Iterable[str]) -> str:
    return "(?:" + "|".join(f"(?:{m})" for m in markers) + ")"


def extract_footnotes(text: str, markers: Iterable[str]) -> list[Footnote]:
    """Lines of the footnote area that open with a marker, e.g. `* dev set`."""
    line_re = re.compile(rf"^\s*({compile_marker_pattern(markers)})\s*(.+?)\s*$")
    notes = []
    for line in text.splitlines():
        m = line_re.match(line)
        if m:
            notes.append(Footnote(marker=m.group(1), text=m.group(2)))
    return notes


def _peel_markers(cell: str, notes: dict[str, str]) -> tuple[str, list[str]]:
    found = []
    ordered = sorted(notes, key=len, reverse=True)
    base = cell.rstrip()
    progress = True
    while progress:
        progress = False
        for marker in ordered:
            if base.endswith(marker) and len(base) > 0:
                found.append(notes[marker])
                base = base[: -len(marker)].rstrip()
                progress = True
                break
    return base, list(reversed(found))


def merge_footnotes(t: ExtractedTable, notes: list[Footnote]) -> ExtractedTable:
    """Replace trailing footnote markers in cells with the note text in parentheses."""
    if not notes:
        return t
    by_marker: dict[str, str] = {}
    for note in notes:
        by_marker.setdefault(note.marker, note.text)
    changed = False
    cells = []
    for row in t.cells:
        out = []
        for cell in row:
            base, texts = _peel_markers(cell, by_marker)
            if texts:
                changed = True
                cell = " ".join([base] + [f"({x})" for x in texts]).strip()
            out.append(cell)
        cells.append(out)
    return replace(t, cells=cells) if changed else t


def _header(t: ExtractedTable) -> list[list[str]]:
    return t.cells[: t.header_row_count]


def stitch_multipage(tables: list[ExtractedTable]) -> list[ExtractedTable]:
    """Merge adjacent fragments of one table (same width, same header or headerless successor)."""
    out: list[ExtractedTable] = []
    for t in tables:
        if out:
            prev = out[-1]
            same_width = prev.n_cols == t.n_cols
            same_header = t.header_row_count > 0 and _header(prev) == _header(t)
            if same_width and (same_header or t.header_row_count == 0):
                body = t.cells[t.header_row_count:]
                trailing = "\n".join(x for x in (prev.trailing_text, t.trailing_text) if x)
                out[-1] = replace(prev, cells=prev.cells + body, trailing_text=trailing)
                continue
        out.append(t)
    return out


def _is_blank_row(row: list[str]) -> bool:
    return all(not c.strip() for c in row)


def _is_remnant_row(row: list[str]) -> bool:
    filled = [c.strip() for c in row if c.strip()]
    return bool(filled) and all(_REMNANT_CELL_RE.match(c) for c in filled)


def prune_artifacts(t: ExtractedTable) -> Optional[ExtractedTable]:
    """Drop empty rows/columns and leftover `---` rows; None if no body remains."""
    keep_rows = []
    header_row_count = t.header_row_count
    for i, row in enumerate(t.cells):
        if _is_blank_row(row) or _is_remnant_row(row):
            if i < t.header_row_count:
                header_row_count -= 1
            continue
        keep_rows.append(row)
    if len(keep_rows) <= header_row_count:
        return None
    n_cols = max(len(r) for r in keep_rows)
    keep_cols = [
        j for j in range(n_cols)
        if any(j < len(r) and r[j].strip() for r in keep_rows)
    ]
    cells = [[r[j] if j < len(r) else "" for j in keep_cols] for r in keep_rows]
    if not keep_cols:
        return None
    if cells == t.cells and header_row_count == t.header_row_count:
        return t
    return replace(t, cells=cells, header_row_count=header_row_count)


def clean_corpus(
    entries: list[CorpusEntry],
    footnote_markers: Iterable[str],
    stitch_sources: Iterable[str] = (SourceKind.ARXIV_HTML.value, SourceKind.S2_TEXT.value),
    counters: Optional[Counter] = None,
) -> list[CorpusEntry]:
    """Per document: stitch, align, merge footnotes, prune. Pruned-away tables are dropped."""
    counters = counters if counters is not None else Counter()
    markers = list(footnote_markers)
    stitch_kinds = set(stitch_sources)
    by_doc: dict[str, list[CorpusEntry]] = defaultdict(list)
    for entry in entries:
        by_doc[entry.table.origin[0]].append(entry)

    cleaned = []
    for doc_id in sorted(by_doc):
        group = sorted(by_doc[doc_id], key=lambda e: e.table.origin[1])
        if group[0].table.source_kind.value in stitch_kinds:
            group = _stitch_entries(group, counters)
        for entry in group:
            t = normalize_alignment(entry.table)
            if t.trailing_text:
                t = merge_footnotes(t, extract_footnotes(t.trailing_text, markers))
            pruned = prune_artifacts(t)
            if pruned is None:
                counters["pruned_empty"] += 1
                continue
            cleaned.append(replace(entry, table=pruned))
    if counters["pruned_empty"]:
        logger.warning("pruned %d tables with no body left", counters["pruned_empty"])
    return cleaned


def _stitch_entries(group: list[CorpusEntry], counters: Counter) -> list[CorpusEntry]:
    survivors = {t.origin: t for t in stitch_multipage([e.table for e in group])}
    out: list[CorpusEntry] = []
    for e in group:
        table = survivors.get(e.table.origin)
        if table is not None:
            out.append(CorpusEntry(table=table, model_ids=set(e.model_ids), context_text=e.context_text))
        else:
            # folded into the previous survivor
            out[-1].model_ids |= e.model_ids
            counters["stitched_fragments"] += 1
    return out


# ----------- CANONICAL CORPUS -----------
def canonicalize(entry: CorpusEntry) -> CanonicalTable:
    t = entry.table
    widths = {len(r) for r in t.cells}
    if len(widths) != 1 or not t.cells or not t.cells[0]:
        raise ValidationError(f"table {t.origin} is not rectangular; run the quality pipeline first")
    return CanonicalTable(
        cells=[list(r) for r in t.cells],
        header_row_count=t.header_row_count,
        caption=t.caption,
        model_ids=set(entry.model_ids),
        source_kinds={t.source_kind.value},
        context_text=entry.context_text,
        sources=[t.origin],
    )


def strategic_filter(
    corpus: list[CanonicalTable],
    min_rows: int = 1,
    min_cols: int = 2,
    require_source: Iterable[str] = (
        SourceKind.MODEL_CARD.value, SourceKind.GITHUB_README.value, SourceKind.ARXIV_HTML.value,
    ),
    counters: Optional[Counter] = None,
) -> list[CanonicalTable]:
    """Keep tables with enough body rows and columns from an included source."""
    include = set(require_source)
    kept = []
    for t in corpus:
        if t.n_rows - t.header_row_count < min_rows or t.n_cols < min_cols:
            if counters is not None:
                counters["filtered_shape"] += 1
            continue
        if not (t.source_kinds & include):
            if counters is not None:
                counters["filtered_source"] += 1
            continue
        kept.append(t)
    return kept


def join_contexts(contexts: Iterable[str]) -> str:
    return "\n\n".join(c for c in contexts if c and c.strip())


def dedup(corpus: Iterable[CorpusEntry | CanonicalTable]) -> tuple[list[CanonicalTable], dict[str, int]]:
    """One table per content id; model ids, sources and kinds are unioned."""
    groups: dict[str, list[CanonicalTable]] = defaultdict(list)
    for item in corpus:
        t = canonicalize(item) if isinstance(item, CorpusEntry) else item
        groups[t.table_id].append(t)

    unique = []
    frequencies = {}
    for table_id in sorted(groups):
        members = groups[table_id]
        frequencies[table_id] = len(members)
        if len(members) == 1:
            unique.append(members[0])
            continue
        members = sorted(members, key=lambda m: min(m.sources) if m.sources else ("", 0))
        first = members[0]
        unique.append(CanonicalTable(
            cells=first.cells,
            header_row_count=first.header_row_count,
            caption=first.caption,
            model_ids=set().union(*(m.model_ids for m in members)),
            source_kinds=set().union(*(m.source_kinds for m in members)),
            context_text=join_contexts(m.context_text for m in members),
            sources=sorted(set().union(*(m.sources for m in members))),
            base_id=first.base_id,
            variant=first.variant,
            seed=first.seed,
            rng=first.rng,
        ))
    return unique, frequencies


# ----------- ANCHORS -----------
def document_anchors(
    docs: Iterable[SourceDocument],
    link_graph: dict[str, list[LinkRef]],
) -> dict[str, list[str]]:
    """doc_id -> candidate paper titles the document's tables can be anchored to."""
    anchors: dict[str, list[str]] = {}
    for doc in docs:
        if doc.source_kind is SourceKind.ARXIV_HTML:
            soup = BeautifulSoup(doc.body, "html.parser")
            node = soup.find("h1") or soup.title
            titles = [" ".join(node.get_text(" ", strip=True).split())] if node else []
        elif doc.source_kind is SourceKind.S2_TEXT:
            lines = doc.body.strip().splitlines()
            titles = [lines[0].strip()] if lines else []
        else:
            titles = [r.raw for r in link_graph.get(doc.doc_id, []) if r.kind is LinkKind.BIBTEX_TITLE]
        anchors[doc.doc_id] = [t for t in titles if t]
    return anchors


def anchor_filter(
    corpus: list[CanonicalTable],
    doc_anchors: dict[str, list[str]],
    valid_titles: set[str],
    stage: str = "none",
    counters: Optional[Counter] = None,
) -> list[CanonicalTable]:
    """`title` keeps tables with an anchoring title; `valid_title` also needs it in the paper index."""
    if stage == "none":
        return corpus
    valid = {normalize_title(t) for t in valid_titles}
    kept = []
    for t in corpus:
        titles = [a for doc_id, _ in t.sources for a in doc_anchors.get(doc_id, [])]
        if stage == "valid_title":
            titles = [a for a in titles if normalize_title(a) in valid]
        if titles:
            kept.append(t)
        elif counters is not None:
            counters[f"anchor_{stage}_dropped"] += 1
    return kept


# ----------- FILES -----------
def write_corpus(path: Path, corpus: Iterable[CanonicalTable]) -> int:
    return write_jsonl(path, (t.to_record() for t in corpus))


def read_corpus(path: Path) -> list[CanonicalTable]:
    return [CanonicalTable.from_record(rec) for rec in read_jsonl(path)]


def write_frequencies(path: Path, frequencies: dict[str, int]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for table_id in sorted(frequencies):
            f.write(f"{table_id}\t{frequencies[table_id]}\n")


def read_frequencies(path: Path) -> dict[str, int]:
    out = {}
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            if line.strip():
                table_id, count = line.rstrip("\n").split("\t")
                out[table_id] = int(count)
    return out
