"""
Table processors: each source format gets parsed into ExtractedTables, and
build_corpus routes model cards to the tables they reach (card, papers,
GitHub READMEs).

A run of pipe lines without a delimiter row is kept as a headerless table
when every line opens with `|`, or when it spans two or more lines with the
same cell count. A single unfenced line such as `a | b` stays prose.
"""
import hashlib
import json
import logging
import re
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Optional, Protocol, Sequence

from bs4 import BeautifulSoup, Tag

from errors import ValidationError
from ingestion import (
    LinkKind,
    LinkRef,
    SourceDocument,
    SourceKind,
    parse_front_matter,
    resolve_paper_refs,
)

logger = logging.getLogger(__name__)

Origin = tuple[str, int]

_DELIMITER_CELL_RE = re.compile(r"^\s*:?-+:?\s*$")
_CAPTION_RE = re.compile(r"^[*_\s]*table\b", re.IGNORECASE)
_TABLE_LABEL_RE = re.compile(r"\btable\s+(\d+)", re.IGNORECASE)
_S2_BLOB_RE = re.compile(r"^\s*table\s+(\d+)\b", re.IGNORECASE)
_FENCE_RE = re.compile(r"^\s*(```|~~~)")
# a footnote line opens with a symbol or a bracketed number: `† dev set`, `[1] test`
_NOTE_LINE_RE = re.compile(r"^\s*(?:[^\w\s(\[]|\[\d+\])")


@dataclass
class ExtractedTable:
    cells: list[list[str]]
    header_row_count: int
    origin: Origin
    source_kind: SourceKind
    caption: Optional[str] = None
    context_text: str = ""
    trailing_text: str = ""  # lines directly after the table; footnotes live here
    original_widths: Optional[list[int]] = None

    @property
    def n_rows(self) -> int:
        return len(self.cells)

    @property
    def n_cols(self) -> int:
        return max((len(r) for r in self.cells), default=0)

    def to_record(self) -> dict:
        return {
            "cells": self.cells,
            "header_row_count": self.header_row_count,
            "origin": list(self.origin),
            "source_kind": self.source_kind.value,
            "caption": self.caption,
            "context_text": self.context_text,
            "trailing_text": self.trailing_text,
            "original_widths": self.original_widths,
        }

    @classmethod
    def from_record(cls, rec: dict) -> "ExtractedTable":
        return cls(
            cells=[list(r) for r in rec["cells"]],
            header_row_count=rec["header_row_count"],
            origin=(rec["origin"][0], rec["origin"][1]),
            source_kind=SourceKind(rec["source_kind"]),
            caption=rec.get("caption"),
            context_text=rec.get("context_text", ""),
            trailing_text=rec.get("trailing_text", ""),
            original_widths=rec.get("original_widths"),
        )


@dataclass
class CorpusEntry:
    table: ExtractedTable
    model_ids: set[str] = field(default_factory=set)
    context_text: str = ""

    def to_record(self) -> dict:
        return {
            "table": self.table.to_record(),
            "model_ids": sorted(self.model_ids),
            "context_text": self.context_text,
        }

    @classmethod
    def from_record(cls, rec: dict) -> "CorpusEntry":
        return cls(
            table=ExtractedTable.from_record(rec["table"]),
            model_ids=set(rec["model_ids"]),
            context_text=rec.get("context_text", ""),
        )


def _normalize_cell(value: str) -> str:
    return " ".join(value.split())


def content_hash(cells: Sequence[Sequence[str]], header_row_count: int) -> str:
    """128-bit hex id over shape, header count and whitespace-normalized cells."""
    n_rows = len(cells)
    n_cols = len(cells[0]) if cells else 0
    payload = [n_rows, n_cols, header_row_count, [[_normalize_cell(c) for c in row] for row in cells]]
    blob = json.dumps(payload, ensure_ascii=False, separators=(",", ":"))
    return hashlib.md5(blob.encode("utf-8")).hexdigest()


# ----------- MARKDOWN -----------
def split_pipe_row(line: str) -> Optional[list[str]]:
    """Cells of a pipe row, or None when the line has no unmasked pipe.

    `\\|` and `` \\` `` unescape; pipes inside backtick code spans stay in the cell.
    """
    cells: list[str] = []
    buf: list[str] = []
    code_run = 0  # length of the open backtick run, 0 outside code
    i, n = 0, len(line)
    while i < n:
        ch = line[i]
        if ch == "\\" and i + 1 < n and line[i + 1] in "|`" and not code_run:
            buf.append(line[i + 1])
            i += 2
            continue
        if ch == "`":
            j = i
            while j < n and line[j] == "`":
                j += 1
            run = j - i
            if not code_run and line.find("`" * run, j) >= 0:
                code_run = run
            elif code_run == run:
                code_run = 0
            buf.append(line[i:j])
            i = j
            continue
        if ch == "|" and not code_run:
            cells.append("".join(buf))
            buf = []
        else:
            buf.append(ch)
        i += 1
    if not cells:
        return None
    cells.append("".join(buf))
    if line.lstrip().startswith("|"):
        cells = cells[1:]
    if len(cells) > 1 and not cells[-1].strip():
        cells = cells[:-1]
    return [c.strip() for c in cells]


def _is_delimiter_row(cells: list[str]) -> bool:
    return bool(cells) and all(_DELIMITER_CELL_RE.match(c) for c in cells)


def _markdown_caption(lines: list[str], start: int) -> Optional[str]:
    for j in (start - 1, start - 2):
        if j < 0:
            return None
        text = lines[j].strip()
        if not text:
            continue
        if _CAPTION_RE.match(text):
            return text.strip("*_ ").strip()
        return None
    return None


def extract_markdown_tables(
    body: str,
    doc_id: str = "",
    source_kind: SourceKind = SourceKind.MODEL_CARD,
) -> list[ExtractedTable]:
    """Every GitHub-flavored pipe table in textual order."""
    lines = body.splitlines()
    tables: list[ExtractedTable] = []
    in_fence = False
    i = 0
    while i < len(lines):
        if _FENCE_RE.match(lines[i]):
            in_fence = not in_fence
            i += 1
            continue
        row = None if in_fence else split_pipe_row(lines[i])
        if row is None:
            i += 1
            continue

        start = i
        block: list[tuple[str, list[str]]] = []
        while i < len(lines) and not _FENCE_RE.match(lines[i]):
            row = split_pipe_row(lines[i])
            if row is None:
                break
            block.append((lines[i], row))
            i += 1

        has_delimiter = len(block) >= 2 and _is_delimiter_row(block[1][1])
        fenced = all(raw.lstrip().startswith("|") for raw, _ in block)
        consistent = len(block) >= 2 and len({len(r) for _, r in block}) == 1
        if not (has_delimiter or fenced or consistent):
            continue
        if has_delimiter:
            rows = [block[0][1]] + [r for _, r in block[2:]]
            header_row_count = 1
        else:
            rows = [r for _, r in block]
            header_row_count = 0

        trailing = []
        j = i
        while j < len(lines) and lines[j].strip():
            trailing.append(lines[j].strip())
            j += 1

        tables.append(ExtractedTable(
            cells=rows,
            header_row_count=header_row_count,
            origin=(doc_id, len(tables)),
            source_kind=source_kind,
            caption=_markdown_caption(lines, start),
            trailing_text="\n".join(trailing),
        ))
    return tables


def _escape_cell(value: str) -> str:
    return value.replace("|", "\\|").replace("`", "\\`")


def render_markdown(cells: list[list[str]], header_row_count: int) -> str:
    """Pipe-table text that extract_markdown_tables parses back cell for cell."""
    if header_row_count > 1:
        raise ValidationError("Markdown tables carry at most one header row")
    lines = ["| " + " | ".join(_escape_cell(c) for c in row) + " |" for row in cells]
    if header_row_count == 1 and cells:
        lines.insert(1, "| " + " | ".join("---" for _ in cells[0]) + " |")
    return "\n".join(lines) + "\n"


# ----------- HTML -----------
def _span(value) -> int:
    try:
        n = int(str(value).strip())
    except (TypeError, ValueError):
        return 1
    return min(max(n, 1), 1000)


def _cell_text(cell: Tag) -> str:
    return " ".join(cell.get_text(" ", strip=True).split())


def _own_rows(table: Tag) -> list[Tag]:
    """Rows of this table outside its <tfoot>; nested tables keep their rows."""
    rows = []
    for tr in table.find_all("tr"):
        if tr.find_parent("table") is not table:
            continue
        if tr.find_parent(["tfoot", "table"]).name == "tfoot":
            continue
        rows.append(tr)
    return rows


def is_note_line(line: str) -> bool:
    """Marker-led single-column text; a marker-led data row still splits into columns."""
    text = line.strip()
    return bool(_NOTE_LINE_RE.match(text)) and len(re.split(r"\s{2,}|\t", text)) == 1


def _html_notes(table: Tag) -> str:
    """<tfoot> rows, then marker-led blocks right after the table (or its figure)."""
    lines = []
    for tfoot in table.find_all("tfoot"):
        if tfoot.find_parent("table") is not table:
            continue
        rows = tfoot.find_all("tr") or [tfoot]
        lines.extend(text for text in (_cell_text(tr) for tr in rows) if text)

    anchors = [table]
    figure = table.find_parent("figure")
    if figure is not None:
        anchors.append(figure)
    for anchor in anchors:
        for sib in anchor.find_next_siblings():
            if sib.name == "figcaption":
                continue
            text = _cell_text(sib)
            if sib.name in ("table", "figure") or not is_note_line(text):
                return "\n".join(lines)
            lines.append(text)
    return "\n".join(lines)


def _expand_spans(rows: list[Tag]) -> tuple[list[list[str]], int]:
    """Grid with rowspan/colspan values duplicated into every covered slot."""
    grid: dict[tuple[int, int], str] = {}
    header_rows = 0
    counting_header = True
    for r, tr in enumerate(rows):
        cells = tr.find_all(["td", "th"], recursive=False)
        is_header = bool(cells) and (
            all(c.name == "th" for c in cells) or tr.find_parent("thead") is not None
        )
        if counting_header and is_header:
            header_rows += 1
        else:
            counting_header = False
        c = 0
        for cell in cells:
            while (r, c) in grid:
                c += 1
            text = _cell_text(cell)
            rs, cs = _span(cell.get("rowspan")), _span(cell.get("colspan"))
            for dr in range(rs):
                if r + dr >= len(rows):
                    break
                for dc in range(cs):
                    grid[(r + dr, c + dc)] = text
            c += cs

    out = []
    for r in range(len(rows)):
        cols = [c for (rr, c) in grid if rr == r]
        if not cols:
            continue
        out.append([grid.get((r, c), "") for c in range(max(cols) + 1)])
    return out, min(header_rows, len(out))


def _html_caption(table: Tag) -> Optional[str]:
    if table.caption is not None:
        text = _cell_text(table.caption)
        if text:
            return text
    figure = table.find_parent("figure")
    if figure is not None:
        figcaption = figure.find("figcaption")
        if figcaption is not None:
            text = _cell_text(figcaption)
            if text:
                return text
    return None


def _html_mentions(soup: BeautifulSoup, table: Tag, caption: Optional[str]) -> list[str]:
    anchors = {el.get("id") for el in [table, table.find_parent("figure")] if el is not None and el.get("id")}
    label = _TABLE_LABEL_RE.search(caption or "")
    mention = re.compile(rf"\bTable\s+{label.group(1)}\b", re.IGNORECASE) if label else None
    out = []
    for p in soup.find_all("p"):
        if p.find_parent("table") is not None or p.find_parent("figure") is not None:
            continue
        links = {a.get("href", "").lstrip("#") for a in p.find_all("a")}
        text = _cell_text(p)
        if (anchors & links) or (mention is not None and mention.search(text)):
            out.append(text)
    return out


def extract_html_tables(
    markup: str,
    doc_id: str = "",
    source_kind: SourceKind = SourceKind.ARXIV_HTML,
    counters: Optional[Counter] = None,
) -> list[ExtractedTable]:
    """One ExtractedTable per non-empty <table>, spans expanded."""
    soup = BeautifulSoup(markup, "html.parser")
    tables: list[ExtractedTable] = []
    for table in soup.find_all("table"):
        cells, header_row_count = _expand_spans(_own_rows(table))
        if not cells:
            if counters is not None:
                counters["html_empty_table"] += 1
            continue
        caption = _html_caption(table)
        context = [caption] if caption else []
        context.extend(_html_mentions(soup, table, caption))
        tables.append(ExtractedTable(
            cells=cells,
            header_row_count=header_row_count,
            origin=(doc_id, len(tables)),
            source_kind=source_kind,
            caption=caption,
            context_text="\n".join(context),
            trailing_text=_html_notes(table),
        ))
    return tables


# ----------- S2 TEXT -----------
class TextTableRecoverer(Protocol):
    name: str

    def recover(self, raw: str) -> Optional[list[list[str]]]:
        ...


class WhitespaceTableRecoverer:
    """Splits lines on tabs or 2+ spaces and keeps the modal column count."""

    name = "whitespace"

    def __init__(self, min_agreement: float = 0.8):
        self.min_agreement = min_agreement

    def recover(self, raw: str) -> Optional[list[list[str]]]:
        lines = [line.strip() for line in raw.splitlines() if line.strip()]
        if not lines:
            return None
        rows = [re.split(r"\s{2,}|\t", line) for line in lines]
        widths = Counter(len(r) for r in rows)
        modal = max(widths, key=lambda w: (widths[w], w))
        if modal < 2 or widths[modal] / len(rows) < self.min_agreement:
            return None
        out = []
        for r in rows:
            if len(r) > modal:
                r = r[:modal - 1] + [" ".join(r[modal - 1:])]
            out.append([c.strip() for c in r] + [""] * (modal - len(r)))
        return out


def recover_text_table(
    raw: str,
    recoverer: TextTableRecoverer,
    doc_id: str = "",
    position: int = 0,
    counters: Optional[Counter] = None,
) -> Optional[ExtractedTable]:
    try:
        cells = recoverer.recover(raw)
    except Exception as e:
        logger.debug("recoverer %s failed on %s: %s", recoverer.name, doc_id, e)
        cells = None
    if not cells:
        if counters is not None:
            counters["s2_unrecovered"] += 1
        return None
    return ExtractedTable(
        cells=cells,
        header_row_count=1 if len(cells) >= 2 else 0,
        origin=(doc_id, position),
        source_kind=SourceKind.S2_TEXT,
    )


def _peel_notes(raw: str) -> tuple[str, list[str]]:
    """Split marker-led lines off the end of a table blob."""
    lines = raw.splitlines()
    notes: list[str] = []
    while lines and (not lines[-1].strip() or is_note_line(lines[-1])):
        line = lines.pop().strip()
        if line:
            notes.append(line)
    return "\n".join(lines), notes[::-1]


def extract_s2_tables(
    body: str,
    doc_id: str,
    recoverer: TextTableRecoverer,
    counters: Optional[Counter] = None,
) -> list[ExtractedTable]:
    """Paragraphs opening with `Table N` are table blobs; the rest is prose for mentions.

    Footnotes are the blob's trailing marker-led lines plus a following paragraph
    made only of such lines.
    """
    paragraphs = [p.strip("\n") for p in re.split(r"\n\s*\n", body) if p.strip()]
    prose = [" ".join(p.split()) for p in paragraphs if not _S2_BLOB_RE.match(p)]
    tables: list[ExtractedTable] = []
    for idx, para in enumerate(paragraphs):
        m = _S2_BLOB_RE.match(para)
        if not m:
            continue
        caption, _, raw = para.partition("\n")
        raw, notes = _peel_notes(raw)
        following = paragraphs[idx + 1] if idx + 1 < len(paragraphs) else ""
        if following and not _S2_BLOB_RE.match(following) and all(is_note_line(x) for x in following.splitlines()):
            notes.extend(x.strip() for x in following.splitlines())
        table = recover_text_table(raw, recoverer, doc_id, len(tables), counters)
        if table is None:
            continue
        caption = caption.strip()
        mention = re.compile(rf"\bTable\s+{m.group(1)}\b", re.IGNORECASE)
        table.caption = caption
        table.context_text = "\n".join([caption] + [p for p in prose if mention.search(p)])
        table.trailing_text = "\n".join(notes)
        tables.append(table)
    return tables


# ----------- ROUTING -----------
class DocumentTableProcessor:
    """Picks the parser for a document's source kind."""

    def __init__(self, recoverer: Optional[TextTableRecoverer] = None):
        self.recoverer = recoverer or WhitespaceTableRecoverer()

    def process(self, doc: SourceDocument, counters: Optional[Counter] = None) -> list[ExtractedTable]:
        kind = doc.source_kind
        if kind in (SourceKind.MODEL_CARD, SourceKind.GITHUB_README, SourceKind.DATASET_CARD):
            _, text = parse_front_matter(doc.body, counters)
            tables = extract_markdown_tables(text, doc.doc_id, kind)
            for t in tables:
                t.context_text = text.strip()
            return tables
        if kind is SourceKind.ARXIV_HTML:
            return extract_html_tables(doc.body, doc.doc_id, kind, counters)
        return extract_s2_tables(doc.body, doc.doc_id, self.recoverer, counters)


def extract_all(
    docs: list[SourceDocument],
    processor: DocumentTableProcessor,
    counters: Optional[Counter] = None,
    workers: int = 1,
) -> dict[str, list[ExtractedTable]]:
    """doc_id -> tables; parsing runs in a pool, results merge in doc order."""
    local = [Counter() for _ in docs]
    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        results = list(pool.map(processor.process, docs, local))
    if counters is not None:
        for c in local:
            counters.update(c)
    return {doc.doc_id: tables for doc, tables in zip(docs, results)}


def build_corpus(
    docs: Iterable[SourceDocument],
    link_graph: dict[str, list[LinkRef]],
    title_index: Optional[dict[str, str]] = None,
    processor: Optional[DocumentTableProcessor] = None,
    require_paper_link: bool = False,
    counters: Optional[Counter] = None,
    workers: int = 1,
) -> list[CorpusEntry]:
    """Model-card tables, then tables of referenced papers, then of linked READMEs.

    A table reached from several cards becomes one entry carrying every model id,
    and entries with identical content share the union of their model ids.
    """
    counters = counters if counters is not None else Counter()
    processor = processor or DocumentTableProcessor()
    title_index = title_index or {}
    docs = sorted(docs, key=lambda d: d.doc_id)
    by_key: dict[SourceKind, dict[str, SourceDocument]] = {}
    for doc in docs:
        by_key.setdefault(doc.source_kind, {})[doc.key] = doc

    wanted = [d for d in docs if d.source_kind is not SourceKind.DATASET_CARD]
    tables = extract_all(wanted, processor, counters, workers)

    entries: dict[Origin, CorpusEntry] = {}
    cards = [d for d in docs if d.source_kind is SourceKind.MODEL_CARD]
    for card in cards:
        model_id = card.key
        links = link_graph.get(card.doc_id, [])
        papers = resolve_paper_refs(links, title_index, counters)
        if require_paper_link and not (papers and tables.get(card.doc_id)):
            counters["cards_without_paper_or_tables"] += 1
            continue

        targets = [card.doc_id]
        for paper_id in papers:
            found = False
            for kind in (SourceKind.ARXIV_HTML, SourceKind.S2_TEXT):
                paper_doc = by_key.get(kind, {}).get(paper_id)
                if paper_doc is not None:
                    targets.append(paper_doc.doc_id)
                    found = True
            if not found:
                counters["missing_paper_document"] += 1
        for ref in links:
            if ref.kind is not LinkKind.GITHUB_REPO:
                continue
            readme = by_key.get(SourceKind.GITHUB_README, {}).get(ref.canonical_id)
            if readme is None:
                counters["missing_github_readme"] += 1
            else:
                targets.append(readme.doc_id)

        for doc_id in dict.fromkeys(targets):
            for t in tables.get(doc_id, []):
                entry = entries.get(t.origin)
                if entry is None:
                    entries[t.origin] = CorpusEntry(table=t, model_ids={model_id}, context_text=t.context_text)
                else:
                    entry.model_ids.add(model_id)

    keys = {origin: content_hash(e.table.cells, e.table.header_row_count) for origin, e in entries.items()}
    by_content: dict[str, set[str]] = {}
    for origin, entry in entries.items():
        by_content.setdefault(keys[origin], set()).update(entry.model_ids)
    for origin, entry in entries.items():
        entry.model_ids = set(by_content[keys[origin]])

    counters["raw_tables"] = len(entries)
    missing = counters["missing_paper_document"] + counters["missing_github_readme"]
    if missing:
        logger.warning("skipped %d references to documents missing from the snapshot", missing)
    logger.info("built raw corpus: %d tables from %d model cards", len(entries), len(cards))
    return list(entries.values())
