"""
Snapshot ingestion: load source documents, pull outbound references (URLs and
BibTeX titles) out of their bodies, classify them by platform, and resolve
model shorthands to canonical `org/repo` ids.
"""
import logging
import re
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from enum import Enum
from pathlib import Path
from typing import Iterable, Iterator, NamedTuple, Optional
from urllib.parse import urlparse

import pandas as pd
import yaml

from errors import SnapshotError

logger = logging.getLogger(__name__)


class SourceKind(str, Enum):
    MODEL_CARD = "model_card"
    DATASET_CARD = "dataset_card"
    GITHUB_README = "github_readme"
    ARXIV_HTML = "arxiv_html"
    S2_TEXT = "s2_text"


class LinkKind(str, Enum):
    ARXIV_PAPER = "arxiv_paper"
    GITHUB_REPO = "github_repo"
    HF_MODEL = "hf_model"
    HF_DATASET = "hf_dataset"
    BIBTEX_TITLE = "bibtex_title"
    OTHER = "other"


# <root>/<dir>/<pattern> -> kind
SNAPSHOT_LAYOUT: dict[str, tuple[SourceKind, str]] = {
    "model_cards": (SourceKind.MODEL_CARD, "*.md"),
    "dataset_cards": (SourceKind.DATASET_CARD, "*.md"),
    "github": (SourceKind.GITHUB_README, "*.md"),
    "arxiv": (SourceKind.ARXIV_HTML, "*.html"),
    "s2": (SourceKind.S2_TEXT, "*.txt"),
}

_URI_TEMPLATES = {
    SourceKind.MODEL_CARD: "https://huggingface.co/{}",
    SourceKind.DATASET_CARD: "https://huggingface.co/datasets/{}",
    SourceKind.GITHUB_README: "https://github.com/{}",
    SourceKind.ARXIV_HTML: "https://arxiv.org/abs/{}",
    SourceKind.S2_TEXT: "https://www.semanticscholar.org/paper/{}",
}

# Hugging Face's template model card links this paper; it is never a real reference
PLACEHOLDER_ARXIV_ID = "1910.09700"

URL_RE = re.compile(r"https?://[^\s<>\"'`)\]}]+")
BIBTEX_START_RE = re.compile(r"@([A-Za-z]+)\s*\{")
BIBTEX_TITLE_RE = re.compile(r"\btitle\s*=\s*", re.IGNORECASE)
ARXIV_ID_RE = re.compile(r"^(?:\d{4}\.\d{4,5}|[a-z][a-z\-]*(?:\.[A-Z]{2})?/\d{7})$")
_ARXIV_VERSION_RE = re.compile(r"v\d+$")

ARXIV_HOSTS = {"arxiv.org", "export.arxiv.org", "ar5iv.org", "ar5iv.labs.arxiv.org"}
HF_HOSTS = {"huggingface.co", "hf.co"}
HF_RESERVED = {
    "spaces", "docs", "blog", "models", "collections", "settings", "login", "join",
    "pricing", "organizations", "tasks", "learn", "posts", "new", "api", "templates",
}
GITHUB_RESERVED = {"features", "topics", "orgs", "marketplace", "sponsors", "about", "settings"}


@dataclass(frozen=True)
class SourceDocument:
    doc_id: str
    source_kind: SourceKind
    uri: str
    body: str

    @property
    def key(self) -> str:
        """The entity the file stands for: model id, repo, dataset or paper id."""
        return stem_to_key(Path(self.doc_id).stem)

    def to_record(self) -> dict:
        return {"doc_id": self.doc_id, "source_kind": self.source_kind.value, "uri": self.uri, "body": self.body}

    @classmethod
    def from_record(cls, rec: dict) -> "SourceDocument":
        return cls(rec["doc_id"], SourceKind(rec["source_kind"]), rec["uri"], rec["body"])


@dataclass(frozen=True)
class LinkRef:
    raw: str
    kind: LinkKind = LinkKind.OTHER
    canonical_id: Optional[str] = None

    def to_record(self) -> dict:
        return {"raw": self.raw, "kind": self.kind.value, "canonical_id": self.canonical_id}

    @classmethod
    def from_record(cls, rec: dict) -> "LinkRef":
        return cls(rec["raw"], LinkKind(rec["kind"]), rec.get("canonical_id"))


class AliasResolution(NamedTuple):
    model_id: str
    resolved: bool


AliasTable = dict[str, list[tuple[str, Optional[int]]]]


def stem_to_key(stem: str) -> str:
    # org__repo.md names org/repo
    return stem.replace("__", "/")


def key_to_stem(key: str) -> str:
    return key.replace("/", "__")


def document_uri(kind: SourceKind, key: str) -> str:
    return _URI_TEMPLATES[kind].format(key)


def load_snapshot(path: Path, counters: Optional[Counter] = None) -> Iterator[SourceDocument]:
    """Yield every readable document once, in lexicographic doc_id order."""
    root = Path(path)
    if not root.is_dir():
        raise SnapshotError(f"snapshot directory not found: {root}")
    counters = counters if counters is not None else Counter()

    found: list[tuple[str, SourceKind, Path]] = []
    for sub, (kind, pattern) in SNAPSHOT_LAYOUT.items():
        d = root / sub
        if d.is_dir():
            found.extend((f.relative_to(root).as_posix(), kind, f) for f in d.glob(pattern) if f.is_file())

    for doc_id, kind, f in sorted(found, key=lambda item: item[0]):
        try:
            body = f.read_text(encoding="utf-8")
        except (OSError, UnicodeDecodeError) as e:
            counters["unreadable"] += 1
            logger.warning("skipping unreadable file %s: %s", doc_id, e)
            continue
        if not body.strip():
            counters["empty"] += 1
            logger.warning("skipping empty file %s", doc_id)
            continue
        counters["loaded"] += 1
        yield SourceDocument(
            doc_id=doc_id,
            source_kind=kind,
            uri=document_uri(kind, stem_to_key(f.stem)),
            body=body,
        )

    if counters["unreadable"] or counters["empty"]:
        logger.warning(
            "snapshot %s: %d loaded, %d empty, %d unreadable",
            root, counters["loaded"], counters["empty"], counters["unreadable"],
        )


def normalize_title(title: str) -> str:
    return " ".join(re.sub(r"[^\w]+", " ", title.casefold()).split())


def _read_balanced(text: str, start: int) -> Optional[int]:
    """Index just past the brace group opening at text[start], or None if unbalanced."""
    depth = 0
    for i in range(start, len(text)):
        ch = text[i]
        if ch == "{":
            depth += 1
        elif ch == "}":
            depth -= 1
            if depth == 0:
                return i + 1
    return None


def _bibtex_title(entry: str) -> Optional[str]:
    m = BIBTEX_TITLE_RE.search(entry)
    if not m:
        return None
    i = m.end()
    if i >= len(entry):
        return None
    if entry[i] == "{":
        end = _read_balanced(entry, i)
        if end is None:
            return None
        value = entry[i + 1:end - 1]
    elif entry[i] == '"':
        end = entry.find('"', i + 1)
        if end < 0:
            return None
        value = entry[i + 1:end]
    else:
        value = re.split(r"[,}\n]", entry[i:], maxsplit=1)[0]
    value = " ".join(value.replace("{", "").replace("}", "").split())
    return value or None


def _bibtex_titles(body: str, counters: Counter) -> list[tuple[int, str]]:
    out = []
    for m in BIBTEX_START_RE.finditer(body):
        if m.group(1).lower() in ("comment", "string", "preamble"):
            continue
        end = _read_balanced(body, m.end() - 1)
        title = _bibtex_title(body[m.start():end]) if end is not None else None
        if title is None:
            counters["bibtex_malformed"] += 1
            continue
        out.append((m.start(), title))
    return out


def extract_links(body: str, counters: Optional[Counter] = None) -> list[LinkRef]:
    """All URLs and BibTeX titles, classified, in order of first appearance, deduplicated."""
    counters = counters if counters is not None else Counter()
    found: list[tuple[int, LinkRef]] = []
    for m in URL_RE.finditer(body):
        raw = m.group(0).rstrip(".,;:!?*_")
        found.append((m.start(), LinkRef(raw=raw)))
    for pos, title in _bibtex_titles(body, counters):
        found.append((pos, LinkRef(raw=title, kind=LinkKind.BIBTEX_TITLE)))

    seen: set[tuple[bool, str]] = set()
    links = []
    for _, ref in sorted(found, key=lambda item: item[0]):
        key = (ref.kind is LinkKind.BIBTEX_TITLE, ref.raw)
        if key in seen:
            continue
        seen.add(key)
        links.append(classify_link(ref))
    return links


def _arxiv_id(parts: list[str]) -> Optional[str]:
    if len(parts) < 2 or parts[0] not in ("abs", "pdf", "html", "format", "papers"):
        return None
    candidate = "/".join(parts[1:]).removesuffix(".pdf")
    candidate = _ARXIV_VERSION_RE.sub("", candidate)
    return candidate if ARXIV_ID_RE.match(candidate) else None


def classify_link(ref: LinkRef) -> LinkRef:
    """Fill kind and canonical_id from the raw value; idempotent."""
    if ref.kind is LinkKind.BIBTEX_TITLE:
        return replace(ref, canonical_id=normalize_title(ref.raw))

    other = LinkRef(raw=ref.raw, kind=LinkKind.OTHER)
    parsed = urlparse(ref.raw)
    host = parsed.netloc.lower().split(":")[0].removeprefix("www.")
    parts = [p for p in parsed.path.split("/") if p]

    if host in ARXIV_HOSTS or (host in HF_HOSTS and parts[:1] == ["papers"]):
        arxiv_id = _arxiv_id(parts)
        if arxiv_id is None or arxiv_id == PLACEHOLDER_ARXIV_ID:
            return other
        return LinkRef(raw=ref.raw, kind=LinkKind.ARXIV_PAPER, canonical_id=arxiv_id)

    if host in HF_HOSTS:
        if parts[:1] == ["datasets"]:
            if len(parts) >= 3:
                return LinkRef(raw=ref.raw, kind=LinkKind.HF_DATASET, canonical_id=f"{parts[1]}/{parts[2]}")
            if len(parts) == 2:
                return LinkRef(raw=ref.raw, kind=LinkKind.HF_DATASET, canonical_id=parts[1])
            return other
        if not parts or parts[0] in HF_RESERVED:
            return other
        model_id = "/".join(parts[:2])
        return LinkRef(raw=ref.raw, kind=LinkKind.HF_MODEL, canonical_id=model_id)

    if host == "github.com" and len(parts) >= 2 and parts[0] not in GITHUB_RESERVED:
        repo = parts[1].removesuffix(".git")
        return LinkRef(raw=ref.raw, kind=LinkKind.GITHUB_REPO, canonical_id=f"{parts[0]}/{repo}")

    return other


def extract_link_graph(
    docs: Iterable[SourceDocument],
    counters: Optional[Counter] = None,
    workers: int = 1,
) -> dict[str, list[LinkRef]]:
    """doc_id -> links; per-document work is pure, merged in doc order."""
    counters = counters if counters is not None else Counter()
    docs = list(docs)
    local = [Counter() for _ in docs]
    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        results = list(pool.map(lambda pair: extract_links(pair[0].body, pair[1]), zip(docs, local)))
    for c in local:
        counters.update(c)
    if counters["bibtex_malformed"]:
        logger.warning("skipped %d malformed BibTeX entries", counters["bibtex_malformed"])
    return {doc.doc_id: links for doc, links in zip(docs, results)}


def load_aliases(path: Path) -> AliasTable:
    """meta/aliases.tsv: shorthand, canonical_id, download_count (count may be blank)."""
    df = pd.read_csv(path, sep="\t", dtype={"shorthand": str, "canonical_id": str}, keep_default_na=False)
    missing = {"shorthand", "canonical_id", "download_count"} - set(df.columns)
    if missing:
        raise SnapshotError(f"{path}: missing columns {sorted(missing)}")
    counts = pd.to_numeric(df["download_count"], errors="coerce")
    table: AliasTable = {}
    for shorthand, canonical, count in zip(df["shorthand"], df["canonical_id"], counts):
        table.setdefault(shorthand.strip(), []).append(
            (canonical.strip(), None if pd.isna(count) else int(count))
        )
    return table


def resolve_model_alias(name: str, alias_table: AliasTable) -> AliasResolution:
    """Canonical ids pass through; shorthands pick the most downloaded candidate."""
    if "/" in name:
        return AliasResolution(name, True)
    candidates = alias_table.get(name)
    if not candidates:
        return AliasResolution(name, False)
    if len(candidates) > 1 and any(count is None for _, count in candidates):
        # no frequency evidence to break the conflict; flag rather than guess
        return AliasResolution(name, False)
    best = min(candidates, key=lambda c: (-(c[1] or 0), c[0]))
    return AliasResolution(best[0], True)


def parse_front_matter(body: str, counters: Optional[Counter] = None) -> tuple[dict, str]:
    """Split a card's YAML metadata block from its Markdown text."""
    if not body.startswith("---"):
        return {}, body
    lines = body.splitlines(keepends=True)
    for i in range(1, len(lines)):
        if lines[i].strip() == "---":
            block = "".join(lines[1:i])
            rest = "".join(lines[i + 1:])
            try:
                meta = yaml.safe_load(block) or {}
            except yaml.YAMLError:
                if counters is not None:
                    counters["front_matter_malformed"] += 1
                return {}, rest
            return (meta if isinstance(meta, dict) else {}), rest
    return {}, body


def resolve_paper_refs(
    links: Iterable[LinkRef],
    title_index: dict[str, str],
    counters: Optional[Counter] = None,
) -> list[str]:
    """Paper ids a document points at: arXiv ids plus BibTeX titles found in the title index."""
    out: dict[str, None] = {}
    for ref in links:
        if ref.kind is LinkKind.ARXIV_PAPER and ref.canonical_id:
            out.setdefault(ref.canonical_id)
        elif ref.kind is LinkKind.BIBTEX_TITLE and ref.canonical_id:
            paper_id = title_index.get(ref.canonical_id)
            if paper_id is not None:
                out.setdefault(paper_id)
            elif counters is not None:
                counters["bibtex_unresolved"] += 1
    return list(out)
