"""
Ground-truth relatedness. Models are related through their papers (citation
links under one of eight filters), their cards (explicit links and shared
lineage) and shared datasets; a table pair is related when some pair of
their models is. Relations are computed at model level and expanded to
tables, never as a table x table matrix.
"""
import itertools
import logging
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, NamedTuple, Optional

import networkx as nx

from graph_store import RelatednessGraph
from ingestion import (
    AliasTable,
    LinkKind,
    LinkRef,
    SourceDocument,
    SourceKind,
    normalize_title,
    parse_front_matter,
    resolve_model_alias,
    resolve_paper_refs,
)
from quality import CanonicalTable
from workspace import read_jsonl, write_jsonl

logger = logging.getLogger(__name__)

STRONG_INTENTS = frozenset({"methodology", "result"})
GRAPH_LEVELS = ("paper", "model", "dataset")


@dataclass(frozen=True)
class Reference:
    cited_id: str
    intents: frozenset[str] = frozenset()
    is_influential: bool = False


@dataclass
class PaperRecord:
    paper_id: str
    title: str = ""
    references: list[Reference] = field(default_factory=list)

    def to_record(self) -> dict:
        return {
            "paper_id": self.paper_id,
            "title": self.title,
            "references": [
                {"cited_id": r.cited_id, "intents": sorted(r.intents), "is_influential": r.is_influential}
                for r in self.references
            ],
        }

    @classmethod
    def from_record(cls, rec: dict) -> "PaperRecord":
        refs = [
            Reference(
                cited_id=r["cited_id"],
                intents=frozenset(i.lower() for i in r.get("intents") or []),
                is_influential=bool(r.get("is_influential", False)),
            )
            for r in rec.get("references") or []
            if r.get("cited_id")
        ]
        return cls(paper_id=rec["paper_id"], title=rec.get("title", ""), references=refs)


@dataclass
class ModelRecord:
    model_id: str
    papers: set[str] = field(default_factory=set)
    linked_models: set[str] = field(default_factory=set)
    base_models: set[str] = field(default_factory=set)
    datasets: set[str] = field(default_factory=set)

    def merge(self, other: "ModelRecord") -> None:
        self.papers |= other.papers
        self.linked_models |= other.linked_models
        self.base_models |= other.base_models
        self.datasets |= other.datasets

    def to_record(self) -> dict:
        return {
            "model_id": self.model_id,
            "papers": sorted(self.papers),
            "linked_models": sorted(self.linked_models),
            "base_models": sorted(self.base_models),
            "datasets": sorted(self.datasets),
        }

    @classmethod
    def from_record(cls, rec: dict) -> "ModelRecord":
        return cls(
            model_id=rec["model_id"],
            papers=set(rec.get("papers", [])),
            linked_models=set(rec.get("linked_models", [])),
            base_models=set(rec.get("base_models", [])),
            datasets=set(rec.get("datasets", [])),
        )


@dataclass(frozen=True)
class CitationFilter:
    relation: str = "direct"  # direct | overlap
    require_intent: bool = False
    require_influential: bool = False

    @property
    def label(self) -> str:
        parts = [self.relation]
        if self.require_intent:
            parts.append("intent")
        if self.require_influential:
            parts.append("influential")
        return "+".join(parts)

    @classmethod
    def from_label(cls, label: str) -> "CitationFilter":
        parts = label.split("+")
        return cls(parts[0], "intent" in parts[1:], "influential" in parts[1:])

    @classmethod
    def all_filters(cls) -> list["CitationFilter"]:
        return [
            cls(relation, intent, influential)
            for relation in ("direct", "overlap")
            for intent in (False, True)
            for influential in (False, True)
        ]


PaperIndex = dict[str, PaperRecord]
ModelIndex = dict[str, ModelRecord]


class CoverageReport(NamedTuple):
    referenced: int
    present: int
    missing: list[str]


# ----------- PAPER LEVEL -----------
def filter_references(refs: Iterable[Reference], f: CitationFilter) -> set[str]:
    out = set()
    for r in refs:
        if f.require_intent and not (r.intents & STRONG_INTENTS):
            continue
        if f.require_influential and not r.is_influential:
            continue
        out.add(r.cited_id)
    return out


def papers_related(
    p_a: str,
    p_b: str,
    citation_index: PaperIndex,
    f: CitationFilter,
    counters: Optional[Counter] = None,
) -> bool:
    a, b = citation_index.get(p_a), citation_index.get(p_b)
    if a is None or b is None:
        if counters is not None:
            counters["paper_pair_missing_from_index"] += 1
        return False
    refs_a = filter_references(a.references, f)
    if p_a == p_b:
        # a paper never cites itself; under overlap it shares its whole list
        return f.relation == "overlap" and bool(refs_a)
    refs_b = filter_references(b.references, f)
    if f.relation == "direct":
        return p_b in refs_a or p_a in refs_b
    return bool(refs_a & refs_b)


def citation_coverage(models: ModelIndex, papers: PaperIndex) -> CoverageReport:
    referenced = set().union(*(m.papers for m in models.values())) if models else set()
    missing = sorted(referenced - papers.keys())
    return CoverageReport(len(referenced), len(referenced) - len(missing), missing)


# ----------- MODEL LEVEL -----------
def _record(models: ModelIndex, model_id: str) -> ModelRecord:
    return models.get(model_id) or ModelRecord(model_id)


def ancestors(model_id: str, models: ModelIndex) -> set[str]:
    """Transitive base_model closure."""
    seen: set[str] = set()
    stack = list(_record(models, model_id).base_models)
    while stack:
        m = stack.pop()
        if m in seen or m == model_id:
            continue
        seen.add(m)
        stack.extend(_record(models, m).base_models)
    return seen


def _bases(model_id: str, models: ModelIndex, closure: bool) -> set[str]:
    return ancestors(model_id, models) if closure else set(_record(models, model_id).base_models)


def models_related_paper(
    m_a: str,
    m_b: str,
    models: ModelIndex,
    citation_index: PaperIndex,
    f: CitationFilter,
    counters: Optional[Counter] = None,
) -> bool:
    pa, pb = _record(models, m_a).papers, _record(models, m_b).papers
    return any(papers_related(x, y, citation_index, f, counters) for x in sorted(pa) for y in sorted(pb))


def models_related_card(m_a: str, m_b: str, models: ModelIndex, closure: bool = False) -> bool:
    if m_a == m_b:
        return True
    a, b = _record(models, m_a), _record(models, m_b)
    if m_b in a.linked_models or m_a in b.linked_models:
        return True
    bases_a, bases_b = _bases(m_a, models, closure), _bases(m_b, models, closure)
    if m_b in bases_a or m_a in bases_b:
        return True
    return bool(bases_a & bases_b)


def models_related_dataset(m_a: str, m_b: str, models: ModelIndex) -> bool:
    return bool(_record(models, m_a).datasets & _record(models, m_b).datasets)


def _clique(g: nx.Graph, members: Iterable[str]) -> None:
    members = sorted(set(members))
    g.add_edges_from((m, m) for m in members)
    g.add_edges_from(itertools.combinations(members, 2))


def paper_model_graph(
    model_ids: Iterable[str],
    models: ModelIndex,
    citation_index: PaperIndex,
    f: CitationFilter,
) -> nx.Graph:
    """Model pairs related through their papers; self-loops mark self-related models."""
    model_ids = sorted(set(model_ids))
    g = nx.Graph()
    g.add_nodes_from(model_ids)
    paper_models: dict[str, set[str]] = defaultdict(set)
    for m in model_ids:
        for p in _record(models, m).papers:
            if p in citation_index:
                paper_models[p].add(m)
    refs = {p: filter_references(citation_index[p].references, f) for p in paper_models}

    related_papers: set[tuple[str, str]] = set()
    if f.relation == "direct":
        for p, cited in refs.items():
            for q in cited:
                if q != p and q in paper_models:
                    related_papers.add((p, q))
    else:
        cited_by: dict[str, set[str]] = defaultdict(set)
        for p, cited in refs.items():
            for c in cited:
                cited_by[c].add(p)
        for citing in cited_by.values():
            citing = sorted(citing)
            related_papers.update((p, p) for p in citing)
            related_papers.update(itertools.combinations(citing, 2))

    for p, q in related_papers:
        g.add_edges_from((a, b) for a in paper_models[p] for b in paper_models[q])
    return g


def card_model_graph(model_ids: Iterable[str], models: ModelIndex, closure: bool = False) -> nx.Graph:
    """Explicit card links, declared lineage, shared base models; every model relates to itself."""
    model_ids = sorted(set(model_ids))
    present = set(model_ids)
    g = nx.Graph()
    g.add_nodes_from(model_ids)
    g.add_edges_from((m, m) for m in model_ids)
    children: dict[str, set[str]] = defaultdict(set)
    for m in model_ids:
        rec = _record(models, m)
        g.add_edges_from((m, linked) for linked in rec.linked_models if linked in present)
        bases = _bases(m, models, closure)
        g.add_edges_from((m, b) for b in bases if b in present)
        for b in bases:
            children[b].add(m)
    for kids in children.values():
        _clique(g, kids)
    return g


def dataset_model_graph(model_ids: Iterable[str], models: ModelIndex) -> nx.Graph:
    model_ids = sorted(set(model_ids))
    g = nx.Graph()
    g.add_nodes_from(model_ids)
    users: dict[str, set[str]] = defaultdict(set)
    for m in model_ids:
        for d in _record(models, m).datasets:
            users[d].add(m)
    for members in users.values():
        _clique(g, members)
    return g


# ----------- TABLE LEVEL -----------
def _expand(model_graph: nx.Graph, tables_of: dict[str, list[str]], out: RelatednessGraph) -> None:
    for a, b in model_graph.edges():
        for ta in tables_of.get(a, []):
            for tb in tables_of.get(b, []):
                if ta != tb:
                    out.graph.add_edge(ta, tb)


def paper_graph_name(f: CitationFilter) -> str:
    return f"paper:{f.label}"


def all_graph_name(f: CitationFilter) -> str:
    return f"all:{f.label}"


def build_table_graphs(
    corpus: list[CanonicalTable],
    models: ModelIndex,
    citation_index: PaperIndex,
    f: CitationFilter,
    closure: bool = False,
) -> dict[str, RelatednessGraph]:
    """{paper, model, dataset, all} graphs over the corpus' table ids."""
    table_ids = [t.table_id for t in corpus]
    tables_of: dict[str, list[str]] = defaultdict(list)
    for t in corpus:
        for m in sorted(t.model_ids):
            tables_of[m].append(t.table_id)
    model_ids = sorted(tables_of)

    level_graphs = {
        "paper": paper_model_graph(model_ids, models, citation_index, f),
        "model": card_model_graph(model_ids, models, closure),
        "dataset": dataset_model_graph(model_ids, models),
    }
    names = {"paper": paper_graph_name(f), "model": "model", "dataset": "dataset"}
    graphs = {}
    for level, model_graph in level_graphs.items():
        g = RelatednessGraph(names[level], table_ids)
        _expand(model_graph, tables_of, g)
        graphs[level] = g
    graphs["all"] = graphs["paper"].union([graphs["model"], graphs["dataset"]], all_graph_name(f))
    for level, g in graphs.items():
        logger.info("%s graph: %d tables, %d edges", g.name, g.n_tables, g.n_edges)
    return graphs


def brute_force_table_graphs(
    corpus: list[CanonicalTable],
    models: ModelIndex,
    citation_index: PaperIndex,
    f: CitationFilter,
    closure: bool = False,
) -> dict[str, set[tuple[str, str]]]:
    """Literal table-pair double loop; reference for small corpora only."""
    edges: dict[str, set[tuple[str, str]]] = {"paper": set(), "model": set(), "dataset": set()}
    ordered = sorted(corpus, key=lambda t: t.table_id)
    for i, ti in enumerate(ordered):
        for tj in ordered[i + 1:]:
            pairs = [(a, b) for a in sorted(ti.model_ids) for b in sorted(tj.model_ids)]
            edge = (ti.table_id, tj.table_id)
            if any(models_related_paper(a, b, models, citation_index, f) for a, b in pairs):
                edges["paper"].add(edge)
            if any(models_related_card(a, b, models, closure) for a, b in pairs):
                edges["model"].add(edge)
            if any(models_related_dataset(a, b, models) for a, b in pairs):
                edges["dataset"].add(edge)
    edges["all"] = edges["paper"] | edges["model"] | edges["dataset"]
    return edges


# ----------- RECORDS -----------
def load_papers(path: Path) -> PaperIndex:
    index: PaperIndex = {}
    for rec in read_jsonl(path):
        paper = PaperRecord.from_record(rec)
        index.setdefault(paper.paper_id, paper)
    return index


def write_papers(path: Path, papers: PaperIndex) -> int:
    return write_jsonl(path, (papers[p].to_record() for p in sorted(papers)))


def load_models(path: Path) -> ModelIndex:
    index: ModelIndex = {}
    for rec in read_jsonl(path):
        record = ModelRecord.from_record(rec)
        if record.model_id in index:
            index[record.model_id].merge(record)
        else:
            index[record.model_id] = record
    return index


def write_models(path: Path, models: ModelIndex) -> int:
    return write_jsonl(path, (models[m].to_record() for m in sorted(models)))


def title_index(papers: PaperIndex) -> dict[str, str]:
    """Normalized title -> paper id, first paper id wins on collisions."""
    out: dict[str, str] = {}
    for paper_id in sorted(papers):
        title = normalize_title(papers[paper_id].title)
        if title:
            out.setdefault(title, paper_id)
    return out


def _as_list(value) -> list[str]:
    if value is None:
        return []
    if isinstance(value, str):
        return [value]
    if isinstance(value, (list, tuple)):
        return [str(v) for v in value if v]
    return []


def _resolve_models(names: Iterable[str], aliases: AliasTable, counters: Counter) -> set[str]:
    out = set()
    for name in names:
        resolution = resolve_model_alias(name.strip(), aliases)
        if not resolution.resolved:
            counters["model_alias_unresolved"] += 1
        out.add(resolution.model_id)
    return out


def _match_dataset(name: str, dataset_ids: set[str]) -> Optional[str]:
    if name in dataset_ids:
        return name
    short = name.rsplit("/", 1)[-1]
    return short if short in dataset_ids else None


def derive_model_records(
    docs: Iterable[SourceDocument],
    link_graph: dict[str, list[LinkRef]],
    aliases: Optional[AliasTable] = None,
    titles: Optional[dict[str, str]] = None,
    dataset_ids: Optional[set[str]] = None,
    extra: Optional[ModelIndex] = None,
    counters: Optional[Counter] = None,
) -> ModelIndex:
    """ModelRecords from card front matter and links, merged with hand-curated records.

    A model's papers are those its card links, plus those linked from its GitHub
    READMEs and from the cards of its datasets.
    """
    counters = counters if counters is not None else Counter()
    aliases = aliases or {}
    titles = titles or {}
    dataset_ids = dataset_ids or set()
    docs = list(docs)
    readmes = {d.key: d for d in docs if d.source_kind is SourceKind.GITHUB_README}
    dataset_cards = {d.key: d for d in docs if d.source_kind is SourceKind.DATASET_CARD}
    card_keys = set(dataset_cards)

    def linked_papers(doc: Optional[SourceDocument]) -> set[str]:
        if doc is None:
            return set()
        return set(resolve_paper_refs(link_graph.get(doc.doc_id, []), titles))

    models: ModelIndex = {}
    for doc in docs:
        if doc.source_kind is not SourceKind.MODEL_CARD:
            continue
        model_id = doc.key
        links = link_graph.get(doc.doc_id, [])
        meta, _ = parse_front_matter(doc.body, counters)

        linked = _resolve_models(
            (r.canonical_id for r in links if r.kind is LinkKind.HF_MODEL and r.canonical_id), aliases, counters
        )
        bases = _resolve_models(_as_list(meta.get("base_model")), aliases, counters)
        datasets = set(_as_list(meta.get("datasets")))
        datasets |= {r.canonical_id for r in links if r.kind is LinkKind.HF_DATASET and r.canonical_id}
        if dataset_ids:
            matched = {_match_dataset(d, dataset_ids) for d in datasets}
            counters["dataset_unvalidated"] += sum(1 for d in matched if d is None)
            datasets = {d for d in matched if d is not None}

        papers = set(resolve_paper_refs(links, titles, counters))
        for ref in links:
            if ref.kind is LinkKind.GITHUB_REPO:
                papers |= linked_papers(readmes.get(ref.canonical_id))
        for name in sorted(datasets):
            papers |= linked_papers(dataset_cards.get(_match_dataset(name, card_keys)))

        record = ModelRecord(
            model_id=model_id,
            papers=papers,
            linked_models=linked - {model_id},
            base_models=bases - {model_id},
            datasets=datasets,
        )
        if model_id in models:
            models[model_id].merge(record)
        else:
            models[model_id] = record

    for model_id, record in sorted((extra or {}).items()):
        if model_id in models:
            models[model_id].merge(record)
        else:
            models[model_id] = ModelRecord.from_record(record.to_record())
    if counters["model_alias_unresolved"]:
        logger.warning("%d model references could not be resolved", counters["model_alias_unresolved"])
    return dict(sorted(models.items()))


def iter_filter_graphs(
    corpus: list[CanonicalTable],
    models: ModelIndex,
    citation_index: PaperIndex,
    closure: bool = False,
) -> Iterator[tuple[CitationFilter, dict[str, RelatednessGraph]]]:
    """Graphs under each of the eight citation filters."""
    for f in CitationFilter.all_filters():
        yield f, build_table_graphs(corpus, models, citation_index, f, closure)
