"""
Command-line entry point. Each command is one pipeline stage over a file
workspace; the manifest records what every stage produced from which inputs
and config, so re-running an up-to-date stage is a no-op.

    python main.py ingest --snapshot fixtures/snapshot --workspace ws
    python main.py extract|clean|dedup|augment|relate|index --workspace ws
    python main.py search --query <table_id> --method dense -k 5 --workspace ws
    python main.py eval --workspace ws
    python main.py stats --workspace ws
"""
import argparse
import json
import logging
import sys
from collections import Counter
from pathlib import Path
from typing import Callable, Optional, Sequence

from augment import VARIANT_ALIASES, Variant, augment_corpus
from bm25_store import TermIndex
from config import ALL_GRAPHS, ALL_METHODS, Settings, config_hash, load_settings
from errors import MissingStageError, ModelTablesError, SnapshotError, ValidationError
from evals import EvalConfig, emit_report, parse_augmentations, run_evaluation
from graph_store import RelatednessGraph, edge_file_name
from ingestion import (
    LinkRef,
    SourceDocument,
    SourceKind,
    extract_link_graph,
    load_aliases,
    load_snapshot,
)
from orchestrator import SearchEngine, build_indices
from processors import CorpusEntry, DocumentTableProcessor, WhitespaceTableRecoverer, build_corpus
from quality import (
    anchor_filter,
    clean_corpus,
    dedup,
    document_anchors,
    read_corpus,
    read_frequencies,
    strategic_filter,
    write_corpus,
    write_frequencies,
)
from relatedness import (
    CitationFilter,
    all_graph_name,
    citation_coverage,
    derive_model_records,
    iter_filter_graphs,
    load_models,
    load_papers,
    paper_graph_name,
    title_index,
    write_models,
    write_papers,
)
from stats import write_stats
from vectorstore import VectorIndex, VectorStoreManager
from workspace import WorkspaceManifest, read_jsonl, tree_digest, workspace_lock, write_jsonl

logger = logging.getLogger("modeltables")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_MISSING_STAGE = 0, 1, 2, 3

DOCUMENTS = "documents.jsonl"
LINKS = "links.jsonl"
PAPERS = "papers.jsonl"
MODELS = "models.jsonl"
RAW_TABLES = "raw_tables.jsonl"
CLEAN_TABLES = "clean_tables.jsonl"
CORPUS = "corpus.jsonl"
FREQUENCIES = "frequencies.tsv"
AUGMENTED = "augmented.jsonl"
EDGES = "edges"
COVERAGE = "coverage.json"
INDEX = "index"
TERMS = "index/terms.bin"
STATS = "stats"


class CLIParser(argparse.ArgumentParser):
    """Usage errors exit 1; exit 2 is reserved for bad data."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# ----------- WORKSPACE IO -----------
def read_documents(ws: Path) -> list[SourceDocument]:
    return [SourceDocument.from_record(r) for r in read_jsonl(ws / DOCUMENTS)]


def read_links(ws: Path) -> dict[str, list[LinkRef]]:
    return {r["doc_id"]: [LinkRef.from_record(x) for x in r["links"]] for r in read_jsonl(ws / LINKS)}


def read_entries(path: Path) -> list[CorpusEntry]:
    return [CorpusEntry.from_record(r) for r in read_jsonl(path)]


def active_filter(cfg: Settings) -> CitationFilter:
    return CitationFilter(cfg.relation, cfg.require_intent, cfg.require_influential)


def load_graphs(ws: Path, names: Sequence[str], table_ids: list[str]) -> dict[str, RelatednessGraph]:
    graphs = {}
    for name in names:
        path = ws / EDGES / edge_file_name(name)
        if not path.exists():
            raise MissingStageError("relate", f"graph {name}")
        graphs[name] = RelatednessGraph.read_edges(path, table_ids, name)
    return graphs


# ----------- STAGES -----------
def stage_ingest(ws: Path, cfg: Settings, counters: Counter) -> list[Path]:
    snapshot = cfg.snapshot_dir
    docs = list(load_snapshot(snapshot, counters))
    link_graph = extract_link_graph(docs, counters, cfg.workers)

    meta = snapshot / "meta"
    papers = load_papers(meta / "papers.jsonl") if (meta / "papers.jsonl").exists() else {}
    aliases = load_aliases(meta / "aliases.tsv") if (meta / "aliases.tsv").exists() else {}
    extra = load_models(meta / "models.jsonl") if (meta / "models.jsonl").exists() else {}
    dataset_ids = (
        {d.key for d in docs if d.source_kind is SourceKind.DATASET_CARD} if cfg.validate_datasets else set()
    )
    models = derive_model_records(docs, link_graph, aliases, title_index(papers), dataset_ids, extra, counters)

    coverage = citation_coverage(models, papers)
    if coverage.missing:
        logger.warning("%d of %d referenced papers are missing from the citation index",
                       len(coverage.missing), coverage.referenced)

    write_jsonl(ws / DOCUMENTS, (d.to_record() for d in docs))
    write_jsonl(ws / LINKS, ({"doc_id": d, "links": [r.to_record() for r in refs]} for d, refs in link_graph.items()))
    write_papers(ws / PAPERS, papers)
    write_models(ws / MODELS, models)
    return [ws / DOCUMENTS, ws / LINKS, ws / PAPERS, ws / MODELS]


def stage_extract(ws: Path, cfg: Settings, counters: Counter) -> list[Path]:
    processor = DocumentTableProcessor(WhitespaceTableRecoverer(cfg.recoverer_min_agreement))
    entries = build_corpus(
        read_documents(ws),
        read_links(ws),
        title_index(load_papers(ws / PAPERS)),
        processor,
        require_paper_link=cfg.require_paper_link,
        counters=counters,
        workers=cfg.workers,
    )
    write_jsonl(ws / RAW_TABLES, (e.to_record() for e in entries))
    return [ws / RAW_TABLES]


def stage_clean(ws: Path, cfg: Settings, counters: Counter) -> list[Path]:
    entries = clean_corpus(read_entries(ws / RAW_TABLES), cfg.footnote_markers, cfg.stitch_sources, counters)
    write_jsonl(ws / CLEAN_TABLES, (e.to_record() for e in entries))
    return [ws / CLEAN_TABLES]


def stage_dedup(ws: Path, cfg: Settings, counters: Counter) -> list[Path]:
    unique, frequencies = dedup(read_entries(ws / CLEAN_TABLES))
    if cfg.anchor_stage != "none":
        anchors = document_anchors(read_documents(ws), read_links(ws))
        titles = {p.title for p in load_papers(ws / PAPERS).values() if p.title}
        unique = anchor_filter(unique, anchors, titles, cfg.anchor_stage, counters)
    corpus = strategic_filter(unique, cfg.min_body_rows, cfg.min_cols, cfg.include_sources, counters)
    kept = {t.table_id for t in corpus}
    logger.info("canonical corpus: %d unique tables (%d before filtering)", len(corpus), len(unique))
    write_corpus(ws / CORPUS, corpus)
    write_frequencies(ws / FREQUENCIES, {k: v for k, v in frequencies.items() if k in kept})
    return [ws / CORPUS, ws / FREQUENCIES]


def stage_augment(ws: Path, cfg: Settings, counters: Counter) -> list[Path]:
    augmented = augment_corpus(read_corpus(ws / CORPUS), tuple(Variant), cfg.seed, cfg.drop_cell_rate, counters)
    write_jsonl(ws / AUGMENTED, (a.as_candidate().to_record() for a in augmented))
    return [ws / AUGMENTED]


def stage_relate(ws: Path, cfg: Settings, counters: Counter) -> list[Path]:
    corpus = read_corpus(ws / CORPUS)
    models = load_models(ws / MODELS)
    papers = load_papers(ws / PAPERS)
    outputs = []
    for _, graphs in iter_filter_graphs(corpus, models, papers, cfg.shared_ancestor_closure):
        to_write = [graphs["paper"], graphs["all"]]
        if not outputs:
            to_write += [graphs["model"], graphs["dataset"]]
        for g in to_write:
            path = ws / EDGES / edge_file_name(g.name)
            g.write_edges(path)
            outputs.append(path)
    coverage = citation_coverage(models, papers)
    with open(ws / COVERAGE, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(coverage._asdict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    counters["papers_missing_from_index"] = len(coverage.missing)
    print(ws / EDGES / edge_file_name(paper_graph_name(active_filter(cfg))))
    return sorted(outputs) + [ws / COVERAGE]


def stage_index(ws: Path, cfg: Settings, counters: Counter) -> list[Path]:
    external = VectorIndex.read(cfg.vectors_file) if cfg.vectors_file else None
    terms, table_vectors, metadata_vectors = build_indices(read_corpus(ws / CORPUS), cfg, external=external)
    counters["indexed_terms"] = len(terms.postings)
    terms.save(ws / TERMS)
    store = VectorStoreManager(ws / INDEX)
    return [ws / TERMS, store.put("table", table_vectors), store.put("metadata", metadata_vectors)]


def stage_eval(ws: Path, cfg: Settings, counters: Counter) -> list[Path]:
    corpus = read_corpus(ws / CORPUS)
    table_ids = [t.table_id for t in corpus]
    f = active_filter(cfg)
    by_level = {"paper": paper_graph_name(f), "model": "model", "dataset": "dataset", "all": all_graph_name(f)}
    if cfg.citation_sweep:
        names = [paper_graph_name(x) for x in CitationFilter.all_filters()]
    else:
        names = [by_level[g] for g in cfg.graphs]
    graphs = load_graphs(ws, names, table_ids)

    variant = VARIANT_ALIASES[cfg.variant] if cfg.variant else None
    eval_cfg = EvalConfig.from_settings(cfg, variant)
    eval_cfg.graphs = names
    augmented = read_corpus(ws / AUGMENTED) if cfg.augmented else []
    table_vectors = VectorStoreManager(ws / INDEX).get_store("table")
    report = run_evaluation(corpus, graphs, eval_cfg, cfg, augmented, table_vectors, counters)
    return emit_report(report, ws)


def stage_stats(ws: Path, cfg: Settings, counters: Counter) -> list[Path]:
    corpus = read_corpus(ws / CORPUS)
    table_ids = [t.table_id for t in corpus]
    f = active_filter(cfg)
    names = [paper_graph_name(x) for x in CitationFilter.all_filters()] + ["model", "dataset", all_graph_name(f)]
    graphs = list(load_graphs(ws, names, table_ids).values())

    def shapes(entries: list[CorpusEntry]):
        return [(e.table.source_kind.value, e.table.n_rows, e.table.n_cols) for e in entries]

    stages = {
        "raw": shapes(read_entries(ws / RAW_TABLES)),
        "clean": shapes(read_entries(ws / CLEAN_TABLES)),
        "corpus": [("+".join(sorted(t.source_kinds)), t.n_rows, t.n_cols) for t in corpus],
    }
    return write_stats(ws / STATS, graphs, read_frequencies(ws / FREQUENCIES), stages)


# command -> (stage fn, needed stages, input files)
STAGES: dict[str, tuple[Callable[[Path, Settings, Counter], list[Path]], tuple[str, ...], tuple[str, ...]]] = {
    "ingest": (stage_ingest, (), ()),
    "extract": (stage_extract, ("ingest",), (DOCUMENTS, LINKS, PAPERS)),
    "clean": (stage_clean, ("extract",), (RAW_TABLES,)),
    "dedup": (stage_dedup, ("clean",), (CLEAN_TABLES, DOCUMENTS, LINKS, PAPERS)),
    "augment": (stage_augment, ("dedup",), (CORPUS,)),
    "relate": (stage_relate, ("ingest", "dedup"), (CORPUS, MODELS, PAPERS)),
    "index": (stage_index, ("dedup",), (CORPUS,)),
    "eval": (stage_eval, ("dedup", "relate", "index"), (CORPUS, EDGES, INDEX)),
    "stats": (stage_stats, ("extract", "clean", "dedup", "relate"), (RAW_TABLES, CLEAN_TABLES, CORPUS, FREQUENCIES, EDGES)),
}


def run_stage(name: str, cfg: Settings, force: bool = False) -> int:
    ws = cfg.workspace_dir
    fn, needs, input_names = STAGES[name]
    manifest = WorkspaceManifest.load(ws)
    needs = needs + (("augment",) if name == "eval" and cfg.augmented else ())
    for dep in needs:
        if not manifest.has(dep):
            raise MissingStageError(dep, name)

    inputs = [ws / n for n in input_names]
    if name == "ingest":
        if cfg.snapshot_dir is None:
            raise ValidationError("ingest needs a snapshot directory (--snapshot)")
        if not cfg.snapshot_dir.is_dir():
            raise SnapshotError(f"snapshot directory not found: {cfg.snapshot_dir}")
        inputs = [cfg.snapshot_dir]
    if name == "index" and cfg.vectors_file:
        inputs.append(cfg.vectors_file)
    if name == "eval" and cfg.augmented:
        inputs.append(ws / AUGMENTED)
    inputs_hash = tree_digest(inputs)
    cfg_hash = config_hash(cfg)

    if not force and manifest.is_fresh(name, inputs_hash, cfg_hash):
        logger.info("%s is up to date", name)
        return EXIT_OK
    counters: Counter = Counter()
    outputs = fn(ws, cfg, counters)
    manifest.record(name, outputs, inputs_hash, cfg_hash)
    if counters:
        logger.info("%s: %s", name, ", ".join(f"{k}={v}" for k, v in sorted(counters.items())))
    return EXIT_OK


def run_search(cfg: Settings, query_id: str, method: str) -> int:
    ws = cfg.workspace_dir
    manifest = WorkspaceManifest.load(ws)
    for dep in ("dedup", "index"):
        if not manifest.has(dep):
            raise MissingStageError(dep, "search")
    corpus = read_corpus(ws / CORPUS)
    pool = {t.table_id: t for t in corpus}
    if "~" in query_id and (ws / AUGMENTED).exists():
        pool.update({t.table_id: t for t in read_corpus(ws / AUGMENTED)})
    query = pool.get(query_id)
    if query is None:
        raise ValidationError(f"unknown table id: {query_id}")

    store = VectorStoreManager(ws / INDEX)
    engine = SearchEngine(
        cfg,
        table_vectors=store.get_store("table"),
        term_index=TermIndex.load(ws / TERMS),
        metadata_vectors=store.get_store("metadata"),
    ).build(corpus, [method])
    result = engine.query(query, method, cfg.k)
    for flag in sorted(result.flags):
        logger.warning("query %s: %s", query_id, flag)
    for rank, (table_id, score) in enumerate(result.hits, start=1):
        print(f"{rank}\t{table_id}\t{score:.6f}")
    return EXIT_OK


# ----------- ARGUMENTS -----------
def augmentation_list(value: str) -> list[str]:
    """`transpose,header2cell` as canonical variant names; unknown names are a usage error."""
    names = [n.strip() for n in value.split(",") if n.strip()]
    try:
        return [v.value for v in parse_augmentations(names)]
    except ValidationError as e:
        raise argparse.ArgumentTypeError(str(e)) from None


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--workspace", type=Path, help="workspace directory")
    common.add_argument("--config", type=Path, help="TOML config file (flat key = value)")
    common.add_argument("--force", action="store_true", help="re-run even when the stage is up to date")
    common.add_argument("--seed", type=int)
    common.add_argument("--workers", type=int)
    common.add_argument("--verbose", action="store_true", default=None)

    parser = CLIParser(prog="modeltables", description="Model-lake table corpus and benchmark pipeline.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=CLIParser)

    ingest = sub.add_parser("ingest", parents=[common], help="load a snapshot, extract links and model records")
    ingest.add_argument("--snapshot", type=Path)
    sub.add_parser("extract", parents=[common], help="parse tables and route them to model cards")
    sub.add_parser("clean", parents=[common], help="repair alignment, footnotes, fragments and artifacts")
    sub.add_parser("dedup", parents=[common], help="filter and deduplicate into the canonical corpus")
    sub.add_parser("augment", parents=[common], help="write transposed, header-fused and perturbed tables")

    relate = sub.add_parser("relate", parents=[common], help="build relatedness graphs")
    index = sub.add_parser("index", parents=[common], help="build term and vector indices")
    index.add_argument("--vectors", type=Path, help="external table embeddings (`dim N` header)")
    search = sub.add_parser("search", parents=[common], help="rank tables for one query table")
    search.add_argument("--query", required=True, help="query table id")
    search.add_argument("--method", choices=ALL_METHODS, required=True)
    evaluate = sub.add_parser("eval", parents=[common], help="Precision@k of methods against graphs")
    evaluate.add_argument("--method", choices=ALL_METHODS, action="append", dest="methods")
    evaluate.add_argument("--graph", choices=ALL_GRAPHS, action="append", dest="graphs")
    evaluate.add_argument("--variant", choices=sorted(VARIANT_ALIASES))
    evaluate.add_argument("--sources", help="comma-separated source subsets, e.g. M,M+G,M+G+A")
    evaluate.add_argument("--policy", choices=["all_tables", "tables_with_positives"])
    evaluate.add_argument("--augmented", action="store_true", default=None)
    evaluate.add_argument("--augmentations", type=augmentation_list, help="comma-separated: transpose,header2cell")
    evaluate.add_argument("--all-filters", action="store_true", default=None, dest="citation_sweep")
    stats = sub.add_parser("stats", parents=[common], help="densities and distributions")

    for p in (relate, evaluate, stats):
        p.add_argument("--relation", choices=["direct", "overlap"])
        p.add_argument("--intent", action="store_true", default=None)
        p.add_argument("--influential", action="store_true", default=None)
    for p in (search, evaluate):
        p.add_argument("-k", "--k", type=int, dest="k")
    return parser


def settings_from_args(args: argparse.Namespace) -> Settings:
    get = lambda name: getattr(args, name, None)  # noqa: E731
    sources = get("sources")
    return load_settings(
        args.config,
        workspace_dir=get("workspace"),
        snapshot_dir=get("snapshot"),
        seed=get("seed"),
        workers=get("workers"),
        verbose=get("verbose"),
        relation=get("relation"),
        require_intent=get("intent"),
        require_influential=get("influential"),
        k=get("k"),
        methods=get("methods"),
        graphs=get("graphs"),
        variant=get("variant"),
        source_subsets=[s for s in sources.split(",") if s.strip()] if sources else None,
        query_policy=get("policy"),
        augmented=get("augmented"),
        augmentations=get("augmentations"),
        citation_sweep=get("citation_sweep"),
        vectors_file=get("vectors"),
    )


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = settings_from_args(args)
    except FileNotFoundError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except ValueError as e:
        print(f"error: invalid configuration: {e}", file=sys.stderr)
        return EXIT_USAGE

    logging.basicConfig(
        level=logging.DEBUG if cfg.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
        force=True,
    )
    try:
        with workspace_lock(cfg.workspace_dir):
            if args.command == "search":
                return run_search(cfg, args.query, args.method)
            return run_stage(args.command, cfg, force=args.force)
    except MissingStageError as e:
        logger.error("%s", e)
        return EXIT_MISSING_STAGE
    except (ModelTablesError, OSError, ValueError, KeyError) as e:
        logger.error("%s failed: %s", args.command, e)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
