"""
Offline evaluation harness: Precision@k of each retrieval method against
each relatedness graph, with the any-of-three augmented protocol, source
ablations, structural query perturbations and report emission.
"""
import hashlib
import json
import logging
from collections import Counter
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Iterable, Optional

import pandas as pd

from augment import VARIANT_ALIASES, Variant, apply_variant
from config import ALL_METHODS, Settings, config_hash, settings
from errors import ValidationError
from graph_store import RelatednessGraph
from orchestrator import SearchEngine
from quality import CanonicalTable
from search import RankedResult
from vectorstore import VectorIndex
from workspace import write_jsonl

logger = logging.getLogger(__name__)

REPORT_FIELDS = ["method", "graph", "filter", "subset", "k", "policy", "queries", "successes", "precision"]
SUBSET_ALIASES = {
    "M": "model_card",
    "G": "github_readme",
    "A": "arxiv_html",
    "SS": "s2_text",
    "github": "github_readme",
    "arxiv": "arxiv_html",
}
ALL_SOURCES = "all"
# variants that add query runs and candidates in augmented mode
AUGMENTATIONS = (Variant.TRANSPOSE, Variant.HEADER_TO_CELL)


def parse_subset(label: str) -> frozenset[str]:
    """`M+G`, `model_card+github_readme` and mixes of both."""
    kinds = frozenset(SUBSET_ALIASES.get(part.strip(), part.strip()) for part in label.split("+") if part.strip())
    if not kinds:
        raise ValidationError(f"empty source subset: {label!r}")
    return kinds


def subset_label(kinds: Optional[frozenset[str]]) -> str:
    return ALL_SOURCES if kinds is None else "+".join(sorted(kinds))


def parse_augmentations(names: Iterable[str]) -> tuple[Variant, ...]:
    """`transpose`, `header2cell` or `header_to_cell`, returned in fixed order."""
    chosen = set()
    for name in names:
        key = name.value if isinstance(name, Variant) else name.strip()
        variant = VARIANT_ALIASES.get(key)
        if variant is None:
            try:
                variant = Variant(key)
            except ValueError:
                raise ValidationError(f"unknown augmentation: {name!r}") from None
        chosen.add(variant)
    if not chosen:
        raise ValidationError("at least one augmentation is required")
    extra = chosen - set(AUGMENTATIONS)
    if extra:
        raise ValidationError(f"not an augmentation: {sorted(v.value for v in extra)}")
    return tuple(v for v in AUGMENTATIONS if v in chosen)


@dataclass
class EvalConfig:
    methods: list[str] = field(default_factory=lambda: list(ALL_METHODS))
    graphs: list[str] = field(default_factory=lambda: ["paper", "model", "dataset", "all"])
    k: int = 1
    query_policy: str = "tables_with_positives"
    augmented: bool = False
    augmentations: tuple[Variant, ...] = AUGMENTATIONS
    source_subsets: list[Optional[frozenset[str]]] = field(default_factory=lambda: [None])
    union_on_transpose: bool = False
    variant: Optional[Variant] = None  # perturbation applied to every query
    seed: int = 0
    drop_cell_rate: float = 0.1

    def __post_init__(self):
        if self.k < 1:
            raise ValidationError(f"k must be >= 1, got {self.k}")
        if not self.graphs:
            raise ValidationError("at least one graph is required")
        if self.query_policy not in ("all_tables", "tables_with_positives"):
            raise ValidationError(f"unknown query policy: {self.query_policy}")
        unknown = set(self.methods) - set(ALL_METHODS)
        if unknown:
            raise ValidationError(f"unknown methods: {sorted(unknown)}")
        self.augmentations = parse_augmentations(self.augmentations)

    @classmethod
    def from_settings(cls, cfg: Settings = settings, variant: Optional[Variant] = None) -> "EvalConfig":
        return cls(
            methods=list(cfg.methods),
            graphs=list(cfg.graphs),
            k=cfg.k,
            query_policy=cfg.query_policy,
            augmented=cfg.augmented,
            augmentations=tuple(cfg.augmentations),
            source_subsets=[parse_subset(s) for s in cfg.source_subsets] or [None],
            union_on_transpose=cfg.union_on_transpose,
            variant=variant,
            seed=cfg.seed,
            drop_cell_rate=cfg.drop_cell_rate,
        )


@dataclass
class EvalRow:
    method: str
    graph: str
    filter: Optional[str]
    subset: str
    k: int
    policy: str
    queries: int
    successes: int
    precision: Optional[float]

    def to_record(self) -> dict:
        return asdict(self)


@dataclass
class EvalReport:
    rows: list[EvalRow] = field(default_factory=list)
    meta: dict[str, Any] = field(default_factory=dict)


def corpus_hash(corpus: Iterable[CanonicalTable]) -> str:
    ids = "\n".join(sorted(t.table_id for t in corpus))
    return hashlib.sha256(ids.encode("utf-8")).hexdigest()[:16]


def select_queries(
    tables: list[CanonicalTable],
    graph: RelatednessGraph,
    policy: str,
    pool_ids: Optional[set[str]] = None,
) -> list[CanonicalTable]:
    """Query tables under the policy; positives only count when they are in the pool.

    `all_tables` still needs some other table in the pool to retrieve.
    """
    pool_ids = pool_ids if pool_ids is not None else {t.table_id for t in tables}
    if policy == "all_tables":
        return [t for t in tables if pool_ids - {t.root_id}]
    return [t for t in tables if graph.neighbors(t.root_id) & (pool_ids - {t.root_id})]


def is_success(result: RankedResult, query: CanonicalTable, graph: RelatednessGraph, pool: dict[str, CanonicalTable]) -> bool:
    """Any hit related to the query; augmented candidates count as their base table."""
    return any(graph.related(query.root_id, pool[hit].root_id) for hit in result.table_ids)


def precision(successes: int, queries: int) -> Optional[float]:
    return successes / queries if queries else None


def precision_at_k(
    method: str,
    graph: RelatednessGraph,
    corpus: list[CanonicalTable],
    k: int = 1,
    query_policy: str = "tables_with_positives",
    engine: Optional[SearchEngine] = None,
) -> tuple[Optional[float], int, int]:
    """(precision, queries, successes) of one method against one graph."""
    engine = engine or SearchEngine().build(corpus, [method])
    pool = {t.table_id: t for t in corpus}
    queries = select_queries(corpus, graph, query_policy)
    successes = sum(is_success(engine.query(q, method, k), q, graph, pool) for q in queries)
    if not queries:
        logger.warning("no queries for %s on %s under %s", method, graph.name, query_policy)
    return precision(successes, len(queries)), len(queries), successes


def index_variants(pool: Iterable[CanonicalTable]) -> dict[tuple[str, str], CanonicalTable]:
    return {(t.root_id, t.variant): t for t in pool if t.variant is not None}


def augmented_candidates(
    augmented_pool: Iterable[CanonicalTable],
    base_ids: set[str],
    augmentations: Iterable[Variant] = AUGMENTATIONS,
) -> list[CanonicalTable]:
    """Variants of in-pool tables whose kind is one of the chosen augmentations."""
    kinds = {v.value for v in augmentations}
    return [t for t in augmented_pool if t.root_id in base_ids and t.variant in kinds]


def query_runs(
    engine: SearchEngine,
    method: str,
    query: CanonicalTable,
    k: int,
    variants: Optional[dict[tuple[str, str], CanonicalTable]] = None,
    union_on_transpose: bool = False,
    counters: Optional[Counter] = None,
    augmentations: Iterable[Variant] = AUGMENTATIONS,
) -> list[RankedResult]:
    """Base run, plus one run per chosen augmentation when variants are given."""
    counters = counters if counters is not None else Counter()
    runs = [engine.query(query, method, k)]
    if variants is None:
        return runs
    chosen = set(augmentations)
    for variant in AUGMENTATIONS:
        if variant not in chosen:
            continue
        if variant is Variant.TRANSPOSE and method == "union" and not union_on_transpose:
            counters["union_transpose_exempt"] += 1
            continue
        aug = variants.get((query.root_id, variant.value))
        if aug is None:
            counters["missing_variant"] += 1
            continue
        runs.append(engine.query(aug, method, k))
    return runs


def augmented_success(
    query: CanonicalTable,
    method: str,
    graph: RelatednessGraph,
    k: int,
    engine: SearchEngine,
    pool: dict[str, CanonicalTable],
    union_on_transpose: bool = False,
    counters: Optional[Counter] = None,
    augmentations: Iterable[Variant] = AUGMENTATIONS,
) -> bool:
    """Success if the base query or one of its chosen augmentations finds a related table."""
    runs = query_runs(
        engine, method, query, k, index_variants(pool.values()), union_on_transpose, counters, augmentations
    )
    return any(is_success(r, query, graph, pool) for r in runs)


def _restrict(corpus: list[CanonicalTable], kinds: Optional[frozenset[str]]) -> list[CanonicalTable]:
    return list(corpus) if kinds is None else [t for t in corpus if t.source_kinds & kinds]


def run_evaluation(
    corpus: list[CanonicalTable],
    graphs: dict[str, RelatednessGraph],
    eval_cfg: EvalConfig,
    cfg: Settings = settings,
    augmented_pool: Iterable[CanonicalTable] = (),
    table_vectors: Optional[VectorIndex] = None,
    counters: Optional[Counter] = None,
) -> EvalReport:
    counters = counters if counters is not None else Counter()
    augmented_pool = list(augmented_pool)
    report = EvalReport(meta={
        "corpus_hash": corpus_hash(corpus),
        "config_hash": config_hash(cfg),
        "seed": eval_cfg.seed,
        "policy": eval_cfg.query_policy,
        "augmented": eval_cfg.augmented,
        "augmentations": [v.value for v in eval_cfg.augmentations] if eval_cfg.augmented else None,
        "variant": eval_cfg.variant.value if eval_cfg.variant else None,
    })

    for kinds in eval_cfg.source_subsets:
        label = subset_label(kinds)
        base = _restrict(corpus, kinds)
        if not base:
            logger.warning("source subset %s has no tables", label)
            report.rows.extend(
                EvalRow(m, graphs[g].label, graphs[g].filter_label, label, eval_cfg.k, eval_cfg.query_policy, 0, 0, None)
                for m in eval_cfg.methods for g in eval_cfg.graphs
            )
            continue
        base_ids = {t.table_id for t in base}
        pool_tables = list(base)
        if eval_cfg.augmented:
            pool_tables += augmented_candidates(augmented_pool, base_ids, eval_cfg.augmentations)
        pool = {t.table_id: t for t in pool_tables}
        variants = index_variants(pool_tables) if eval_cfg.augmented else None
        engine = SearchEngine(cfg, table_vectors=table_vectors).build(pool_tables, eval_cfg.methods)

        selected = {g: select_queries(base, graphs[g], eval_cfg.query_policy, base_ids) for g in eval_cfg.graphs}
        needed = sorted({q.table_id for qs in selected.values() for q in qs})
        by_id = {t.table_id: t for t in base}

        for method in eval_cfg.methods:
            runs: dict[str, list[RankedResult]] = {}
            for table_id in needed:
                query = by_id[table_id]
                if eval_cfg.variant is Variant.HEADER_TO_CELL and query.header_row_count < 1:
                    counters["perturbation_skipped"] += 1
                elif eval_cfg.variant is not None:
                    query = apply_variant(query, eval_cfg.variant, eval_cfg.seed, eval_cfg.drop_cell_rate).as_candidate()
                runs[table_id] = query_runs(
                    engine, method, query, eval_cfg.k, variants, eval_cfg.union_on_transpose, counters,
                    eval_cfg.augmentations,
                )
                for r in runs[table_id]:
                    counters.update(f"flag_{flag}" for flag in r.flags)
            for g in eval_cfg.graphs:
                graph = graphs[g]
                queries = selected[g]
                successes = sum(
                    any(is_success(r, q, graph, pool) for r in runs[q.table_id]) for q in queries
                )
                if not queries:
                    counters["empty_query_sets"] += 1
                report.rows.append(EvalRow(
                    method=method,
                    graph=graph.label,
                    filter=graph.filter_label,
                    subset=label,
                    k=eval_cfg.k,
                    policy=eval_cfg.query_policy,
                    queries=len(queries),
                    successes=successes,
                    precision=precision(successes, len(queries)),
                ))
    if counters["empty_query_sets"]:
        logger.warning("%d method/graph cells had no queries", counters["empty_query_sets"])
    return report


def ablate_by_source(
    method: str,
    graph: RelatednessGraph,
    corpus: list[CanonicalTable],
    subsets: list[Optional[frozenset[str]]],
    k: int = 1,
    query_policy: str = "tables_with_positives",
    cfg: Settings = settings,
) -> list[EvalRow]:
    """Per-subset precision with query set and candidate pool both restricted."""
    eval_cfg = EvalConfig(methods=[method], graphs=[graph.name], k=k, query_policy=query_policy, source_subsets=subsets)
    return run_evaluation(corpus, {graph.name: graph}, eval_cfg, cfg).rows


def retrieval_overlap(results_a: dict[str, RankedResult], results_b: dict[str, RankedResult]) -> Optional[float]:
    """Mean Jaccard overlap of two methods' top-k sets over their shared queries."""
    shared = sorted(results_a.keys() & results_b.keys())
    if not shared:
        return None
    total = 0.0
    for q in shared:
        a, b = set(results_a[q].table_ids), set(results_b[q].table_ids)
        total += len(a & b) / len(a | b) if a | b else 1.0
    return total / len(shared)


def report_frame(rows: list[EvalRow]) -> pd.DataFrame:
    return pd.DataFrame([r.to_record() for r in rows], columns=REPORT_FIELDS)


def render_report(rows: list[EvalRow]) -> str:
    """Aligned text: one block per (filter, subset, k, policy), methods as rows, graphs as columns."""
    df = report_frame(rows)
    if df.empty:
        return " ".join(REPORT_FIELDS) + "\n"
    df["filter"] = df["filter"].fillna("-")
    df["cell"] = df["precision"].map(lambda p: "null" if p is None or pd.isna(p) else f"{p:.4f}")
    df["column"] = df.apply(lambda r: r["graph"] if r["filter"] == "-" else f"{r['graph']}[{r['filter']}]", axis=1)
    blocks = []
    for (subset, k, policy), part in df.groupby(["subset", "k", "policy"], sort=False):
        table = part.pivot(index="method", columns="column", values="cell")
        table = table.reindex(index=list(dict.fromkeys(part["method"])), columns=list(dict.fromkeys(part["column"])))
        blocks.append(f"subset={subset} k={k} policy={policy}\n" + table.fillna("").to_string())
    return "\n\n".join(blocks) + "\n"


def emit_report(report: EvalReport, out_dir: Path) -> list[Path]:
    """report.jsonl (one record per row), report_meta.json and report.txt."""
    out_dir.mkdir(parents=True, exist_ok=True)
    jsonl = out_dir / "report.jsonl"
    meta = out_dir / "report_meta.json"
    text = out_dir / "report.txt"
    write_jsonl(jsonl, (r.to_record() for r in report.rows))
    with open(meta, "w", encoding="utf-8", newline="\n") as f:
        json.dump(report.meta, f, indent=2, sort_keys=True)
        f.write("\n")
    with open(text, "w", encoding="utf-8", newline="\n") as f:
        f.write(render_report(report.rows))
    return [jsonl, meta, text]
