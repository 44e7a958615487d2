import json
import random
from collections import Counter
from pathlib import Path

import pytest

import evals

from augment import Variant, augment_corpus, header_to_cell, transpose
from config import ALL_METHODS, Settings
from conftest import WORDS, make_table, random_cells
from errors import ValidationError
from evals import (
    EvalConfig,
    EvalReport,
    EvalRow,
    ablate_by_source,
    augmented_candidates,
    augmented_success,
    emit_report,
    index_variants,
    is_success,
    parse_augmentations,
    parse_subset,
    precision_at_k,
    query_runs,
    render_report,
    retrieval_overlap,
    run_evaluation,
    select_queries,
    subset_label,
)
from graph_store import RelatednessGraph
from orchestrator import SearchEngine
from relatedness import CitationFilter, build_table_graphs
from search import RankedResult


def _corpus(seed: int, n: int = 30):
    rng = random.Random(seed)
    tables = {}
    for i in range(n):
        cells, h = random_cells(rng, allow_specials=False)
        kind = "model_card" if i % 3 else "github_readme"
        context = " ".join(rng.choice(WORDS) for _ in range(rng.randint(1, 10)))
        t = make_table(cells, h, models=[f"org/m{i % 6}"], kinds=[kind], context=context)
        tables.setdefault(t.table_id, t)
    return list(tables.values())


def _graphs(corpus):
    return build_table_graphs(corpus, {}, {}, CitationFilter())


def test_parse_subset_accepts_short_and_long_names() -> None:
    assert parse_subset("M+G") == {"model_card", "github_readme"}
    assert parse_subset("model_card+arxiv") == {"model_card", "arxiv_html"}
    assert parse_subset("SS") == {"s2_text"}
    with pytest.raises(ValidationError):
        parse_subset(" + ")
    assert subset_label(None) == "all"
    assert subset_label(frozenset({"github_readme", "model_card"})) == "github_readme+model_card"


def test_eval_config_validation() -> None:
    with pytest.raises(ValidationError):
        EvalConfig(k=0)
    with pytest.raises(ValidationError):
        EvalConfig(methods=["keyword", "magic"])
    with pytest.raises(ValidationError):
        EvalConfig(query_policy="some_tables")
    with pytest.raises(ValidationError):
        EvalConfig(graphs=[])
    cfg = Settings(source_subsets=["M", "M+G"], k=3, _env_file=None)
    eval_cfg = EvalConfig.from_settings(cfg)
    assert eval_cfg.source_subsets == [frozenset({"model_card"}), frozenset({"model_card", "github_readme"})]
    assert eval_cfg.k == 3
    assert EvalConfig.from_settings(Settings(_env_file=None)).source_subsets == [None]


def test_parse_augmentations_accepts_aliases_in_fixed_order() -> None:
    assert parse_augmentations(["header2cell", "transpose"]) == (Variant.TRANSPOSE, Variant.HEADER_TO_CELL)
    assert parse_augmentations(["header_to_cell"]) == (Variant.HEADER_TO_CELL,)
    for bad in ([], ["shufflerow"], ["sideways"]):
        with pytest.raises(ValidationError):
            parse_augmentations(bad)
    with pytest.raises(ValidationError):
        EvalConfig(augmentations=())
    cfg = Settings(augmentations=["header2cell"], _env_file=None)
    assert EvalConfig.from_settings(cfg).augmentations == (Variant.HEADER_TO_CELL,)
    assert EvalConfig().augmentations == (Variant.TRANSPOSE, Variant.HEADER_TO_CELL)


def test_select_queries_respects_policy_and_pool() -> None:
    a, b, c = (make_table([[x, "v"], ["1", "2"]]) for x in "abc")
    g = RelatednessGraph("model", [t.table_id for t in (a, b, c)])
    g.add_edge(a.table_id, b.table_id)
    assert select_queries([a, b, c], g, "all_tables") == [a, b, c]
    assert select_queries([a, b, c], g, "tables_with_positives") == [a, b]
    # b's only positive is outside the pool
    assert select_queries([a, c], g, "tables_with_positives", {a.table_id, c.table_id}) == []


def test_success_maps_variants_to_their_base() -> None:
    a = make_table([["Task", "F1"], ["x", "1"]])
    b = make_table([["Task", "EM"], ["y", "2"]])
    g = RelatednessGraph("model", [a.table_id, b.table_id])
    g.add_edge(a.table_id, b.table_id)
    b_flipped = transpose(b).as_candidate()
    pool = {t.table_id: t for t in (a, b, b_flipped)}
    hit_variant = RankedResult(a.table_id, [(b_flipped.table_id, 1.0)])
    assert is_success(hit_variant, a, g, pool)
    miss = RankedResult(a.table_id, [])
    assert not is_success(miss, a, g, pool)


def test_precision_is_non_decreasing_in_k(cfg: Settings) -> None:
    corpus = _corpus(1)
    graph = _graphs(corpus)["model"]
    for method in ALL_METHODS:
        engine = SearchEngine(cfg).build(corpus, [method])
        values = [precision_at_k(method, graph, corpus, k, engine=engine)[0] for k in range(1, 7)]
        assert values == sorted(values), method
        assert all(0.0 <= v <= 1.0 for v in values)


def test_run_evaluation_agrees_with_precision_at_k(cfg: Settings) -> None:
    corpus = _corpus(2)
    graphs = _graphs(corpus)
    report = run_evaluation(corpus, graphs, EvalConfig(graphs=["model", "dataset", "all"], k=2), cfg)
    assert len(report.rows) == len(ALL_METHODS) * 3
    for row in report.rows:
        engine = SearchEngine(cfg).build(corpus, [row.method])
        expected = precision_at_k(row.method, graphs[row.graph], corpus, 2, engine=engine)
        assert (row.precision, row.queries, row.successes) == expected
    # no model shares a dataset, so that graph has no queries
    dataset_rows = [r for r in report.rows if r.graph == "dataset"]
    assert all(r.queries == 0 and r.precision is None for r in dataset_rows)
    assert report.meta["policy"] == "tables_with_positives"


def test_augmented_success_without_variants_is_plain_success(cfg: Settings) -> None:
    corpus = _corpus(3)
    graph = _graphs(corpus)["model"]
    pool = {t.table_id: t for t in corpus}
    for method in ("keyword", "join", "dense"):
        engine = SearchEngine(cfg).build(corpus, [method])
        for query in select_queries(corpus, graph, "tables_with_positives"):
            counters = Counter()
            plain = is_success(engine.query(query, method, 1), query, graph, pool)
            assert augmented_success(query, method, graph, 1, engine, pool, counters=counters) == plain
            assert counters["missing_variant"] == 2


def test_query_runs_add_transposed_and_header_fused_queries(cfg: Settings) -> None:
    base = make_table([["Model", "MNLI", "QQP"], ["BERT", "84.6", "71.2"], ["RoBERTa", "87.6", "91.9"]])
    other = make_table([["Model", "SST-2"], ["BERT", "93.5"]])
    pool = [base, other] + [a.as_candidate() for a in augment_corpus([base, other], seed=0)]
    variants = index_variants(pool)
    assert variants[(base.table_id, "transpose")].cells == transpose(base).cells
    assert variants[(base.table_id, "header_to_cell")].cells == header_to_cell(base).cells

    engine = SearchEngine(cfg).build(pool, ["keyword", "union"])
    assert len(query_runs(engine, "keyword", base, 1, variants)) == 3
    assert len(query_runs(engine, "keyword", base, 1, None)) == 1
    counters = Counter()
    assert len(query_runs(engine, "union", base, 1, variants, counters=counters)) == 2
    assert counters["union_transpose_exempt"] == 1
    assert len(query_runs(engine, "union", base, 1, variants, union_on_transpose=True)) == 3

    only_fused = (Variant.HEADER_TO_CELL,)
    runs = query_runs(engine, "keyword", base, 1, variants, augmentations=only_fused)
    assert len(runs) == 2
    assert runs[1].query_id == variants[(base.table_id, "header_to_cell")].table_id
    counters = Counter()
    only_transposed = (Variant.TRANSPOSE,)
    assert len(query_runs(engine, "union", base, 1, variants, counters=counters, augmentations=only_transposed)) == 1
    assert counters["union_transpose_exempt"] == 1
    assert len(query_runs(
        engine, "union", base, 1, variants, union_on_transpose=True, augmentations=only_transposed
    )) == 2


def test_augmented_pool_holds_only_the_chosen_augmentations(cfg: Settings, monkeypatch: pytest.MonkeyPatch) -> None:
    corpus = [
        make_table([["Model", metric], ["BERT", str(i)], ["XLNet", str(i + 1)]], models=[f"org/m{i % 2}"])
        for i, metric in enumerate(["F1", "EM", "Acc", "MNLI"])
    ]
    augmented = [a.as_candidate() for a in augment_corpus(corpus, seed=0)]
    assert {"shuffle_row", "shuffle_col", "drop_cell"} <= {t.variant for t in augmented}
    base_ids = {t.table_id for t in corpus}
    assert {t.variant for t in augmented_candidates(augmented, base_ids)} == {"transpose", "header_to_cell"}
    assert {t.variant for t in augmented_candidates(augmented, base_ids, (Variant.TRANSPOSE,))} == {"transpose"}
    assert augmented_candidates(augmented, set()) == []

    pools: list[list] = []

    class RecordingEngine(SearchEngine):
        def build(self, pool, methods=None):
            pools.append(list(pool))
            return super().build(pool, methods)

    monkeypatch.setattr(evals, "SearchEngine", RecordingEngine)
    eval_cfg = EvalConfig(methods=["keyword"], graphs=["model"], augmented=True, augmentations=(Variant.TRANSPOSE,))
    report = run_evaluation(corpus, _graphs(corpus), eval_cfg, cfg, augmented_pool=augmented)
    [pool] = pools
    assert {t.variant for t in pool} == {None, "transpose"}
    assert len(pool) == 2 * len(corpus)
    assert report.meta["augmentations"] == ["transpose"]


def test_augmented_evaluation_runs_over_the_augmented_pool(cfg: Settings) -> None:
    corpus = _corpus(4, n=15)
    graphs = _graphs(corpus)
    augmented = [a.as_candidate() for a in augment_corpus(corpus, seed=0)]
    counters = Counter()
    eval_cfg = EvalConfig(methods=["keyword", "union"], graphs=["model"], augmented=True)
    report = run_evaluation(corpus, graphs, eval_cfg, cfg, augmented_pool=augmented, counters=counters)
    plain = run_evaluation(corpus, graphs, EvalConfig(methods=["keyword", "union"], graphs=["model"]), cfg)
    assert [r.queries for r in report.rows] == [r.queries for r in plain.rows]
    assert report.meta["augmented"] is True
    assert counters["union_transpose_exempt"] == report.rows[1].queries


def test_source_ablation_restricts_queries_and_pool(cfg: Settings) -> None:
    corpus = [t for t in _corpus(5) if "model_card" in t.source_kinds]
    graph = _graphs(corpus)["model"]
    rows = ablate_by_source(
        "keyword", graph, corpus, [None, frozenset({"github_readme"})], cfg=cfg
    )
    assert [r.subset for r in rows] == ["all", "github_readme"]
    assert rows[0].queries > 0
    assert (rows[1].queries, rows[1].precision) == (0, None)


def test_all_tables_policy_needs_another_table_in_the_pool(cfg: Settings) -> None:
    corpus = [
        make_table([["Model", "F1"], ["BERT", "88.5"]], kinds=["model_card"]),
        make_table([["Model", "F1"], ["XLNet", "89.0"]], kinds=["model_card"]),
        make_table([["Task", "EM"], ["squad", "80.1"]], kinds=["github_readme"]),
    ]
    graph = _graphs(corpus)["model"]
    assert select_queries(corpus[2:], graph, "all_tables") == []
    rows = ablate_by_source(
        "keyword", graph, corpus, [None, frozenset({"github_readme"})], query_policy="all_tables", cfg=cfg
    )
    assert rows[0].queries == 3
    assert (rows[1].queries, rows[1].successes, rows[1].precision) == (0, 0, None)


def test_perturbed_queries_skip_header_fusion_for_headerless_tables(cfg: Settings) -> None:
    corpus = [
        make_table([["Model", "F1"], ["BERT", "88.5"]], models=["org/a"]),
        make_table([["Model", "F1"], ["XLNet", "89.0"]], models=["org/a"]),
        make_table([["1", "2"], ["3", "4"]], header_row_count=0, models=["org/a"]),
    ]
    counters = Counter()
    eval_cfg = EvalConfig(methods=["keyword"], graphs=["model"], variant=Variant.HEADER_TO_CELL)
    report = run_evaluation(corpus, _graphs(corpus), eval_cfg, cfg, counters=counters)
    assert counters["perturbation_skipped"] == 1
    assert report.meta["variant"] == "header_to_cell"
    assert report.rows[0].queries == 3


def test_retrieval_overlap() -> None:
    a = {"q1": RankedResult("q1", [("x", 1.0), ("y", 0.5)]), "q2": RankedResult("q2", [])}
    b = {"q1": RankedResult("q1", [("x", 0.9)]), "q2": RankedResult("q2", []), "q3": RankedResult("q3", [])}
    assert retrieval_overlap(a, b) == pytest.approx((0.5 + 1.0) / 2)
    assert retrieval_overlap(a, {}) is None


def test_render_and_emit_report(tmp_path: Path) -> None:
    rows = [
        EvalRow("dense", "paper", "direct", "all", 1, "tables_with_positives", 4, 3, 0.75),
        EvalRow("dense", "model", None, "all", 1, "tables_with_positives", 0, 0, None),
        EvalRow("sparse", "paper", "direct", "all", 1, "tables_with_positives", 4, 1, 0.25),
        EvalRow("sparse", "model", None, "all", 1, "tables_with_positives", 2, 2, 1.0),
    ]
    text = render_report(rows)
    assert text.startswith("subset=all k=1 policy=tables_with_positives\n")
    assert "paper[direct]" in text
    assert "0.7500" in text and "null" in text and "1.0000" in text
    first_words = [line.split()[0] for line in text.splitlines()[1:] if line.strip()]
    assert [w for w in first_words if w in ("dense", "sparse")] == ["dense", "sparse"]

    report = EvalReport(rows=rows, meta={"seed": 0, "corpus_hash": "abc"})
    paths = emit_report(report, tmp_path / "out")
    assert [p.name for p in paths] == ["report.jsonl", "report_meta.json", "report.txt"]
    records = [json.loads(line) for line in paths[0].read_text(encoding="utf-8").splitlines()]
    assert len(records) == 4
    assert records[1]["precision"] is None
    assert json.loads(paths[1].read_text(encoding="utf-8")) == {"corpus_hash": "abc", "seed": 0}
    assert paths[2].read_text(encoding="utf-8") == text
