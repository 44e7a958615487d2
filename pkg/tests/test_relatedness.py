import random
from collections import Counter
from pathlib import Path

import pytest

from conftest import make_table
from ingestion import SourceDocument, SourceKind, extract_link_graph, load_aliases, load_snapshot
from relatedness import (
    CitationFilter,
    ModelRecord,
    PaperRecord,
    Reference,
    ancestors,
    brute_force_table_graphs,
    build_table_graphs,
    citation_coverage,
    derive_model_records,
    filter_references,
    load_papers,
    models_related_card,
    papers_related,
    title_index,
)

INTENTS = ["methodology", "result", "background"]


def _paper(paper_id: str, *refs: tuple[str, tuple[str, ...], bool]) -> PaperRecord:
    return PaperRecord(paper_id, references=[Reference(c, frozenset(i), infl) for c, i, infl in refs])


def _random_world(rng: random.Random):
    paper_ids = [f"p{i}" for i in range(rng.randint(2, 9))]
    papers = {}
    for p in paper_ids:
        refs = []
        for q in rng.sample(paper_ids, rng.randint(0, len(paper_ids) - 1)):
            if q == p:
                continue
            intents = frozenset(rng.sample(INTENTS, rng.randint(0, 2)))
            refs.append(Reference(q, intents, rng.random() < 0.4))
        papers[p] = PaperRecord(p, references=refs)
    model_ids = [f"org/m{i}" for i in range(rng.randint(2, 7))]
    models = {}
    for m in model_ids:
        models[m] = ModelRecord(
            m,
            papers=set(rng.sample(paper_ids + ["missing"], rng.randint(0, 2))),
            linked_models={x for x in rng.sample(model_ids, rng.randint(0, 1)) if x != m},
            base_models={x for x in rng.sample(model_ids, rng.randint(0, 1)) if x != m},
            datasets=set(rng.sample(["glue", "squad", "imdb"], rng.randint(0, 2))),
        )
    corpus = []
    for i in range(rng.randint(2, 12)):
        owners = rng.sample(model_ids, rng.randint(1, 2))
        corpus.append(make_table([[f"h{i}", "x"], [str(i), "y"]], models=owners))
    return corpus, models, papers


def test_filter_labels_and_enumeration() -> None:
    filters = CitationFilter.all_filters()
    assert len(filters) == 8
    assert len({f.label for f in filters}) == 8
    for f in filters:
        assert CitationFilter.from_label(f.label) == f
    assert CitationFilter("overlap", True, True).label == "overlap+intent+influential"


def test_filter_references() -> None:
    refs = [
        Reference("a", frozenset({"methodology"}), False),
        Reference("b", frozenset({"background"}), True),
        Reference("c", frozenset({"result"}), True),
    ]
    assert filter_references(refs, CitationFilter()) == {"a", "b", "c"}
    assert filter_references(refs, CitationFilter("direct", True, False)) == {"a", "c"}
    assert filter_references(refs, CitationFilter("direct", False, True)) == {"b", "c"}
    assert filter_references(refs, CitationFilter("direct", True, True)) == {"c"}


def test_papers_related_direct_and_overlap() -> None:
    index = {
        "p1": _paper("p1", ("p2", ("methodology",), True), ("x", ("background",), False)),
        "p2": _paper("p2", ("x", ("result",), False)),
        "p3": _paper("p3"),
    }
    direct = CitationFilter("direct")
    overlap = CitationFilter("overlap")
    assert papers_related("p1", "p2", index, direct)
    assert papers_related("p2", "p1", index, direct)
    assert not papers_related("p2", "p3", index, direct)
    assert papers_related("p1", "p2", index, overlap)
    assert not papers_related("p1", "p2", index, CitationFilter("overlap", False, True))
    # self-relatedness needs a non-empty reference list
    assert papers_related("p1", "p1", index, overlap)
    assert not papers_related("p3", "p3", index, overlap)
    assert not papers_related("p1", "p1", index, direct)
    counters = Counter()
    assert not papers_related("p1", "nowhere", index, direct, counters)
    assert counters["paper_pair_missing_from_index"] == 1


def test_card_relatedness_and_closure() -> None:
    models = {
        "a/root": ModelRecord("a/root"),
        "b/child": ModelRecord("b/child", base_models={"a/root"}),
        "c/grandchild": ModelRecord("c/grandchild", base_models={"b/child"}),
        "d/sibling": ModelRecord("d/sibling", base_models={"a/root"}),
        "e/linked": ModelRecord("e/linked", linked_models={"c/grandchild"}),
    }
    assert models_related_card("a/root", "a/root", models)
    assert models_related_card("b/child", "d/sibling", models)
    assert models_related_card("e/linked", "c/grandchild", models)
    assert not models_related_card("c/grandchild", "d/sibling", models)
    assert ancestors("c/grandchild", models) == {"b/child", "a/root"}
    assert models_related_card("c/grandchild", "d/sibling", models, closure=True)


def test_coverage_report() -> None:
    models = {"a/x": ModelRecord("a/x", papers={"p1", "p9"})}
    report = citation_coverage(models, {"p1": _paper("p1")})
    assert (report.referenced, report.present, report.missing) == (2, 1, ["p9"])


def test_graphs_match_brute_force_on_random_worlds() -> None:
    rng = random.Random(20)
    for _ in range(60):
        corpus, models, papers = _random_world(rng)
        closure = rng.random() < 0.3
        for f in CitationFilter.all_filters():
            fast = build_table_graphs(corpus, models, papers, f, closure)
            slow = brute_force_table_graphs(corpus, models, papers, f, closure)
            for level in ("paper", "model", "dataset", "all"):
                assert fast[level].edge_set() == slow[level], (level, f.label)


def test_table_graphs_include_same_model_pairs() -> None:
    t1 = make_table([["a", "b"], ["1", "2"]], models=["org/m"])
    t2 = make_table([["c", "d"], ["3", "4"]], models=["org/m"])
    t3 = make_table([["e", "f"], ["5", "6"]], models=["org/n"])
    graphs = build_table_graphs([t1, t2, t3], {}, {}, CitationFilter())
    assert graphs["model"].edge_set() == {tuple(sorted((t1.table_id, t2.table_id)))}
    assert graphs["paper"].n_edges == 0
    assert graphs["all"].n_tables == 3


def test_filter_monotonicity_on_random_citation_graphs() -> None:
    rng = random.Random(99)
    for _ in range(100):
        corpus, models, papers = _random_world(rng)
        for relation in ("direct", "overlap"):
            edges = {
                (intent, infl): build_table_graphs(
                    corpus, models, papers, CitationFilter(relation, intent, infl)
                )["paper"].edge_set()
                for intent in (False, True)
                for infl in (False, True)
            }
            assert edges[(True, True)] <= edges[(True, False)] <= edges[(False, False)]
            assert edges[(True, True)] <= edges[(False, True)] <= edges[(False, False)]


def test_all_graph_edge_count_bounds_on_random_worlds() -> None:
    rng = random.Random(5)
    for _ in range(50):
        corpus, models, papers = _random_world(rng)
        graphs = build_table_graphs(corpus, models, papers, CitationFilter("overlap"))
        counts = [graphs[level].n_edges for level in ("paper", "model", "dataset")]
        assert max(counts) <= graphs["all"].n_edges <= sum(counts)


def test_fixture_models_and_graphs(snapshot_dir: Path) -> None:
    docs = list(load_snapshot(snapshot_dir))
    links = extract_link_graph(docs)
    papers = load_papers(snapshot_dir / "meta" / "papers.jsonl")
    aliases = load_aliases(snapshot_dir / "meta" / "aliases.tsv")
    dataset_ids = {d.key for d in docs if d.source_kind.value == "dataset_card"}
    counters = Counter()
    models = derive_model_records(docs, links, aliases, title_index(papers), dataset_ids, None, counters)

    assert models["textattack/bert-base-uncased-MNLI"].base_models == {"google-bert/bert-base-uncased"}
    assert models["textattack/bert-base-uncased-MNLI"].datasets == {"glue"}
    assert models["cardiffnlp/twitter-roberta-base-sentiment"].base_models == {"FacebookAI/roberta-base"}
    assert models["openai-community/gpt2"].papers == {"radford2019language"}
    # the second paper is linked from the google-research/bert README
    assert models["google-bert/bert-base-uncased"].papers == {"1810.04805", "1908.08962"}
    assert models["google-bert/bert-base-uncased"].datasets == {"bookcorpus", "wikipedia"}
    assert "1910.09700" not in models["microsoft/deberta-base"].papers
    assert models["distilbert/distilbert-base-uncased"].linked_models == {"google-bert/bert-base-uncased"}
    # openwebtext has no dataset card in the snapshot
    assert counters["dataset_unvalidated"] >= 1
    assert citation_coverage(models, papers).missing == []

    corpus = [
        make_table([["a", "b"], ["1", "2"]], models=["google-bert/bert-base-uncased"]),
        make_table([["c", "d"], ["3", "4"]], models=["FacebookAI/roberta-base"]),
        make_table([["e", "f"], ["5", "6"]], models=["openai-community/gpt2"]),
    ]
    for f in CitationFilter.all_filters():
        fast = build_table_graphs(corpus, models, papers, f)
        slow = brute_force_table_graphs(corpus, models, papers, f)
        assert {level: g.edge_set() for level, g in fast.items()} == slow
    direct = build_table_graphs(corpus, models, papers, CitationFilter("direct"))["paper"]
    # RoBERTa cites BERT; GPT-2 cites BERT as background
    assert direct.related(corpus[0].table_id, corpus[1].table_id)
    assert direct.related(corpus[0].table_id, corpus[2].table_id)
    strict = build_table_graphs(corpus, models, papers, CitationFilter("direct", True, True))["paper"]
    assert strict.related(corpus[0].table_id, corpus[1].table_id)
    assert not strict.related(corpus[0].table_id, corpus[2].table_id)


def test_papers_reach_models_through_readmes_and_dataset_cards() -> None:
    docs = [
        SourceDocument(
            "model_cards/org__tiny.md", SourceKind.MODEL_CARD, "u",
            "---\ndatasets:\n- qa_set\n---\nCode: https://github.com/org/tiny\n",
        ),
        SourceDocument("github/org__tiny.md", SourceKind.GITHUB_README, "u", "Paper: https://arxiv.org/abs/2101.00001v2\n"),
        SourceDocument("dataset_cards/qa_set.md", SourceKind.DATASET_CARD, "u", "See https://arxiv.org/abs/2101.00002\n"),
        SourceDocument("github/org__other.md", SourceKind.GITHUB_README, "u", "https://arxiv.org/abs/2101.00003\n"),
    ]
    models = derive_model_records(docs, extract_link_graph(docs), dataset_ids={"qa_set"})
    assert models["org/tiny"].papers == {"2101.00001", "2101.00002"}
    assert models["org/tiny"].datasets == {"qa_set"}


@pytest.mark.parametrize("relation", ["direct", "overlap"])
def test_models_sharing_one_paper(relation: str) -> None:
    papers = {"p": _paper("p", ("q", ("methodology",), True))}
    models = {"a/x": ModelRecord("a/x", papers={"p"}), "a/y": ModelRecord("a/y", papers={"p"})}
    corpus = [make_table([["a", "b"], ["1", "2"]], models=["a/x"]), make_table([["c", "d"], ["3", "4"]], models=["a/y"])]
    g = build_table_graphs(corpus, models, papers, CitationFilter(relation))["paper"]
    # two models on one paper relate only when the paper relates to itself
    assert g.n_edges == (1 if relation == "overlap" else 0)
