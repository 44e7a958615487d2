import random
from collections import Counter
from pathlib import Path

import pytest

from conftest import HTML_WITH_NOTES, S2_WITH_NOTES, random_cells
from errors import ValidationError
from ingestion import SourceDocument, SourceKind, extract_link_graph, load_snapshot
from processors import (
    DocumentTableProcessor,
    WhitespaceTableRecoverer,
    build_corpus,
    extract_html_tables,
    extract_markdown_tables,
    extract_s2_tables,
    is_note_line,
    recover_text_table,
    render_markdown,
    split_pipe_row,
)
from relatedness import load_papers, title_index


def test_split_pipe_row_escapes_and_code_spans() -> None:
    assert split_pipe_row("| a | b \\| c | `x | y` |") == ["a", "b | c", "`x | y`"]
    assert split_pipe_row("a | b") == ["a", "b"]
    assert split_pipe_row("| a |  |") == ["a", ""]
    assert split_pipe_row("no pipes here") is None


def test_markdown_table_with_caption_and_footnote_area() -> None:
    body = (
        "Intro text.\n\n"
        "Table: GLUE results\n\n"
        "| Model | MNLI |\n"
        "|:------|-----:|\n"
        "| BERT | 84.6* |\n"
        "* dev set\n"
        "\n"
        "Trailing prose."
    )
    [t] = extract_markdown_tables(body, "model_cards/a__b.md")
    assert t.cells == [["Model", "MNLI"], ["BERT", "84.6*"]]
    assert t.header_row_count == 1
    assert t.caption == "Table: GLUE results"
    assert t.trailing_text == "* dev set"
    assert t.origin == ("model_cards/a__b.md", 0)


def test_markdown_tables_inside_code_fences_are_ignored() -> None:
    body = "```\n| a | b |\n|---|---|\n| 1 | 2 |\n```\n\n| c | d |\n|---|---|\n| 3 | 4 |\n"
    tables = extract_markdown_tables(body)
    assert [t.cells for t in tables] == [[["c", "d"], ["3", "4"]]]


def test_headerless_pipe_block_and_prose_pipes() -> None:
    body = "| 1 | 2 |\n| 3 | 4 |\n\nchoose a | b in prose\n"
    tables = extract_markdown_tables(body)
    assert len(tables) == 1
    assert tables[0].header_row_count == 0
    assert tables[0].cells == [["1", "2"], ["3", "4"]]


def test_unfenced_pipe_runs_need_consistent_widths() -> None:
    body = "a | b\n1 | 2\n3 | 4\n\nx | y | z\nonly | two\n\nsingle | line\n"
    tables = extract_markdown_tables(body)
    assert [t.cells for t in tables] == [[["a", "b"], ["1", "2"], ["3", "4"]]]
    assert tables[0].header_row_count == 0


def test_render_markdown_rejects_stacked_headers() -> None:
    with pytest.raises(ValidationError):
        render_markdown([["a"], ["b"], ["c"]], 2)


def test_markdown_round_trip_on_random_tables() -> None:
    rng = random.Random(7)
    for _ in range(1000):
        cells, h = random_cells(rng)
        h = min(h, 1)
        text = render_markdown(cells, h)
        [parsed] = extract_markdown_tables(text)
        assert parsed.cells == cells
        assert parsed.header_row_count == h


def test_html_tables_expand_spans_and_take_figure_captions(snapshot_dir: Path) -> None:
    markup = (snapshot_dir / "arxiv" / "2003.10555.html").read_text(encoding="utf-8")
    counters = Counter()
    [t] = extract_html_tables(markup, "arxiv/2003.10555.html", counters=counters)
    assert counters["html_empty_table"] == 1
    assert t.header_row_count == 1
    assert [row[0] for row in t.cells] == ["Size", "Small", "Small", "Base", "Base"]
    assert t.caption.startswith("Table 1: Comparison of small models")
    assert "ELECTRA-Small outperforms" in t.context_text


def test_html_nested_table_is_separate() -> None:
    markup = (
        "<table><tr><th>a</th><th>b</th></tr>"
        "<tr><td>1</td><td><table><tr><td>x</td><td>y</td></tr></table></td></tr></table>"
    )
    tables = extract_html_tables(markup)
    assert [t.cells for t in tables] == [[["a", "b"], ["1", "x y"]], [["x", "y"]]]


def test_html_footnotes_come_from_tfoot_and_following_blocks() -> None:
    [t] = extract_html_tables(HTML_WITH_NOTES, "arxiv/x.html")
    assert t.cells == [["Model", "MNLI"], ["BERT", "84.6†"], ["RoBERTa", "87.6‡"]]
    assert t.caption == "Table 1: GLUE."
    assert t.trailing_text == "† dev set\n‡ single model"


def test_s2_footnotes_are_split_off_the_blob() -> None:
    [t] = extract_s2_tables(S2_WITH_NOTES, "s2/x.txt", WhitespaceTableRecoverer())
    assert t.cells == [["Model", "MNLI", "SST-2"], ["BERT", "84.6*", "93.5"], ["RoBERTa", "87.6", "94.8[1]"]]
    assert t.trailing_text == "* dev set\n[1] single model"


def test_note_lines_exclude_marker_led_data_rows() -> None:
    assert is_note_line("† dev set")
    assert is_note_line("[2] averaged over 5 runs")
    assert not is_note_line("*BERT   84.6   93.5")
    assert not is_note_line("Other prose.")


def test_whitespace_recoverer_and_unrecoverable_blob() -> None:
    recoverer = WhitespaceTableRecoverer()
    assert recoverer.recover("Model   F1\nBERT   88.5\nRoBERTa   90.1") == [
        ["Model", "F1"], ["BERT", "88.5"], ["RoBERTa", "90.1"],
    ]
    counters = Counter()
    assert recover_text_table("just prose", recoverer, "s2/x.txt", 0, counters) is None
    assert counters["s2_unrecovered"] == 1


def test_s2_blobs_take_caption_and_mentions(snapshot_dir: Path) -> None:
    body = (snapshot_dir / "s2" / "2002.10957.txt").read_text(encoding="utf-8")
    counters = Counter()
    [t] = extract_s2_tables(body, "s2/2002.10957.txt", WhitespaceTableRecoverer(), counters)
    assert counters["s2_unrecovered"] == 1
    assert t.source_kind is SourceKind.S2_TEXT
    assert t.cells[0] == ["Model", "#Param", "SQuAD2", "MNLI-m", "SST-2"]
    assert t.n_rows == 5
    assert t.caption.startswith("Table 2:")
    assert "Table 2 shows the results" in t.context_text


def test_processor_routes_by_source_kind() -> None:
    processor = DocumentTableProcessor()
    card = SourceDocument(
        "model_cards/a__b.md", SourceKind.MODEL_CARD, "u", "---\nlicense: mit\n---\n| x | y |\n|---|---|\n| 1 | 2 |\n"
    )
    [t] = processor.process(card)
    assert t.source_kind is SourceKind.MODEL_CARD
    assert "license" not in t.context_text
    assert t.context_text.startswith("| x | y |")


def test_build_corpus_routes_cards_to_papers_and_readmes(snapshot_dir: Path) -> None:
    docs = list(load_snapshot(snapshot_dir))
    links = extract_link_graph(docs)
    titles = title_index(load_papers(snapshot_dir / "meta" / "papers.jsonl"))
    counters = Counter()
    entries = build_corpus(docs, links, titles, counters=counters)

    by_origin = {e.table.origin: e for e in entries}
    assert len(by_origin) == len(entries)
    # the BERT paper is reached from the BERT card only
    bert_paper = by_origin[("arxiv/1810.04805.html", 0)]
    assert bert_paper.model_ids == {"google-bert/bert-base-uncased"}
    # the DistilBERT paper is referenced by two cards
    distil_paper = by_origin[("arxiv/1910.01108.html", 0)]
    assert distil_paper.model_ids == {"distilbert/distilbert-base-uncased", "distilbert/distilgpt2"}
    # fairseq README reached through the RoBERTa card's repository link
    assert ("github/facebookresearch__fairseq.md", 1) in by_origin
    # the GPT-2 paper is found through its BibTeX title but has no document
    assert counters["missing_paper_document"] >= 1
    assert counters["missing_github_readme"] >= 1
    assert all(e.model_ids for e in entries)
    assert not any(e.table.source_kind is SourceKind.DATASET_CARD for e in entries)


def test_build_corpus_card_validity_filter(snapshot_dir: Path) -> None:
    docs = list(load_snapshot(snapshot_dir))
    links = extract_link_graph(docs)
    counters = Counter()
    entries = build_corpus(docs, links, {}, require_paper_link=True, counters=counters)
    models = set().union(*(e.model_ids for e in entries))
    # the template card links only the placeholder paper
    assert "someuser/my-finetuned-model" not in models
    assert counters["cards_without_paper_or_tables"] >= 1


def test_build_corpus_shares_model_ids_across_identical_tables() -> None:
    table = "| x | y |\n|---|---|\n| 1 | 2 |\n"
    docs = [
        SourceDocument("model_cards/a__one.md", SourceKind.MODEL_CARD, "u", "Code: https://github.com/org/repo\n"),
        SourceDocument("model_cards/b__two.md", SourceKind.MODEL_CARD, "u", table),
        SourceDocument("github/org__repo.md", SourceKind.GITHUB_README, "u", table),
    ]
    entries = build_corpus(docs, extract_link_graph(docs))
    by_origin = {e.table.origin: e for e in entries}
    assert set(by_origin) == {("github/org__repo.md", 0), ("model_cards/b__two.md", 0)}
    for entry in entries:
        assert entry.model_ids == {"a/one", "b/two"}
