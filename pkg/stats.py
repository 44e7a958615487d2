"""
Corpus and ground-truth statistics: graph densities per citation filter,
duplicate-frequency and positives-per-query distributions, and table shapes
per source and pipeline stage.
"""
import logging
from collections import Counter
from pathlib import Path
from typing import Iterable

import pandas as pd

from graph_store import (
    RelatednessGraph,
    edge_file_name,
    graph_density,
    per_query_positive_counts,
    positive_count_histogram,
)

logger = logging.getLogger(__name__)


def density_table(graphs: Iterable[RelatednessGraph]) -> pd.DataFrame:
    rows = []
    for g in graphs:
        density, nonzero = graph_density(g)
        rows.append({
            "graph": g.label,
            "filter": g.filter_label or "-",
            "tables": g.n_tables,
            "edges": g.n_edges,
            "nonzero_entries": nonzero,
            "density_pct": round(density, 4),
        })
    return pd.DataFrame(rows, columns=["graph", "filter", "tables", "edges", "nonzero_entries", "density_pct"])


def duplicate_histogram(frequencies: dict[str, int]) -> pd.DataFrame:
    """occurrences -> number of distinct tables seen that many times."""
    counts = sorted(Counter(frequencies.values()).items())
    return pd.DataFrame(counts, columns=["occurrences", "tables"])


def positives_histogram(g: RelatednessGraph) -> pd.DataFrame:
    return pd.DataFrame(sorted(positive_count_histogram(g).items()), columns=["positives", "tables"])


def shape_summary(stages: dict[str, Iterable[tuple[str, int, int]]]) -> pd.DataFrame:
    """stage -> (source_kind, n_rows, n_cols) triples, summarized per stage and source."""
    records = [
        {"stage": stage, "source": kind, "rows": n_rows, "cols": n_cols}
        for stage, shapes in stages.items()
        for kind, n_rows, n_cols in shapes
    ]
    df = pd.DataFrame(records, columns=["stage", "source", "rows", "cols"])
    if df.empty:
        return pd.DataFrame(columns=["stage", "source", "tables", "mean_rows", "mean_cols"])
    out = (
        df.groupby(["stage", "source"], sort=True)
        .agg(tables=("rows", "size"), mean_rows=("rows", "mean"), mean_cols=("cols", "mean"))
        .reset_index()
    )
    # stage order follows the pipeline, not the alphabet
    out["stage"] = pd.Categorical(out["stage"], categories=list(stages), ordered=True)
    return out.sort_values(["stage", "source"]).reset_index(drop=True)


def write_tsv(df: pd.DataFrame, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    df.to_csv(path, sep="\t", index=False, lineterminator="\n", float_format="%.4f")
    return path


def write_stats(
    out_dir: Path,
    graphs: list[RelatednessGraph],
    frequencies: dict[str, int],
    stages: dict[str, Iterable[tuple[str, int, int]]],
) -> list[Path]:
    written = [
        write_tsv(density_table(graphs), out_dir / "density.tsv"),
        write_tsv(duplicate_histogram(frequencies), out_dir / "duplicate_frequencies.tsv"),
        write_tsv(shape_summary(stages), out_dir / "table_shapes.tsv"),
    ]
    for g in graphs:
        counts = pd.DataFrame(list(per_query_positive_counts(g).items()), columns=["table_id", "positives"])
        written.append(write_tsv(counts, out_dir / f"positives_{edge_file_name(g.name)}"))
        written.append(write_tsv(positives_histogram(g), out_dir / f"positives_hist_{edge_file_name(g.name)}"))
    logger.info("wrote %d statistics files to %s", len(written), out_dir)
    return written
