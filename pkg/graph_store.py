"""
Table relatedness graphs.
Every corpus table is a node, so density and degree statistics see isolated
tables too; edges are unordered pairs with no self-loops.
"""
import logging
from collections import Counter
from pathlib import Path
from typing import Iterable

import networkx as nx

logger = logging.getLogger(__name__)


class RelatednessGraph:
    def __init__(self, name: str, table_ids: Iterable[str]):
        self.name = name  # e.g. "model", "paper:overlap+intent"
        self.graph = nx.Graph()
        self.graph.add_nodes_from(sorted(table_ids))

    @property
    def label(self) -> str:
        return self.name.split(":", 1)[0]

    @property
    def filter_label(self) -> str | None:
        return self.name.split(":", 1)[1] if ":" in self.name else None

    @property
    def n_tables(self) -> int:
        return self.graph.number_of_nodes()

    @property
    def n_edges(self) -> int:
        return self.graph.number_of_edges()

    def add_edge(self, a: str, b: str) -> None:
        if a == b:
            return
        if a not in self.graph or b not in self.graph:
            raise KeyError(f"edge ({a}, {b}) references a table outside the corpus")
        self.graph.add_edge(a, b)

    def add_edges(self, pairs: Iterable[tuple[str, str]]) -> None:
        for a, b in pairs:
            self.add_edge(a, b)

    def related(self, a: str, b: str) -> bool:
        return a != b and self.graph.has_edge(a, b)

    def neighbors(self, table_id: str) -> set[str]:
        if table_id not in self.graph:
            return set()
        return set(self.graph.neighbors(table_id))

    def edges(self) -> list[tuple[str, str]]:
        """Canonical (a < b) pairs, sorted."""
        return sorted(tuple(sorted(e)) for e in self.graph.edges())

    def edge_set(self) -> set[tuple[str, str]]:
        return set(self.edges())

    def union(self, others: Iterable["RelatednessGraph"], name: str) -> "RelatednessGraph":
        out = RelatednessGraph(name, self.graph.nodes)
        out.graph.add_edges_from(self.graph.edges())
        for g in others:
            out.graph.add_edges_from(g.graph.edges())
        return out

    def write_edges(self, path: Path) -> int:
        path.parent.mkdir(parents=True, exist_ok=True)
        edges = self.edges()
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            for a, b in edges:
                f.write(f"{a}\t{b}\t{self.name}\n")
        return len(edges)

    @classmethod
    def read_edges(cls, path: Path, table_ids: Iterable[str], name: str | None = None) -> "RelatednessGraph":
        pairs = []
        file_name = None
        with open(path, "r", encoding="utf-8") as f:
            for line in f:
                if not line.strip():
                    continue
                a, b, label = line.rstrip("\n").split("\t")
                file_name = file_name or label
                pairs.append((a, b))
        g = cls(name or file_name or path.stem, table_ids)
        g.add_edges(pairs)
        return g


def edge_file_name(name: str) -> str:
    return name.replace(":", "_") + ".tsv"


def graph_density(g: RelatednessGraph) -> tuple[float, int]:
    """(density in percent over ordered off-diagonal pairs, ordered nonzero entries)."""
    nonzero = 2 * g.n_edges
    if g.n_tables < 2:
        return 0.0, nonzero
    # nx.density uses the same n(n-1)/2 undirected denominator
    return 100.0 * nx.density(g.graph), nonzero


def per_query_positive_counts(g: RelatednessGraph) -> dict[str, int]:
    return {node: deg for node, deg in sorted(g.graph.degree())}


def positive_count_histogram(g: RelatednessGraph) -> dict[int, int]:
    """positives-per-table -> number of tables with that many positives."""
    return dict(sorted(Counter(per_query_positive_counts(g).values()).items()))


def write_distribution(path: Path, counts: dict[str, int]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for table_id, n in counts.items():
            f.write(f"{table_id}\t{n}\n")
