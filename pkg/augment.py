"""
Table augmentations. Transpose and header-to-cell normalize layout and make
column semantics explicit; the shuffles and cell dropping are structural
perturbations applied to queries at inference time.
"""
import hashlib
import logging
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Optional

import numpy as np

from errors import ValidationError
from quality import CanonicalTable

logger = logging.getLogger(__name__)

RNG_ALGORITHM = "numpy-pcg64"
HEADER_SEPARATOR = ": "


class Variant(str, Enum):
    TRANSPOSE = "transpose"
    HEADER_TO_CELL = "header_to_cell"
    SHUFFLE_COL = "shuffle_col"
    SHUFFLE_ROW = "shuffle_row"
    DROP_CELL = "drop_cell"


# command-line spellings
VARIANT_ALIASES = {
    "transpose": Variant.TRANSPOSE,
    "header2cell": Variant.HEADER_TO_CELL,
    "shufflecol": Variant.SHUFFLE_COL,
    "shufflerow": Variant.SHUFFLE_ROW,
    "dropcell": Variant.DROP_CELL,
}
STOCHASTIC = {Variant.SHUFFLE_COL, Variant.SHUFFLE_ROW, Variant.DROP_CELL}


@dataclass
class AugmentedTable:
    base_id: str
    variant: Variant
    cells: list[list[str]]
    header_row_count: int
    seed: Optional[int] = None
    base: Optional[CanonicalTable] = field(default=None, repr=False, compare=False)

    def as_candidate(self) -> CanonicalTable:
        """The table as a search candidate; metadata is inherited from the base table."""
        base = self.base
        return CanonicalTable(
            cells=self.cells,
            header_row_count=self.header_row_count,
            caption=base.caption if base else None,
            model_ids=set(base.model_ids) if base else set(),
            source_kinds=set(base.source_kinds) if base else set(),
            context_text=base.context_text if base else "",
            base_id=self.base_id,
            variant=self.variant.value,
            seed=self.seed,
            rng=RNG_ALGORITHM if self.variant in STOCHASTIC else None,
        )


def seeded_rng(base_id: str, variant: Variant, seed: int) -> np.random.Generator:
    """Generator fully determined by (base_id, variant, seed)."""
    digest = hashlib.sha256(f"{base_id}\x00{variant.value}".encode("utf-8")).digest()
    entropy = [seed, int.from_bytes(digest[:8], "big"), int.from_bytes(digest[8:16], "big")]
    return np.random.default_rng(np.random.SeedSequence(entropy))


def transpose(t: CanonicalTable) -> AugmentedTable:
    cells = [list(col) for col in zip(*t.cells)]
    return AugmentedTable(
        base_id=t.root_id,
        variant=Variant.TRANSPOSE,
        cells=cells,
        header_row_count=min(t.header_row_count, 1),
        base=t,
    )


def column_labels(t: CanonicalTable) -> list[str]:
    """One label per column; stacked header rows are joined with spaces."""
    labels = []
    for j in range(t.n_cols):
        parts: list[str] = []
        for row in t.cells[: t.header_row_count]:
            value = row[j].strip()
            if value and (not parts or parts[-1] != value):
                parts.append(value)
        labels.append(" ".join(parts))
    return labels


def header_to_cell(t: CanonicalTable) -> AugmentedTable:
    if t.header_row_count < 1:
        raise ValidationError(f"table {t.table_id} has no header row to fuse into its cells")
    labels = column_labels(t)
    body = [[f"{labels[j]}{HEADER_SEPARATOR}{v}" for j, v in enumerate(row)] for row in t.body]
    return AugmentedTable(
        base_id=t.root_id,
        variant=Variant.HEADER_TO_CELL,
        cells=[list(r) for r in t.cells[: t.header_row_count]] + body,
        header_row_count=t.header_row_count,
        base=t,
    )


def shuffle_columns(t: CanonicalTable, seed: int) -> AugmentedTable:
    rng = seeded_rng(t.root_id, Variant.SHUFFLE_COL, seed)
    order = rng.permutation(t.n_cols)
    return AugmentedTable(
        base_id=t.root_id,
        variant=Variant.SHUFFLE_COL,
        cells=[[row[j] for j in order] for row in t.cells],
        header_row_count=t.header_row_count,
        seed=seed,
        base=t,
    )


def shuffle_rows(t: CanonicalTable, seed: int) -> AugmentedTable:
    rng = seeded_rng(t.root_id, Variant.SHUFFLE_ROW, seed)
    body = t.body
    order = rng.permutation(len(body))
    return AugmentedTable(
        base_id=t.root_id,
        variant=Variant.SHUFFLE_ROW,
        cells=[list(r) for r in t.cells[: t.header_row_count]] + [list(body[i]) for i in order],
        header_row_count=t.header_row_count,
        seed=seed,
        base=t,
    )


def drop_cells(t: CanonicalTable, rate: float, seed: int) -> AugmentedTable:
    """Blank each body cell independently with probability `rate`."""
    if not 0.0 <= rate < 1.0:
        raise ValidationError(f"drop rate must be in [0, 1), got {rate}")
    rng = seeded_rng(t.root_id, Variant.DROP_CELL, seed)
    body = t.body
    mask = rng.random((len(body), t.n_cols)) < rate
    dropped = [["" if mask[i, j] else v for j, v in enumerate(row)] for i, row in enumerate(body)]
    return AugmentedTable(
        base_id=t.root_id,
        variant=Variant.DROP_CELL,
        cells=[list(r) for r in t.cells[: t.header_row_count]] + dropped,
        header_row_count=t.header_row_count,
        seed=seed,
        base=t,
    )


def apply_variant(t: CanonicalTable, variant: Variant, seed: int = 0, rate: float = 0.1) -> AugmentedTable:
    if variant is Variant.TRANSPOSE:
        return transpose(t)
    if variant is Variant.HEADER_TO_CELL:
        return header_to_cell(t)
    if variant is Variant.SHUFFLE_COL:
        return shuffle_columns(t, seed)
    if variant is Variant.SHUFFLE_ROW:
        return shuffle_rows(t, seed)
    return drop_cells(t, rate, seed)


def augment_corpus(
    corpus: Iterable[CanonicalTable],
    variants: Iterable[Variant] = tuple(Variant),
    seed: int = 0,
    rate: float = 0.1,
    counters: Optional[Counter] = None,
) -> list[AugmentedTable]:
    """Every requested variant of every table; headerless tables skip header fusion."""
    counters = counters if counters is not None else Counter()
    variants = list(variants)
    out = []
    for t in corpus:
        for variant in variants:
            if variant is Variant.HEADER_TO_CELL and t.header_row_count < 1:
                counters["header_to_cell_skipped"] += 1
                continue
            out.append(apply_variant(t, variant, seed, rate))
    if counters["header_to_cell_skipped"]:
        logger.info("%d headerless tables have no header-to-cell variant", counters["header_to_cell_skipped"])
    return out
