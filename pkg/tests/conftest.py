import random
import shutil
from pathlib import Path
from typing import Iterable, Optional

import pytest

from config import Settings
from quality import CanonicalTable

FIXTURE_SNAPSHOT = Path(__file__).resolve().parent.parent / "fixtures" / "snapshot"

WORDS = [
    "bert", "roberta", "mnli", "qqp", "sst-2", "cola", "accuracy", "f1", "loss",
    "epoch", "base", "large", "glue", "squad", "params", "layers", "dev", "test",
]

# tables with footnotes in a <tfoot>, a trailing paragraph and a trailing blob line
HTML_WITH_NOTES = (
    "<figure><table><tr><th>Model</th><th>MNLI</th></tr>"
    "<tr><td>BERT</td><td>84.6†</td></tr>"
    "<tr><td>RoBERTa</td><td>87.6‡</td></tr>"
    "<tfoot><tr><td colspan='2'>† dev set</td></tr></tfoot></table>"
    "<figcaption>Table 1: GLUE.</figcaption>"
    "<p>‡ single model</p><p>Other prose.</p></figure>"
)
S2_WITH_NOTES = (
    "Table 1: Results.\n"
    "Model   MNLI   SST-2\n"
    "BERT   84.6*   93.5\n"
    "RoBERTa   87.6   94.8[1]\n"
    "* dev set\n"
    "\n"
    "[1] single model\n"
)


def make_table(
    cells: list[list[str]],
    header_row_count: int = 1,
    models: Iterable[str] = ("org/model",),
    kinds: Iterable[str] = ("model_card",),
    caption: Optional[str] = None,
    context: str = "",
) -> CanonicalTable:
    return CanonicalTable(
        cells=[list(r) for r in cells],
        header_row_count=header_row_count,
        caption=caption,
        model_ids=set(models),
        source_kinds=set(kinds),
        context_text=context,
    )


def random_cell(rng: random.Random, allow_specials: bool = True) -> str:
    kind = rng.random()
    if kind < 0.35:
        return f"{rng.uniform(0, 100):.{rng.randint(0, 3)}f}"
    if kind < 0.7:
        return " ".join(rng.choice(WORDS) for _ in range(rng.randint(1, 3)))
    if allow_specials and kind < 0.8:
        return f"{rng.choice(WORDS)} | {rng.choice(WORDS)}"
    if allow_specials and kind < 0.9:
        return f"{rng.uniform(0, 100):.1f} (dev set)"
    return rng.choice(WORDS).upper()


def random_cells(rng: random.Random, allow_specials: bool = True) -> tuple[list[list[str]], int]:
    n_cols = rng.randint(1, 6)
    n_rows = rng.randint(1, 7)
    h = rng.choice([0, 1, 1, 2]) if n_rows > 1 else 0
    h = min(h, n_rows - 1)
    cells = [[random_cell(rng, allow_specials) for _ in range(n_cols)] for _ in range(n_rows)]
    return cells, h


def random_table(rng: random.Random, allow_specials: bool = True) -> CanonicalTable:
    cells, h = random_cells(rng, allow_specials)
    return make_table(cells, h)


@pytest.fixture
def snapshot_dir(tmp_path: Path) -> Path:
    """A private copy of the bundled snapshot."""
    target = tmp_path / "snapshot"
    shutil.copytree(FIXTURE_SNAPSHOT, target)
    return target


@pytest.fixture
def cfg(tmp_path: Path) -> Settings:
    return Settings(workspace_dir=tmp_path / "ws", _env_file=None)
