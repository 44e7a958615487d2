"""
Exact vector index over tables. Rows are kept in sorted table_id order and
scanned exhaustively; two indexes exist per workspace, one over serialized
table content and one over metadata context.
"""
import logging
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

from embeddings import EmbeddingProvider
from errors import ValidationError

logger = logging.getLogger(__name__)


class VectorIndex:
    def __init__(self, ids: list[str], matrix: np.ndarray):
        matrix = np.asarray(matrix, dtype=np.float64)
        if matrix.ndim != 2 or matrix.shape[0] != len(ids):
            raise ValidationError(f"expected a {len(ids)} x dim matrix, got shape {matrix.shape}")
        order = sorted(range(len(ids)), key=lambda i: ids[i])
        self.ids = [ids[i] for i in order]
        self.matrix = matrix[order]
        self._row = {table_id: i for i, table_id in enumerate(self.ids)}

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]

    def __len__(self) -> int:
        return len(self.ids)

    def __contains__(self, table_id: str) -> bool:
        return table_id in self._row

    @classmethod
    def build(cls, texts: dict[str, str], provider: EmbeddingProvider) -> "VectorIndex":
        ids = sorted(texts)
        matrix = np.vstack([provider.embed(texts[i]) for i in ids]) if ids else np.zeros((0, provider.dim))
        return cls(ids, matrix)

    def vector(self, table_id: str) -> Optional[np.ndarray]:
        i = self._row.get(table_id)
        return None if i is None else self.matrix[i]

    def similarities(self, query: np.ndarray) -> dict[str, float]:
        """Cosine against every row; rows are unit or zero, so this is a dot product."""
        if not len(self.ids):
            return {}
        scores = self.matrix @ query
        return {table_id: float(s) for table_id, s in zip(self.ids, scores)}

    def subset(self, ids: Iterable[str]) -> "VectorIndex":
        keep = [i for i in ids if i in self._row]
        return VectorIndex(keep, self.matrix[[self._row[i] for i in keep]].reshape(len(keep), self.dim))

    def write(self, path: Path) -> None:
        """`dim N` header, then `table_id<TAB>comma-separated floats` per row."""
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            f.write(f"dim {self.dim}\n")
            for table_id, row in zip(self.ids, self.matrix):
                f.write(table_id + "\t" + ",".join(repr(float(x)) for x in row) + "\n")

    @classmethod
    def read(cls, path: Path, normalize: bool = True) -> "VectorIndex":
        with open(path, "r", encoding="utf-8") as f:
            header = f.readline().split()
            if len(header) != 2 or header[0] != "dim" or not header[1].isdigit():
                raise ValidationError(f"{path}: expected a `dim <N>` header line")
            dim = int(header[1])
            ids, rows = [], []
            for n, line in enumerate(f, start=2):
                if not line.strip():
                    continue
                table_id, _, values = line.rstrip("\n").partition("\t")
                row = np.array([float(v) for v in values.split(",")], dtype=np.float64)
                if row.shape[0] != dim:
                    raise ValidationError(f"{path}:{n}: expected {dim} values, got {row.shape[0]}")
                ids.append(table_id)
                rows.append(row)
        matrix = np.vstack(rows) if rows else np.zeros((0, dim))
        if normalize and len(rows):
            norms = np.linalg.norm(matrix, axis=1, keepdims=True)
            # rows already unit length are left bit-identical
            rescale = (norms > 0) & (np.abs(norms - 1.0) > 1e-12)
            matrix = np.divide(matrix, norms, out=matrix.copy(), where=rescale)
        return cls(ids, matrix)


class VectorStoreManager:
    """The workspace's two named indexes: `table` (content) and `metadata` (context)."""

    NAMES = ("table", "metadata")

    def __init__(self, index_dir: Path):
        self.index_dir = index_dir
        self._stores: dict[str, VectorIndex] = {}

    def path(self, name: str) -> Path:
        if name not in self.NAMES:
            raise KeyError(f"unknown vector index: {name}")
        return self.index_dir / f"{name}_vectors.tsv"

    def put(self, name: str, index: VectorIndex) -> Path:
        self._stores[name] = index
        path = self.path(name)
        index.write(path)
        return path

    def get_store(self, name: str) -> VectorIndex:
        if name not in self._stores:
            self._stores[name] = VectorIndex.read(self.path(name))
        return self._stores[name]
