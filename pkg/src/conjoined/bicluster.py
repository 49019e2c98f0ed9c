"""Bicluster records and their JSON form.

A bicluster file is a JSON list of objects
``{"rows": [...], "cols": [...], "weight": w, "topic_pair": [i, j] | null}``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Tuple


@dataclass(frozen=True)
class Bicluster:
    rows: Tuple[int, ...]
    cols: Tuple[int, ...]
    weight: float = 1.0
    topic_pair: Optional[Tuple[int, int]] = None

    def __post_init__(self):
        rows = tuple(sorted({int(r) for r in self.rows}))
        cols = tuple(sorted({int(c) for c in self.cols}))
        if (rows and rows[0] < 0) or (cols and cols[0] < 0):
            raise ValueError("bicluster indices must be nonnegative")
        if not 0.0 <= float(self.weight) <= 1.0:
            raise ValueError(f"bicluster weight {self.weight} outside [0, 1]")
        object.__setattr__(self, "rows", rows)
        object.__setattr__(self, "cols", cols)
        object.__setattr__(self, "weight", float(self.weight))
        if self.topic_pair is not None:
            object.__setattr__(self, "topic_pair", tuple(int(v) for v in self.topic_pair))

    @property
    def size(self):
        """Number of cells, ``|rows| * |cols|``."""
        return len(self.rows) * len(self.cols)

    def cells(self):
        return {(r, c) for r in self.rows for c in self.cols}

    def to_dict(self):
        return {"rows": list(self.rows), "cols": list(self.cols), "weight": self.weight,
                "topic_pair": None if self.topic_pair is None else list(self.topic_pair)}

    def transposed(self):
        return Bicluster(self.cols, self.rows, self.weight,
                         None if self.topic_pair is None else self.topic_pair[::-1])


BiclusterSet = List[Bicluster]


def dumps_biclusters(biclusters: Sequence[Bicluster]) -> str:
    return json.dumps([b.to_dict() for b in biclusters], indent=1) + "\n"


def save_biclusters(biclusters: Sequence[Bicluster], path):
    Path(path).write_text(dumps_biclusters(biclusters))


def load_biclusters(path, shape=None) -> BiclusterSet:
    """Read a bicluster JSON file.

    ``shape`` = ``(n_rows, n_cols)`` enables bounds checking. Raises
    ``ValueError`` for malformed content or out-of-bounds indices.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such file: {path}")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ValueError(f"{path}: malformed JSON: {exc}") from None
    if not isinstance(doc, list):
        raise ValueError(f"{path}: expected a JSON list of biclusters")
    out = []
    for i, item in enumerate(doc):
        if not isinstance(item, dict) or "rows" not in item or "cols" not in item:
            raise ValueError(f"{path}: entry {i} needs 'rows' and 'cols'")
        try:
            b = Bicluster(item["rows"], item["cols"], item.get("weight", 1.0),
                          item.get("topic_pair"))
        except (TypeError, ValueError) as exc:
            raise ValueError(f"{path}: entry {i}: {exc}") from None
        if shape is not None:
            if (b.rows and b.rows[-1] >= shape[0]) or (b.cols and b.cols[-1] >= shape[1]):
                raise ValueError(f"{path}: entry {i} has indices outside a "
                                 f"{shape[0]}x{shape[1]} matrix")
        out.append(b)
    return out
