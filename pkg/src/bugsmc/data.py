"""Named dense arrays with per-element missingness, plus the JSON wire format.

The interchange schema is ``{name: {"dim": [...], "values": [... row-major ...],
"mask": [...]}}``. ``mask`` is optional (omitted means fully observed); masked-out
entries serialize as ``null``. Scalars are 1-element arrays. Round-trips are
bit-exact for the observed values.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np


class DataError(Exception):
    pass


@dataclass
class DataEntry:
    dims: tuple[int, ...]
    values: np.ndarray  # flat float64, row-major
    mask: np.ndarray    # flat bool, True where the value is present

    def __post_init__(self):
        size = int(np.prod(self.dims)) if self.dims else 1
        self.values = np.asarray(self.values, dtype=np.float64).reshape(-1)
        self.mask = np.asarray(self.mask, dtype=bool).reshape(-1)
        if self.values.size != size or self.mask.size != size:
            raise DataError(f"entry shape mismatch: dim {self.dims} holds {size} "
                            f"element(s), got {self.values.size} value(s)")
        if any(d <= 0 for d in self.dims):
            raise DataError(f"extents must be positive, got {self.dims}")

    @property
    def fully_observed(self) -> bool:
        return bool(self.mask.all())

    def array(self) -> np.ndarray:
        """Values reshaped to ``dims`` (NaN where missing)."""
        out = self.values.copy()
        out[~self.mask] = np.nan
        return out.reshape(self.dims)


class DataTable:
    """Mapping of names to :class:`DataEntry`.

    Construct from plain Python/numpy values with :meth:`from_dict`; ``None``
    or NaN elements mark missing values.
    """

    def __init__(self, entries: dict[str, DataEntry] | None = None):
        self.entries: dict[str, DataEntry] = dict(entries or {})

    def __contains__(self, name: str) -> bool:
        return name in self.entries

    def __getitem__(self, name: str) -> DataEntry:
        return self.entries[name]

    def __iter__(self):
        return iter(self.entries)

    def names(self) -> list[str]:
        return list(self.entries)

    def set(self, name: str, value) -> None:
        self.entries[name] = _coerce_entry(value)

    def copy(self) -> "DataTable":
        return DataTable({k: DataEntry(v.dims, v.values.copy(), v.mask.copy())
                          for k, v in self.entries.items()})

    @classmethod
    def from_dict(cls, values: dict) -> "DataTable":
        table = cls()
        for name, value in values.items():
            table.set(name, value)
        return table

    def to_dict(self) -> dict:
        """Plain-python form following the interchange schema."""
        out = {}
        for name, entry in self.entries.items():
            item = {"dim": list(entry.dims),
                    "values": [v if m else None
                               for v, m in zip(entry.values.tolist(), entry.mask.tolist())]}
            if not entry.fully_observed:
                item["mask"] = [bool(m) for m in entry.mask.tolist()]
            else:
                item["values"] = entry.values.tolist()
            out[name] = item
        return out

    def to_json(self, indent: int | None = None) -> str:
        return json.dumps(self.to_dict(), indent=indent, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "DataTable":
        return cls.from_obj(json.loads(text))

    @classmethod
    def from_obj(cls, obj: dict) -> "DataTable":
        table = cls()
        for name, item in obj.items():
            if not isinstance(item, dict) or "values" not in item:
                # allow shorthand {name: scalar-or-nested-list}
                table.set(name, item)
                continue
            dims = tuple(int(d) for d in item.get("dim", [len(item["values"])]))
            raw = item["values"]
            mask = item.get("mask")
            if mask is None:
                mask = [v is not None for v in raw]
            values = [0.0 if v is None else float(v) for v in raw]
            table.entries[name] = DataEntry(dims, np.array(values), np.array(mask, dtype=bool))
        return table


def _coerce_entry(value) -> DataEntry:
    if isinstance(value, DataEntry):
        return value
    arr = np.asarray(value, dtype=object)
    if arr.ndim == 0:
        arr = arr.reshape(1)
    flat = arr.reshape(-1)
    values = np.empty(flat.size, dtype=np.float64)
    mask = np.ones(flat.size, dtype=bool)
    for i, v in enumerate(flat):
        if v is None or (isinstance(v, float) and math.isnan(v)):
            values[i] = 0.0
            mask[i] = False
        else:
            values[i] = float(v)
            if math.isnan(values[i]):
                values[i] = 0.0
                mask[i] = False
    dims = arr.shape if arr.shape else (1,)
    return DataEntry(tuple(int(d) for d in dims), values, mask)


def load_data(path: str) -> DataTable:
    with open(path, "r", encoding="utf-8") as fh:
        return DataTable.from_json(fh.read())


def save_data(table: DataTable, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(table.to_json(indent=1))
        fh.write("\n")
