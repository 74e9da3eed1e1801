"""Per-cell usage signature tensors and relative-risk normalization.

A signature tensor holds, for one temporal category (weekday or weekend),
the total traffic volume per cell, per 2-hour bin, per app category:
``values[i, b, d]``. Weekdays are Monday through Thursday; Friday counts as
weekend. Normalization divides each cell's value by the mean of all other
cells for the same (bin, category) column, turning volumes into ratios that
are invariant to per-column rescaling.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from datetime import date, datetime
from pathlib import Path
from typing import Iterable, Sequence, Union

import numpy as np

from .errors import (
    DataError,
    EmptyInputError,
    NonFiniteError,
    ShapeMismatchError,
    TooFewLocationsError,
)
from .grid import CellId, CityRegion, GridSpec
from .ingest import ServiceTaxonomy, TrafficRecord

N_BINS = 12
WEEKDAY = "weekday"
WEEKEND = "weekend"
DAY_TYPES = (WEEKDAY, WEEKEND)

#: default ratio assigned when a cell has traffic but all other cells are silent
DEFAULT_RR_CAP = 1e6


def day_type_of(ts: Union[datetime, date]) -> str:
    """Monday through Thursday are weekdays; Friday, Saturday, Sunday are weekend."""
    return WEEKDAY if ts.weekday() <= 3 else WEEKEND


def bin_of(ts: datetime) -> int:
    """Index of the 2-hour bin containing the timestamp (00:00-01:59 is bin 0)."""
    return ts.hour // 2


@dataclass(frozen=True)
class TensorSegment:
    """Contiguous block of tensor rows belonging to one city."""

    name: str
    grid: GridSpec
    start: int
    stop: int


def _validate_tensor(values: np.ndarray, cells, categories) -> np.ndarray:
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 3 or values.shape[1] != N_BINS:
        raise ShapeMismatchError(f"tensor must be (n, {N_BINS}, D), got {values.shape}")
    if values.shape[0] != len(cells):
        raise ShapeMismatchError("cell list does not match tensor rows")
    if values.shape[2] != len(categories):
        raise ShapeMismatchError("category list does not match tensor depth")
    if not np.isfinite(values).all():
        raise NonFiniteError("tensor contains non-finite values")
    return values


@dataclass
class SignatureTensor:
    """Raw per-cell usage totals: ``values[i, b, d]`` for cell i, bin b, category d."""

    day_type: str
    cells: list[CellId]
    categories: tuple[str, ...]
    values: np.ndarray
    segments: list[TensorSegment] = field(default_factory=list)

    def __post_init__(self):
        if self.day_type not in DAY_TYPES:
            raise ValueError(f"day_type must be one of {DAY_TYPES}")
        self.categories = tuple(self.categories)
        self.values = _validate_tensor(self.values, self.cells, self.categories)

    @property
    def n(self) -> int:
        return len(self.cells)

    def segment_rows(self, name: str) -> range:
        for seg in self.segments:
            if seg.name == name:
                return range(seg.start, seg.stop)
        raise KeyError(f"no segment named {name!r}")


@dataclass
class NormalizedTensor:
    """Relative-risk ratios with the same layout as the raw tensor.

    ``capped_columns`` lists the (bin, category) columns where some cell had
    traffic while every other cell was silent, so the ratio was capped.
    """

    day_type: str
    cells: list[CellId]
    categories: tuple[str, ...]
    values: np.ndarray
    segments: list[TensorSegment] = field(default_factory=list)
    capped_columns: list[tuple[int, int]] = field(default_factory=list)

    def __post_init__(self):
        if self.day_type not in DAY_TYPES:
            raise ValueError(f"day_type must be one of {DAY_TYPES}")
        self.categories = tuple(self.categories)
        self.values = _validate_tensor(self.values, self.cells, self.categories)

    @property
    def n(self) -> int:
        return len(self.cells)

    def segment_rows(self, name: str) -> range:
        for seg in self.segments:
            if seg.name == name:
                return range(seg.start, seg.stop)
        raise KeyError(f"no segment named {name!r}")


def build_signatures(
    records: Iterable[TrafficRecord],
    taxonomy: ServiceTaxonomy,
    region: CityRegion,
    day_type: str,
    *,
    mean_per_day: bool = False,
) -> SignatureTensor:
    """Aggregate traffic records into a signature tensor.

    Both link directions are summed. Rows are the region's active cells in
    row-major order; cells without traffic stay all-zero. Records whose day
    type differs are excluded, and records in cells outside the region's
    active set do not contribute. A service missing from the taxonomy is a
    hard error so taxonomy gaps surface instead of silently dropping volume.

    With ``mean_per_day`` the totals are divided by the number of distinct
    matching dates present in the input, giving a per-day average instead of
    a window total. Accumulation is performed in a canonical sort order, so
    permuting the input records never changes the result, not even in the
    last float bit.
    """
    if day_type not in DAY_TYPES:
        raise ValueError(f"day_type must be one of {DAY_TYPES}")
    records = list(records)
    if not records:
        raise EmptyInputError("no traffic records to aggregate")
    cells = region.cells_in_scan_order()
    index = {cell: i for i, cell in enumerate(cells)}
    n, depth = len(cells), taxonomy.n_categories

    flat_idx: list[int] = []
    volumes: list[float] = []
    dates: set[date] = set()
    for rec in records:
        d = taxonomy.category_index(rec.service)
        if day_type_of(rec.timestamp) != day_type:
            continue
        dates.add(rec.timestamp.date())
        i = index.get(rec.cell)
        if i is None:
            continue
        flat_idx.append((i * N_BINS + bin_of(rec.timestamp)) * depth + d)
        volumes.append(rec.volume)

    flat = np.zeros(n * N_BINS * depth, dtype=np.float64)
    if flat_idx:
        idx_arr = np.asarray(flat_idx, dtype=np.int64)
        vol_arr = np.asarray(volumes, dtype=np.float64)
        order = np.lexsort((vol_arr, idx_arr))
        np.add.at(flat, idx_arr[order], vol_arr[order])
    values = flat.reshape(n, N_BINS, depth)
    if mean_per_day and dates:
        values = values / len(dates)

    segment = TensorSegment(region.grid.region_name or "city", region.grid, 0, n)
    return SignatureTensor(day_type, cells, taxonomy.categories, values, [segment])


def relative_risk(tensor: SignatureTensor, cap: float = DEFAULT_RR_CAP) -> NormalizedTensor:
    """Normalize each (bin, category) column by the mean over all other cells.

    For cell i the ratio is ``x_i / (sum_{k != i} x_k / (n - 1))``. When the
    other cells sum to zero the ratio is undefined; a zero cell then gets the
    neutral value 1.0, and a positive cell gets ``cap`` with the column
    recorded in ``capped_columns``.
    """
    values = tensor.values
    n = values.shape[0]
    if n < 2:
        raise TooFewLocationsError("relative risk needs at least 2 locations")
    totals = values.sum(axis=0)
    others = totals[None, :, :] - values
    zero_den = others <= 0.0
    denom = np.where(zero_den, 1.0, others / (n - 1))
    out = values / denom
    out[zero_den & (values == 0.0)] = 1.0
    capped = zero_den & (values > 0.0)
    out[capped] = cap
    capped_cols = sorted({(int(b), int(d)) for _, b, d in np.argwhere(capped)})
    return NormalizedTensor(
        tensor.day_type,
        list(tensor.cells),
        tensor.categories,
        out,
        list(tensor.segments),
        capped_cols,
    )


def minmax_scale(series: Sequence[float]) -> np.ndarray:
    """Scale to [0, 1]; a constant series becomes all zeros. Visualization aid only."""
    x = np.asarray(series, dtype=np.float64)
    if x.size == 0:
        raise ValueError("cannot scale an empty series")
    span = x.max() - x.min()
    if span == 0:
        return np.zeros_like(x)
    return (x - x.min()) / span


def drop_silent_cells(tensor: SignatureTensor) -> SignatureTensor:
    """Remove rows whose signature is identically zero (cells with no traffic)."""
    keep = tensor.values.reshape(tensor.n, -1).any(axis=1)
    new_segments = []
    offset = 0
    for seg in tensor.segments:
        kept = int(keep[seg.start : seg.stop].sum())
        new_segments.append(TensorSegment(seg.name, seg.grid, offset, offset + kept))
        offset += kept
    cells = [c for c, k in zip(tensor.cells, keep) if k]
    return SignatureTensor(
        tensor.day_type, cells, tensor.categories, tensor.values[keep], new_segments
    )


def concat_tensors(tensors: Sequence[SignatureTensor]) -> SignatureTensor:
    """Stack several cities' raw tensors into one (the country-wide analysis input).

    Day types and category axes must match; segment names must be unique so
    per-city rows can be sliced back out after clustering.
    """
    if not tensors:
        raise EmptyInputError("nothing to concatenate")
    first = tensors[0]
    segments: list[TensorSegment] = []
    offset = 0
    for t in tensors:
        if t.day_type != first.day_type:
            raise DataError("cannot concatenate tensors with different day types")
        if t.categories != first.categories:
            raise DataError("cannot concatenate tensors with different category axes")
        for seg in t.segments:
            if any(s.name == seg.name for s in segments):
                raise DataError(f"duplicate segment name {seg.name!r}")
            segments.append(
                TensorSegment(seg.name, seg.grid, seg.start + offset, seg.stop + offset)
            )
        offset += t.n
    cells = [c for t in tensors for c in t.cells]
    values = np.concatenate([t.values for t in tensors], axis=0)
    return SignatureTensor(first.day_type, cells, first.categories, values, segments)


# ---------------------------------------------------------------------------
# Tensor files: 4-byte magic, little-endian uint32 header length, JSON header
# (kind, day type, categories, cells, segments with their grids), then the
# row-major float64 payload.
# ---------------------------------------------------------------------------

_MAGIC = b"VSIG"
_VERSION = 1


def _grid_to_dict(grid: GridSpec) -> dict:
    return {
        "region_name": grid.region_name,
        "origin_x": grid.origin_x,
        "origin_y": grid.origin_y,
        "cell_size": grid.cell_size,
        "n_cols": grid.n_cols,
        "n_rows": grid.n_rows,
    }


def _grid_from_dict(doc: dict) -> GridSpec:
    return GridSpec(
        origin_x=float(doc["origin_x"]),
        origin_y=float(doc["origin_y"]),
        n_cols=int(doc["n_cols"]),
        n_rows=int(doc["n_rows"]),
        cell_size=float(doc["cell_size"]),
        region_name=str(doc["region_name"]),
    )


def write_tensor(tensor: Union[SignatureTensor, NormalizedTensor], path) -> None:
    header = {
        "version": _VERSION,
        "kind": "relative_risk" if isinstance(tensor, NormalizedTensor) else "raw",
        "day_type": tensor.day_type,
        "n": tensor.n,
        "n_bins": N_BINS,
        "categories": list(tensor.categories),
        "cells": [[c.col, c.row] for c in tensor.cells],
        "segments": [
            {"name": s.name, "start": s.start, "stop": s.stop, "grid": _grid_to_dict(s.grid)}
            for s in tensor.segments
        ],
    }
    if isinstance(tensor, NormalizedTensor):
        header["capped_columns"] = [[b, d] for b, d in tensor.capped_columns]
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(np.ascontiguousarray(tensor.values, dtype=np.float64).tobytes())


def read_tensor(path) -> Union[SignatureTensor, NormalizedTensor]:
    raw = Path(path).read_bytes()
    if raw[:4] != _MAGIC:
        raise DataError(f"{path} is not a signature tensor file")
    (blob_len,) = struct.unpack("<I", raw[4:8])
    header = json.loads(raw[8 : 8 + blob_len].decode("utf-8"))
    n, depth = header["n"], len(header["categories"])
    values = np.frombuffer(raw[8 + blob_len :], dtype=np.float64).reshape(n, N_BINS, depth)
    cells = [CellId(int(c), int(r)) for c, r in header["cells"]]
    segments = [
        TensorSegment(s["name"], _grid_from_dict(s["grid"]), int(s["start"]), int(s["stop"]))
        for s in header["segments"]
    ]
    if header["kind"] == "relative_risk":
        capped = [(int(b), int(d)) for b, d in header.get("capped_columns", [])]
        return NormalizedTensor(
            header["day_type"], cells, tuple(header["categories"]), values.copy(),
            segments, capped,
        )
    return SignatureTensor(
        header["day_type"], cells, tuple(header["categories"]), values.copy(), segments
    )


def export_tensor_csv(tensor: Union[SignatureTensor, NormalizedTensor], path) -> None:
    """Long-format dump for inspection: segment,col,row,bin,category,value."""
    seg_of_row = {}
    for seg in tensor.segments:
        for i in range(seg.start, seg.stop):
            seg_of_row[i] = seg.name
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("segment,col,row,bin,category,value\n")
        for i, cell in enumerate(tensor.cells):
            seg = seg_of_row.get(i, "")
            for b in range(N_BINS):
                for d, cat in enumerate(tensor.categories):
                    fh.write(
                        f"{seg},{cell.col},{cell.row},{b},{cat},{tensor.values[i, b, d]!r}\n"
                    )
