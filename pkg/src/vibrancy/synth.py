"""Deterministic synthetic cities with planted archetypes.

The generator assigns each cell one of k archetype signature matrices,
perturbs it with seeded Gaussian noise, and decomposes the noisy totals
into 15-minute traffic records so the whole ingest and aggregation path is
exercised end to end. POIs are drawn per cell from Poisson intensities tied
to the archetype, which plants a known association between cluster
membership and third-place covariates. Everything derives from one seed
through three named substreams (assignment, noise, POIs), so regenerating
from the same spec yields byte-identical files.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from datetime import date, datetime, timedelta
from math import ceil, sqrt
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import InvalidSpecError, LengthMismatchError
from .features import THIRD_PLACE_CATEGORIES, ThirdPlaceTaxonomy
from .grid import CellId, CityRegion, GridSpec, save_region
from .ingest import DOWNLINK, UPLINK, PoiRecord, ServiceTaxonomy, TrafficRecord
from .signatures import DAY_TYPES, N_BINS, WEEKDAY, day_type_of

WINDOW_START = date(2019, 3, 16)
WINDOW_DAYS = 77

#: POI labels emitted per third-place category, with their OSM source keys
SYNTH_POI_LABELS = {
    "commercial_services": ("bank", "pharmacy", "hairdresser", "post_office"),
    "commercial_venues": ("supermarket", "clothes", "bakery", "marketplace"),
    "eating_and_drinking": ("restaurant", "bar", "cafe", "pub"),
    "outdoor": ("park", "garden", "playground", "pitch"),
    "organised_activities": ("sports_centre", "swimming_pool", "theatre", "cinema"),
}

SYNTH_POI_SOURCES = {
    "bank": "amenity", "pharmacy": "amenity", "hairdresser": "shop",
    "post_office": "amenity", "supermarket": "shop", "clothes": "shop",
    "bakery": "shop", "marketplace": "amenity", "restaurant": "amenity",
    "bar": "amenity", "cafe": "amenity", "pub": "amenity", "park": "leisure",
    "garden": "leisure", "playground": "leisure", "pitch": "leisure",
    "sports_centre": "leisure", "swimming_pool": "leisure",
    "theatre": "amenity", "cinema": "amenity",
}

_VALID_SLOTS = (1, 2, 4, 8)  # keep 15-minute alignment when splitting a 2h bin


def window_dates(day_type: str, n_days: int) -> list[date]:
    """First n dates of the study window matching the day type."""
    out: list[date] = []
    for i in range(WINDOW_DAYS):
        d = WINDOW_START + timedelta(days=i)
        if day_type_of(d) == day_type:
            out.append(d)
            if len(out) == n_days:
                return out
    raise InvalidSpecError(f"window holds fewer than {n_days} {day_type} dates")


def default_archetypes(k: int, depth: int, base: float = 2.0, amplitude: float = 20.0) -> np.ndarray:
    """Well-separated smooth daily curves: archetype a peaks 12a/k bins into the
    day, with a small per-category phase shift."""
    bins = np.arange(N_BINS, dtype=np.float64)
    arch = np.empty((k, N_BINS, depth))
    for a in range(k):
        for d in range(depth):
            mu = (12.0 * a / k + 1.5 * d) % 12.0
            delta = np.minimum(np.abs(bins - mu), 12.0 - np.abs(bins - mu))
            arch[a, :, d] = base + amplitude * np.exp(-0.5 * (delta / 1.5) ** 2)
    return arch


def default_poi_intensity(k: int, low: float = 0.2, high: float = 8.0) -> np.ndarray:
    """Expected POIs per category per cell, rising with the archetype index."""
    out = np.empty((k, len(THIRD_PLACE_CATEGORIES)))
    for a in range(k):
        out[a, :] = low + (high - low) * (a / (k - 1) if k > 1 else 1.0)
    return out


@dataclass
class SynthSpec:
    seed: int
    n_cells: int
    k_true: int = 3
    categories: tuple[str, ...] = ()
    archetypes: Optional[np.ndarray] = None  # (k_true, 12, D)
    noise_sigma: float = 1.0
    poi_intensity: Optional[np.ndarray] = None  # (k_true, 5)
    day_type: str = WEEKDAY
    n_days: int = 1
    slots_per_bin: int = 2
    region_name: str = "synthcity"
    cell_size: float = 100.0

    def __post_init__(self):
        if self.k_true < 2:
            raise InvalidSpecError("k_true must be at least 2")
        if self.n_cells < self.k_true:
            raise InvalidSpecError("need at least one cell per archetype")
        if self.noise_sigma < 0:
            raise InvalidSpecError("noise_sigma must be nonnegative")
        if self.day_type not in DAY_TYPES:
            raise InvalidSpecError(f"day_type must be one of {DAY_TYPES}")
        if self.slots_per_bin not in _VALID_SLOTS:
            raise InvalidSpecError(f"slots_per_bin must be one of {_VALID_SLOTS}")
        if self.n_days < 1:
            raise InvalidSpecError("n_days must be at least 1")
        if not self.categories:
            self.categories = tuple(f"cat{i:02d}" for i in range(4))
        self.categories = tuple(self.categories)
        if self.archetypes is None:
            self.archetypes = default_archetypes(self.k_true, len(self.categories))
        self.archetypes = np.asarray(self.archetypes, dtype=np.float64)
        if self.archetypes.shape != (self.k_true, N_BINS, len(self.categories)):
            raise InvalidSpecError(
                f"archetypes must be ({self.k_true}, {N_BINS}, {len(self.categories)})"
            )
        if not np.isfinite(self.archetypes).all() or (self.archetypes < 0).any():
            raise InvalidSpecError("archetype values must be finite and nonnegative")
        if self.poi_intensity is None:
            self.poi_intensity = default_poi_intensity(self.k_true)
        self.poi_intensity = np.asarray(self.poi_intensity, dtype=np.float64)
        if self.poi_intensity.shape != (self.k_true, len(THIRD_PLACE_CATEGORIES)):
            raise InvalidSpecError(
                f"poi_intensity must be ({self.k_true}, {len(THIRD_PLACE_CATEGORIES)})"
            )
        if (self.poi_intensity < 0).any():
            raise InvalidSpecError("poi_intensity must be nonnegative")

    def separation(self) -> float:
        """Smallest pairwise distance between archetype matrices."""
        best = np.inf
        for i in range(self.k_true):
            for j in range(i + 1, self.k_true):
                d = sqrt(((self.archetypes[i] - self.archetypes[j]) ** 2).sum())
                best = min(best, d)
        return best

    def separation_ratio(self) -> float:
        return np.inf if self.noise_sigma == 0 else self.separation() / self.noise_sigma


@dataclass
class SynthTruth:
    spec: SynthSpec
    region: CityRegion
    cells: list[CellId]  # scan order; aligns with archetype_of
    archetype_of: np.ndarray  # (n,), planted labels 1..k_true
    traffic: list[TrafficRecord]
    pois: list[PoiRecord]
    service_taxonomy: ServiceTaxonomy
    place_taxonomy: ThirdPlaceTaxonomy
    targets: np.ndarray = field(repr=False, default=None)  # (n, 12, D) noisy curves


def _services_for(categories: Sequence[str]) -> list[tuple[str, str]]:
    return [(f"svc-{c}-a", f"svc-{c}-b") for c in categories]


def _plant(spec: SynthSpec):
    """Archetype assignment and noisy per-cell target curves (streams 0 and 1)."""
    seqs = np.random.SeedSequence(spec.seed).spawn(3)
    rng_assign = np.random.default_rng(seqs[0])
    rng_noise = np.random.default_rng(seqs[1])
    rng_poi = np.random.default_rng(seqs[2])

    n = spec.n_cells
    archetype_of = np.array([(i % spec.k_true) + 1 for i in range(n)], dtype=np.int64)
    rng_assign.shuffle(archetype_of)
    targets = spec.archetypes[archetype_of - 1].copy()
    if spec.noise_sigma > 0:
        targets += spec.noise_sigma * rng_noise.standard_normal(targets.shape)
        np.maximum(targets, 0.0, out=targets)
    return archetype_of, targets, rng_poi


def planted_stack(spec: SynthSpec) -> tuple[np.ndarray, np.ndarray]:
    """Shortcut past the record layer: the (n, 12, D) target curves and the
    planted labels, exactly as generate() would aggregate them per day."""
    archetype_of, targets, _ = _plant(spec)
    return targets, archetype_of


def generate(spec: SynthSpec) -> SynthTruth:
    """Produce the full synthetic city: region, traffic records, and POIs."""
    n_cols = ceil(sqrt(spec.n_cells))
    n_rows = ceil(spec.n_cells / n_cols)
    grid = GridSpec(0.0, 0.0, n_cols, n_rows, spec.cell_size, spec.region_name)
    cells = [CellId(i % n_cols, i // n_cols) for i in range(spec.n_cells)]
    region = CityRegion(grid, frozenset(cells))

    archetype_of, targets, rng_poi = _plant(spec)
    depth = len(spec.categories)
    services = _services_for(spec.categories)
    dates = window_dates(spec.day_type, spec.n_days)
    step_min = 120 // spec.slots_per_bin
    offsets = [s * step_min for s in range(spec.slots_per_bin)]
    share_div = spec.slots_per_bin * 2

    traffic: list[TrafficRecord] = []
    for i, cell in enumerate(cells):
        for day in dates:
            for b in range(N_BINS):
                for d in range(depth):
                    v = float(targets[i, b, d])
                    if v == 0.0:
                        continue
                    share = v / share_div
                    for s, off in enumerate(offsets):
                        ts = datetime(day.year, day.month, day.day, 2 * b + off // 60, off % 60)
                        svc = services[d][s % 2]
                        traffic.append(TrafficRecord(cell, ts, svc, DOWNLINK, share))
                        traffic.append(TrafficRecord(cell, ts, svc, UPLINK, share))

    pois: list[PoiRecord] = []
    for i, cell in enumerate(cells):
        a = archetype_of[i] - 1
        for ci, cat in enumerate(THIRD_PLACE_CATEGORIES):
            labels = SYNTH_POI_LABELS[cat]
            lam = spec.poi_intensity[a, ci] / len(labels)
            for label in labels:
                count = int(rng_poi.poisson(lam)) if lam > 0 else 0
                for _ in range(count):
                    u, w = rng_poi.random(2)
                    x = float(grid.origin_x + (cell.col + u) * grid.cell_size)
                    y = float(grid.origin_y + (cell.row + w) * grid.cell_size)
                    pois.append(PoiRecord(x, y, label, SYNTH_POI_SOURCES[label]))

    svc_mapping = {name: cat for cat, pair in zip(spec.categories, services) for name in pair}
    service_taxonomy = ServiceTaxonomy(svc_mapping, tuple(spec.categories))
    place_taxonomy = ThirdPlaceTaxonomy(
        {label: cat for cat in THIRD_PLACE_CATEGORIES for label in SYNTH_POI_LABELS[cat]}
    )
    return SynthTruth(
        spec=spec,
        region=region,
        cells=cells,
        archetype_of=archetype_of,
        traffic=traffic,
        pois=pois,
        service_taxonomy=service_taxonomy,
        place_taxonomy=place_taxonomy,
        targets=targets,
    )


def generate_for_day_types(spec: SynthSpec, day_types: Sequence[str]) -> SynthTruth:
    """One synthetic city whose traffic covers several day types.

    The plant (archetypes, noisy targets, POIs) comes from the first day
    type's generation; further day types reuse the identical plant because
    the seed streams do not depend on the day type, so only their traffic
    records are appended.
    """
    from dataclasses import replace

    if not day_types:
        raise InvalidSpecError("need at least one day type")
    truth = generate(replace(spec, day_type=day_types[0]))
    for dt in day_types[1:]:
        extra = generate(replace(spec, day_type=dt))
        truth.traffic.extend(extra.traffic)
    return truth


def write_city(truth: SynthTruth, out_dir) -> dict[str, Path]:
    """Write the CSV and JSON files the ingest layer consumes, plus the planted
    truth labels. Deterministic bytes for a given spec."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "region": out / "region.json",
        "traffic": out / "traffic.csv",
        "pois": out / "pois.csv",
        "truth": out / "truth_labels.csv",
        "service_taxonomy": out / "service_taxonomy.csv",
        "third_places": out / "third_places.csv",
    }
    save_region(truth.region, paths["region"])
    with open(paths["traffic"], "w", encoding="utf-8", newline="\n") as fh:
        fh.write("col,row,timestamp,service,direction,volume\n")
        for r in truth.traffic:
            ts = r.timestamp.strftime("%Y-%m-%dT%H:%M")
            fh.write(f"{r.cell.col},{r.cell.row},{ts},{r.service},{r.direction},{r.volume!r}\n")
    with open(paths["pois"], "w", encoding="utf-8", newline="\n") as fh:
        fh.write("x,y,label,source_category\n")
        for p in truth.pois:
            fh.write(f"{p.x!r},{p.y!r},{p.label},{p.source_category}\n")
    with open(paths["truth"], "w", encoding="utf-8", newline="\n") as fh:
        fh.write("col,row,archetype\n")
        for cell, a in zip(truth.cells, truth.archetype_of):
            fh.write(f"{cell.col},{cell.row},{int(a)}\n")
    with open(paths["service_taxonomy"], "w", encoding="utf-8", newline="\n") as fh:
        fh.write("service,category\n")
        for cat, pair in zip(truth.spec.categories, _services_for(truth.spec.categories)):
            for name in pair:
                fh.write(f"{name},{cat}\n")
    with open(paths["third_places"], "w", encoding="utf-8", newline="\n") as fh:
        fh.write("label,category\n")
        for cat in THIRD_PLACE_CATEGORIES:
            for label in SYNTH_POI_LABELS[cat]:
                fh.write(f"{label},{cat}\n")
    return paths


def adjusted_rand_index(labels_a: Sequence[int], labels_b: Sequence[int]) -> float:
    """Chance-corrected agreement between two partitions (pair counting).

    1.0 means identical partitions up to label permutation; 0.0 is the
    expected value for independent labelings. Two trivial partitions that
    coincide (for example both all-one-cluster) score 1.0 by convention.
    """
    a = [int(v) for v in labels_a]
    b = [int(v) for v in labels_b]
    if len(a) != len(b):
        raise LengthMismatchError("label vectors differ in length")
    n = len(a)

    def comb2(x: int) -> int:
        return x * (x - 1) // 2

    pair_counts = Counter(zip(a, b))
    sum_ij = sum(comb2(v) for v in pair_counts.values())
    sum_a = sum(comb2(v) for v in Counter(a).values())
    sum_b = sum(comb2(v) for v in Counter(b).values())
    total = comb2(n)
    expected = sum_a * sum_b / total if total else 0.0
    max_index = (sum_a + sum_b) / 2.0
    if max_index == expected:
        return 1.0
    return (sum_ij - expected) / (max_index - expected)
