import io
import math
from importlib.resources import files

import numpy as np
import pytest
from numpy.testing import assert_allclose

from vibrancy.errors import DataError, TooFewRowsError
from vibrancy.features import (
    FEATURE_COLUMNS,
    THIRD_PLACE_CATEGORIES,
    FeatureTable,
    ThirdPlaceTaxonomy,
    build_features,
    export_features_csv,
    filter_rare_labels,
    load_features_csv,
    load_third_place_taxonomy,
    shannon_diversity,
    standardize,
)
from vibrancy.grid import CellId, CityRegion, GridSpec
from vibrancy.ingest import PoiRecord

TAX = ThirdPlaceTaxonomy({
    "restaurant": "eating_and_drinking",
    "bar": "eating_and_drinking",
    "cafe": "eating_and_drinking",
    "park": "outdoor",
    "bank": "commercial_services",
})
GRID = GridSpec(0, 0, 3, 3, 100.0, "toytown")
REGION = CityRegion(GRID, frozenset(CellId(c, r) for c in range(3) for r in range(3)))


def poi(label, x=50.0, y=50.0, source="amenity"):
    return PoiRecord(x, y, label, source)


class TestFilterRareLabels:
    def test_below_threshold_removed(self):
        pois = [poi("bar")] * 9 + [poi("park")] * 12
        kept = filter_rare_labels(pois, min_count=10)
        assert {p.label for p in kept} == {"park"}
        assert len(kept) == 12

    def test_threshold_is_inclusive(self):
        pois = [poi("bar")] * 10
        assert len(filter_rare_labels(pois, min_count=10)) == 10

    def test_empty_input(self):
        assert filter_rare_labels([], min_count=10) == []

    def test_idempotent(self, rng):
        pois = [poi(f"label{int(rng.integers(6))}") for _ in range(300)]
        once = filter_rare_labels(pois, min_count=40)
        assert filter_rare_labels(once, min_count=40) == once


class TestShannonDiversity:
    def test_single_label_is_zero(self):
        assert shannon_diversity({"restaurant": 5}) == 0.0

    def test_uniform_pair_is_one_bit(self):
        assert shannon_diversity({"a": 1, "b": 1}) == 1.0

    def test_reference_value(self):
        assert shannon_diversity({"a": 2, "b": 1, "c": 1}) == pytest.approx(1.5, rel=1e-12)

    def test_empty_counts(self):
        assert shannon_diversity({}) == 0.0
        assert shannon_diversity({"a": 0, "b": 0}) == 0.0

    def test_negative_rejected(self):
        with pytest.raises(ValueError):
            shannon_diversity({"a": -1})

    def test_upper_bound_and_uniform_maximality(self, rng):
        for _ in range(200):
            m = int(rng.integers(1, 9))
            counts = rng.integers(1, 40, size=m).tolist()
            h = shannon_diversity(counts)
            assert 0.0 <= h <= math.log2(m) + 1e-12
            assert shannon_diversity([7] * m) == pytest.approx(math.log2(m), abs=1e-12)

    def test_label_permutation_and_replication_invariance(self, rng):
        counts = {"a": 3, "b": 5, "c": 1}
        permuted = {"c": 1, "a": 3, "b": 5}
        scaled = {k: 4 * v for k, v in counts.items()}
        assert shannon_diversity(counts) == shannon_diversity(permuted)
        assert shannon_diversity(counts) == pytest.approx(
            shannon_diversity(scaled), rel=1e-12
        )


class TestBuildFeatures:
    def test_reference_cell(self):
        pois = [
            poi("restaurant"), poi("restaurant"), poi("bar"), poi("park"),
        ]
        table = build_features(pois, TAX, REGION)
        i = table.cells.index(CellId(0, 0))
        row = dict(zip(table.columns, table.values[i]))
        assert row["total_count"] == 4
        assert row["total_diversity"] == pytest.approx(1.5, rel=1e-12)
        assert row["eating_and_drinking_count"] == 3
        h21 = -(2 / 3) * math.log2(2 / 3) - (1 / 3) * math.log2(1 / 3)
        assert row["eating_and_drinking_diversity"] == pytest.approx(h21, rel=1e-12)
        assert row["eating_and_drinking_diversity"] == pytest.approx(0.9183, abs=1e-4)
        assert row["outdoor_count"] == 1
        assert row["outdoor_diversity"] == 0.0

    def test_empty_cell_is_all_zero(self):
        table = build_features([poi("restaurant")], TAX, REGION)
        j = table.cells.index(CellId(2, 2))
        assert np.all(table.values[j] == 0.0)

    def test_non_third_place_labels_ignored(self):
        table = build_features([poi("tower"), poi("bridge")], TAX, REGION)
        assert np.all(table.values == 0.0)

    def test_out_of_region_pois_ignored(self):
        table = build_features([poi("restaurant", x=-5.0)], TAX, REGION)
        assert np.all(table.values == 0.0)

    def test_total_equals_category_sum(self, rng):
        labels = list(TAX.mapping)
        pois = [
            poi(labels[int(rng.integers(len(labels)))],
                x=float(rng.uniform(0, 300)), y=float(rng.uniform(0, 300)))
            for _ in range(400)
        ]
        table = build_features(pois, TAX, REGION)
        count_cols = [f"{c}_count" for c in THIRD_PLACE_CATEGORIES]
        total = sum(table.column(c) for c in count_cols)
        assert_allclose(table.column("total_count"), total)
        assert table.column("total_count").sum() == 400

    def test_rows_follow_given_cells(self):
        cells = [CellId(1, 1), CellId(0, 0)]
        table = build_features([poi("bank", x=150.0, y=150.0)], TAX, REGION, cells=cells)
        assert table.cells == cells
        assert table.values[0, 0] == 1
        assert table.values[1, 0] == 0


class TestStandardize:
    def test_two_values(self):
        table = FeatureTable([CellId(0, 0), CellId(1, 0)], ("a",), [[0.0], [2.0]])
        z = standardize(table)
        assert_allclose(z.values[:, 0], [-1.0, 1.0])

    def test_constant_column_becomes_zero(self):
        table = FeatureTable(
            [CellId(i, 0) for i in range(3)], ("a",), [[3.0], [3.0], [3.0]]
        )
        assert_allclose(standardize(table).values[:, 0], [0, 0, 0])

    def test_population_sigma(self):
        table = FeatureTable(
            [CellId(i, 0) for i in range(4)], ("a",), [[1.0], [2.0], [3.0], [4.0]]
        )
        z = standardize(table).values[:, 0]
        assert_allclose(z, [-1.3416407865, -0.4472135955, 0.4472135955, 1.3416407865],
                        atol=1e-9)
        assert_allclose(z, (np.arange(1.0, 5.0) - 2.5) / np.sqrt(1.25), rtol=1e-12)

    def test_too_few_rows(self):
        with pytest.raises(TooFewRowsError):
            standardize(FeatureTable([CellId(0, 0)], ("a",), [[1.0]]))

    def test_records_moments(self, rng):
        values = rng.uniform(size=(10, 3))
        table = FeatureTable([CellId(i, 0) for i in range(10)], ("a", "b", "c"), values)
        z = standardize(table)
        assert z.standardized
        assert_allclose(z.means, values.mean(axis=0))
        assert_allclose(z.values.mean(axis=0), 0.0, atol=1e-12)
        assert_allclose(z.values.std(axis=0), 1.0, rtol=1e-12)


class TestTaxonomyFile:
    def test_load(self):
        tax = load_third_place_taxonomy(io.StringIO(
            "label,category\nrestaurant,eating_and_drinking\npark,outdoor\n"
        ))
        assert tax.category_of("restaurant") == "eating_and_drinking"
        assert tax.category_of("unknown") is None

    def test_unknown_category_rejected(self):
        with pytest.raises(DataError):
            load_third_place_taxonomy(io.StringIO("label,category\npark,green_stuff\n"))

    def test_duplicate_label_rejected(self):
        with pytest.raises(DataError):
            load_third_place_taxonomy(io.StringIO(
                "label,category\npark,outdoor\npark,outdoor\n"
            ))

    def test_shipped_example_covers_all_categories(self):
        path = files("vibrancy").joinpath("data/third_places_example.csv")
        tax = load_third_place_taxonomy(io.StringIO(path.read_text(encoding="utf-8")))
        assert set(tax.mapping.values()) == set(THIRD_PLACE_CATEGORIES)
        assert len(tax.mapping) >= 40


class TestFeatureCsv:
    def test_round_trip(self, tmp_path, rng):
        values = rng.uniform(size=(4, len(FEATURE_COLUMNS)))
        table = FeatureTable(
            [CellId(i, 0) for i in range(4)], FEATURE_COLUMNS, values
        )
        path = tmp_path / "features.csv"
        export_features_csv(table, path)
        loaded = load_features_csv(path)
        assert loaded.columns == table.columns
        assert loaded.cells == table.cells
        assert np.array_equal(loaded.values, table.values)
