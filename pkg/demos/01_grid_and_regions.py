"""Square grids, cell lookup, and region sanity checks.

Every spatial quantity in this package lives on a 100 m x 100 m tiling in
planar coordinates. This script walks through the cell arithmetic and the
declared-area consistency check used to validate region files.
"""

import json
import tempfile
from pathlib import Path

from vibrancy import (
    CellId,
    CityRegion,
    GridSpec,
    cell_polygon,
    check_region_consistency,
    load_region,
    point_to_cell,
    save_region,
)

grid = GridSpec(origin_x=0.0, origin_y=0.0, n_cols=300, n_rows=300, cell_size=100.0,
                region_name="demo")

print("== point lookup ==")
for x, y in [(0.0, 0.0), (100.0, 0.0), (250.0, 1050.0)]:
    cell = point_to_cell(x, y, grid)
    print(f"point ({x:7.1f}, {y:7.1f}) -> cell (col={cell.col}, row={cell.row})")
print("note: (100, 0) lands in column 1 because cells are half-open squares;")
print("a point on a shared edge belongs to exactly one cell.\n")

print("== cell polygons (for GeoJSON export) ==")
ring = cell_polygon(CellId(1, 2), grid)
print(f"cell (1,2) ring: {ring}")
print("counter-clockwise, first point repeated last.\n")

print("== declared-area consistency ==")
# Two real metropolitan-region rows: cell count vs declared area in km^2.
for name, n_cells, declared in [("large region", 81731, 816.26),
                                ("small region", 14353, 143.34)]:
    cells = frozenset(CellId(i % 300, i // 300) for i in range(n_cells))
    region = CityRegion(grid, cells, declared)
    report = check_region_consistency(region)
    print(f"{name}: {n_cells} cells x 0.01 km^2 = {report.computed_area_km2:.2f} km^2 "
          f"vs declared {declared} km^2 -> "
          f"{'PASS' if report.passed else 'FAIL'} "
          f"(relative error {report.relative_error:.4%})")

bogus = CityRegion(GridSpec(0, 0, 10, 10), frozenset(
    CellId(i % 10, i // 10) for i in range(100)), declared_area_km2=2.0)
report = check_region_consistency(bogus)
print(f"constructed mismatch: 100 cells vs 2.0 km^2 -> "
      f"{'PASS' if report.passed else 'FAIL'} (error {report.relative_error:.0%})\n")

print("== region files (run-length encoded) ==")
with tempfile.TemporaryDirectory() as tmp:
    path = Path(tmp) / "region.json"
    small = CityRegion(
        GridSpec(0, 0, 6, 4, 100.0, "toytown"),
        frozenset(CellId(c, r) for r in range(4) for c in range(6) if r != 2),
    )
    save_region(small, path)
    doc = json.loads(path.read_text())
    print(f"{small.n_cells} active cells stored as {len(doc['active_runs'])} row runs")
    assert load_region(path).active_cells == small.active_cells
    print("round trip OK")
