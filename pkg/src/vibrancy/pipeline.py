"""Run orchestration: ingestion through model fitting, with a manifest.

A run executes, per requested day type and at the configured spatial level,
the chain signatures -> relative risk -> k selection -> size-ordered labels
-> third-place features -> membership model -> metrics, exporting every
artifact into a run directory. The manifest records the resolved config,
input and artifact hashes, library versions, and headline results; feeding
it back through ``run_from_manifest`` reproduces all artifacts bit for bit
on the same platform.
"""

from __future__ import annotations

import csv
import hashlib
import json
import sys
from contextlib import contextmanager
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .config import CityConfig, PipelineConfig, config_from_dict, config_to_dict
from .clustering import (
    ClusterModel,
    KSelectionReport,
    export_labels_csv,
    export_labels_geojson,
    relabel_by_size,
    select_k,
    write_model,
)
from .errors import DataError, VibrancyError
from .features import (
    FeatureTable,
    build_features,
    export_features_csv,
    filter_rare_labels,
    load_third_place_taxonomy,
    standardize,
)
from .grid import CellId, CityRegion, load_region
from .ingest import load_taxonomy, parse_pois, parse_traffic
from .logit import (
    MultinomialLogit,
    evaluate,
    export_coefficients_csv,
    fit,
    predict,
    save_logit,
)
from .signatures import (
    NormalizedTensor,
    SignatureTensor,
    TensorSegment,
    build_signatures,
    concat_tensors,
    drop_silent_cells,
    relative_risk,
    write_tensor,
)
from .synth import adjusted_rand_index

MANIFEST_NAME = "manifest.json"


def file_sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


@contextmanager
def _stage(name: str):
    """Re-raise stage failures with the stage named, keeping the error class
    (and therefore the CLI exit code) intact."""
    try:
        yield
    except VibrancyError as exc:
        raise type(exc)(f"stage {name!r}: {exc}") from exc


def load_truth_labels(path) -> dict[CellId, int]:
    """Read a planted-truth CSV (col,row,archetype)."""
    out: dict[CellId, int] = {}
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [c.strip() for c in header] != ["col", "row", "archetype"]:
            raise DataError(f"truth file {path} must have header col,row,archetype")
        for row in reader:
            if not row:
                continue
            out[CellId(int(row[0]), int(row[1]))] = int(row[2])
    return out


# ---------------------------------------------------------------------------
# Stage helpers shared by the CLI subcommands (so cmd chaining == `run`)
# ---------------------------------------------------------------------------


def build_city_tensor(
    region: CityRegion,
    traffic_path,
    service_taxonomy,
    day_type: str,
    *,
    mean_per_day: bool = False,
    drop_silent: bool = False,
    segment_name: Optional[str] = None,
) -> SignatureTensor:
    records, _report = parse_traffic(traffic_path, region.grid)
    tensor = build_signatures(records, service_taxonomy, region, day_type,
                              mean_per_day=mean_per_day)
    if drop_silent:
        tensor = drop_silent_cells(tensor)
    if segment_name is not None:
        tensor.segments = [
            TensorSegment(segment_name, s.grid, s.start, s.stop) for s in tensor.segments
        ]
    return tensor


def cluster_tensor(
    rr: NormalizedTensor,
    k_min: int,
    k_max: int,
    seed: int,
    restarts: int,
) -> tuple[ClusterModel, KSelectionReport]:
    model, report = select_k(rr, k_min=k_min, k_max=k_max, seed=seed, restarts=restarts)
    return relabel_by_size(model), report


def fit_membership_model(
    tables: Sequence[FeatureTable],
    label_vectors: Sequence[np.ndarray],
    *,
    lam: float = 1.0,
    holdout: float = 0.0,
    seed: int = 0,
    standardize_covariates: bool = True,
):
    """Stack (features, labels) pairs, optionally z-score, fit, and evaluate.

    With a holdout fraction the rows are split by a seeded permutation; the
    model trains on the remainder and metrics are computed on the held-out
    rows. Standardization statistics come from the full table and are stored
    on the model.
    """
    if len(tables) != len(label_vectors) or not tables:
        raise DataError("need matching, nonempty feature/label inputs")
    columns = tables[0].columns
    for t in tables:
        if t.columns != columns:
            raise DataError("feature tables disagree on covariate columns")
    cells = [c for t in tables for c in t.cells]
    X_raw = np.concatenate([t.values for t in tables], axis=0)
    y = np.concatenate([np.asarray(v, dtype=np.int64) for v in label_vectors])
    if y.shape[0] != X_raw.shape[0]:
        raise DataError("features and labels differ in row count")

    table = FeatureTable(cells, columns, X_raw)
    standardization = None
    if standardize_covariates:
        table = standardize(table)
        standardization = {
            "columns": list(columns),
            "means": [float(v) for v in table.means],
            "sds": [float(v) for v in table.sds],
        }
    X = table.values

    n = X.shape[0]
    if holdout > 0.0:
        rng = np.random.default_rng(np.random.SeedSequence((seed, 7919)))
        perm = rng.permutation(n)
        n_eval = int(round(holdout * n))
        eval_idx = np.sort(perm[:n_eval])
        train_idx = np.sort(perm[n_eval:])
        if n_eval == 0:
            eval_idx = train_idx
    else:
        train_idx = np.arange(n)
        eval_idx = train_idx

    model = fit(X[train_idx], y[train_idx], lam=lam, covariates=columns)
    model.standardization = standardization
    y_pred = predict(model, X[eval_idx])
    class_set = sorted(set(model.classes) | set(int(v) for v in y[eval_idx]))
    report = evaluate(y[eval_idx].tolist(), [int(v) for v in y_pred], class_set)
    extra = {
        "n_rows": int(n),
        "n_train": int(train_idx.shape[0]),
        "n_eval": int(eval_idx.shape[0]),
        "holdout": float(holdout),
        "standardized": bool(standardize_covariates),
    }
    return model, report, extra


# ---------------------------------------------------------------------------
# The full run
# ---------------------------------------------------------------------------


def _write_json(doc: dict, path: Path) -> None:
    path.write_text(json.dumps(doc, sort_keys=True, indent=1) + "\n", encoding="utf-8")


def metrics_document(logit_model: MultinomialLogit, metrics, extra: dict) -> dict:
    """Model-stage facts only, so re-running `fit` alone reproduces the file."""
    return {
        "model_converged": logit_model.converged,
        **extra,
        "metrics": metrics.to_dict(),
    }


def _kselection_doc(report: KSelectionReport) -> dict:
    return {
        "scores": {str(k): float(v) for k, v in report.scores.items()},
        "inertias": {str(k): float(v) for k, v in report.inertias.items()},
        "chosen_k": report.chosen_k,
        "tie_break_note": report.tie_break_note,
    }


class _CityData:
    def __init__(self, cfg: CityConfig):
        with _stage("ingest"):
            if not Path(cfg.traffic).is_file():
                raise DataError(f"traffic file {cfg.traffic} does not exist")
            if not Path(cfg.pois).is_file():
                raise DataError(f"POI file {cfg.pois} does not exist")
            self.name = cfg.name
            self.region = load_region(cfg.region)
            self.traffic_path = cfg.traffic
            self.pois, _ = parse_pois(cfg.pois)
            self.truth = load_truth_labels(cfg.truth) if cfg.truth else None


def run_pipeline(config: PipelineConfig, out_dir) -> dict:
    """Execute the configured run and return the manifest (also written to disk)."""
    config.validate()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    inputs: dict[str, str] = {}
    with _stage("ingest"):
        for p in [config.service_taxonomy, config.third_place_taxonomy] + [
            q for c in config.cities for q in (c.region, c.traffic, c.pois, c.truth) if q
        ]:
            if not Path(p).is_file():
                raise DataError(f"input file {p} does not exist")
            inputs[str(p)] = file_sha256(p)
        service_tax = load_taxonomy(config.service_taxonomy)
        place_tax = load_third_place_taxonomy(config.third_place_taxonomy)
        cities = [_CityData(c) for c in config.cities]

    artifacts: list[Path] = []
    quality: dict[str, dict] = {}
    results: dict[str, dict] = {}

    def emit(rel: str, writer) -> None:
        path = out / rel
        path.parent.mkdir(parents=True, exist_ok=True)
        writer(path)
        artifacts.append(path)

    for day_type in config.day_types:
        if config.level == "local":
            for city in cities:
                scope = f"{city.name}/{day_type}"
                _run_scope(
                    scope=scope,
                    day_type=day_type,
                    config=config,
                    service_tax=service_tax,
                    place_tax=place_tax,
                    members=[city],
                    emit=emit,
                    quality=quality,
                    results=results,
                )
        else:
            scope = f"global/{day_type}"
            _run_scope(
                scope=scope,
                day_type=day_type,
                config=config,
                service_tax=service_tax,
                place_tax=place_tax,
                members=cities,
                emit=emit,
                quality=quality,
                results=results,
            )

    manifest = {
        "format": "vibrancy-run-manifest",
        "version": 1,
        "config": config_to_dict(config),
        "environment": {
            "package": __version__,
            "python": ".".join(str(v) for v in sys.version_info[:3]),
            "numpy": np.__version__,
        },
        "inputs": dict(sorted(inputs.items())),
        "artifacts": {
            str(p.relative_to(out)): file_sha256(p) for p in sorted(artifacts)
        },
        "quality": quality,
        "results": results,
    }
    _write_json(manifest, out / MANIFEST_NAME)
    return manifest


def _run_scope(scope, day_type, config, service_tax, place_tax, members, emit, quality, results):
    """One (scope x day_type) pass; members has one city at local level, all at global."""
    multi = len(members) > 1

    def rows_of(city) -> range:
        return rr.segment_rows(city.name)

    with _stage("signatures"):
        raws = []
        for city in members:
            raw = build_city_tensor(
                city.region,
                city.traffic_path,
                service_tax,
                day_type,
                mean_per_day=config.mean_per_day,
                drop_silent=config.drop_silent_cells,
                segment_name=city.name,
            )
            raws.append(raw)
            name = f"signatures_raw_{city.name}.sig" if multi else "signatures_raw.sig"
            emit(f"{scope}/{name}", lambda p, t=raw: write_tensor(t, p))
        combined = concat_tensors(raws) if multi else raws[0]
        rr = relative_risk(combined, cap=config.rr_cap)
        emit(f"{scope}/signatures_rr.sig", lambda p: write_tensor(rr, p))
        quality[scope] = {"capped_columns": len(rr.capped_columns)}

    with _stage("clustering"):
        model, report = cluster_tensor(
            rr, config.k_min, config.k_max, config.seed, config.restarts
        )
        emit(f"{scope}/kselection.json", lambda p: _write_json(_kselection_doc(report), p))
        emit(f"{scope}/clusters.bin", lambda p: write_model(model, p))
        for city in members:
            rows = rows_of(city)
            seg_cells = [rr.cells[i] for i in rows]
            seg_labels = model.labels[list(rows)]
            grid = city.region.grid
            base = f"labels_{city.name}" if multi else "labels"
            emit(f"{scope}/{base}.csv",
                 lambda p, c=seg_cells, v=seg_labels: export_labels_csv(c, v, p))
            emit(f"{scope}/{base}.geojson",
                 lambda p, c=seg_cells, v=seg_labels, g=grid: export_labels_geojson(c, v, g, p))

    with _stage("features"):
        pooled = [poi for city in members for poi in city.pois]
        kept = filter_rare_labels(pooled, config.min_label_count)
        kept_labels = {p.label for p in kept}
        tables = []
        for city in members:
            seg_cells = [rr.cells[i] for i in rows_of(city)]
            city_kept = [p for p in city.pois if p.label in kept_labels]
            table = build_features(city_kept, place_tax, city.region, cells=seg_cells)
            tables.append(table)
            name = f"features_{city.name}.csv" if multi else "features.csv"
            emit(f"{scope}/{name}", lambda p, t=table: export_features_csv(t, p))

    with _stage("model"):
        label_vectors = [model.labels[list(rows_of(city))] for city in members]
        logit_model, metrics, extra = fit_membership_model(
            tables,
            label_vectors,
            lam=config.lam,
            holdout=config.holdout,
            seed=config.seed,
        )
        emit(f"{scope}/model.json", lambda p: save_logit(logit_model, p))
        emit(f"{scope}/coefficients.csv", lambda p: export_coefficients_csv(logit_model, p))
        metrics_doc = metrics_document(logit_model, metrics, extra)
        emit(f"{scope}/metrics.json", lambda p: _write_json(metrics_doc, p))

    summary = {
        "chosen_k": model.k,
        "silhouette": report.scores[report.chosen_k],
        "cluster_sizes": {str(k): v for k, v in model.sizes().items()},
        "accuracy": metrics.accuracy,
        "macro_f1": metrics.macro_f1,
        "weighted_f1": metrics.weighted_f1,
    }
    if all(city.truth is not None for city in members):
        planted: list[int] = []
        found: list[int] = []
        complete = True
        for city in members:
            for i in rows_of(city):
                cell = rr.cells[i]
                if cell not in city.truth:
                    complete = False
                    break
                planted.append(city.truth[cell])
                found.append(int(model.labels[i]))
            if not complete:
                break
        if complete:
            summary["ari_vs_truth"] = adjusted_rand_index(found, planted)
    results[scope] = summary


def read_manifest(path) -> dict:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read manifest {path}: {exc}") from exc
    if doc.get("format") != "vibrancy-run-manifest":
        raise DataError(f"{path} is not a run manifest")
    return doc


def run_from_manifest(manifest_path, out_dir, verify_inputs: bool = True) -> dict:
    """Re-execute a run from its manifest; inputs are hash-checked first."""
    doc = read_manifest(manifest_path)
    config = config_from_dict(doc["config"])
    if verify_inputs:
        for path, digest in doc.get("inputs", {}).items():
            if not Path(path).is_file():
                raise DataError(f"manifest input {path} is missing")
            if file_sha256(path) != digest:
                raise DataError(f"manifest input {path} changed since the recorded run")
    return run_pipeline(config, out_dir)
