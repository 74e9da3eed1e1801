"""Command-line entry points.

Subcommands mirror the pipeline stages (`synth`, `signatures`, `cluster`,
`features`, `fit`, `report`) plus `run`, which chains them; chaining the
individual subcommands by hand produces byte-identical artifacts. Exit
codes: 0 success, 1 usage, 2 data problem, 3 numeric problem.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from .config import parse_config
from .clustering import (
    export_labels_csv,
    export_labels_geojson,
    write_model,
)
from .errors import DataError, NumericError, VibrancyError
from .features import build_features, filter_rare_labels, load_third_place_taxonomy
from .features import export_features_csv, load_features_csv
from .grid import CellId, load_region
from .ingest import load_taxonomy, parse_pois
from .logit import export_coefficients_csv, save_logit
from .pipeline import (
    MANIFEST_NAME,
    _kselection_doc,
    _write_json,
    build_city_tensor,
    cluster_tensor,
    fit_membership_model,
    metrics_document,
    read_manifest,
    run_from_manifest,
    run_pipeline,
)
from .signatures import (
    DAY_TYPES,
    DEFAULT_RR_CAP,
    concat_tensors,
    read_tensor,
    relative_risk,
    write_tensor,
)
from .synth import SynthSpec, generate_for_day_types, write_city

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would exit(2); our usage code is 1
        raise _UsageError(message)


def _cmd_synth(args) -> int:
    spec = SynthSpec(
        seed=args.seed,
        n_cells=args.cells,
        k_true=args.k_true,
        categories=tuple(f"cat{i:02d}" for i in range(args.categories)),
        noise_sigma=args.sigma,
        n_days=args.days,
        region_name=args.name,
    )
    truth = generate_for_day_types(spec, args.day_types)
    out = Path(args.out)
    paths = write_city(truth, out)
    day_types = ", ".join(args.day_types)
    config_text = (
        f"seed = {args.seed}\n"
        "level = local\n"
        f"day_types = {day_types}\n"
        "k_min = 3\nk_max = 10\nrestarts = 10\nlambda = 1.0\n"
        "service_taxonomy = service_taxonomy.csv\n"
        "third_place_taxonomy = third_places.csv\n\n"
        f"[city.{args.name}]\n"
        "region = region.json\ntraffic = traffic.csv\npois = pois.csv\n"
        "truth = truth_labels.csv\n"
    )
    cfg_path = out / "pipeline.cfg"
    cfg_path.write_text(config_text, encoding="utf-8")
    print(f"wrote synthetic city ({spec.n_cells} cells, k_true={spec.k_true}) to {out}")
    for key, path in paths.items():
        print(f"  {key}: {path}")
    print(f"  config: {cfg_path}")
    return EXIT_OK


def _cmd_signatures(args) -> int:
    region = load_region(args.region)
    taxonomy = load_taxonomy(args.service_taxonomy)
    tensor = build_city_tensor(
        region,
        args.traffic,
        taxonomy,
        args.day_type,
        mean_per_day=args.mean_per_day,
        drop_silent=args.drop_silent_cells,
        segment_name=args.segment_name,
    )
    write_tensor(tensor, args.out_raw)
    print(f"signature tensor: {tensor.n} cells x 12 bins x {len(tensor.categories)} categories")
    if args.out_rr:
        rr = relative_risk(tensor, cap=args.cap)
        write_tensor(rr, args.out_rr)
        print(f"relative risk written ({len(rr.capped_columns)} capped columns)")
    return EXIT_OK


def _cmd_cluster(args) -> int:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if args.rr:
        rr = read_tensor(args.rr)
        if not hasattr(rr, "capped_columns"):
            raise DataError(f"{args.rr} is a raw tensor; pass it with --raw instead")
    else:
        raws = [read_tensor(p) for p in args.raw]
        combined = concat_tensors(raws) if len(raws) > 1 else raws[0]
        rr = relative_risk(combined, cap=args.cap)
        write_tensor(rr, out / "signatures_rr.sig")
    model, report = cluster_tensor(rr, args.k_min, args.k_max, args.seed, args.restarts)
    _write_json(_kselection_doc(report), out / "kselection.json")
    write_model(model, out / "clusters.bin")
    multi = len(rr.segments) > 1
    for seg in rr.segments:
        rows = range(seg.start, seg.stop)
        cells = [rr.cells[i] for i in rows]
        labels = model.labels[list(rows)]
        base = f"labels_{seg.name}" if multi else "labels"
        export_labels_csv(cells, labels, out / f"{base}.csv")
        export_labels_geojson(cells, labels, seg.grid, out / f"{base}.geojson")
    print(f"chosen k = {model.k} (silhouette {report.scores[report.chosen_k]:.4f})")
    sizes = model.sizes()
    print("cluster sizes: " + ", ".join(f"{k}: {sizes[k]}" for k in sorted(sizes)))
    if report.tie_break_note:
        print(report.tie_break_note)
    return EXIT_OK


def _read_label_cells(path) -> list[CellId]:
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or header[:2] != ["col", "row"]:
            raise DataError(f"labels file {path} must have header col,row,cluster")
        return [CellId(int(r[0]), int(r[1])) for r in reader if r]


def _cmd_features(args) -> int:
    region = load_region(args.region)
    taxonomy = load_third_place_taxonomy(args.third_places)
    pois, _ = parse_pois(args.pois)
    corpus = list(pois)
    for extra in args.pool_pois or []:
        extra_pois, _ = parse_pois(extra)
        corpus.extend(extra_pois)
    kept_labels = {p.label for p in filter_rare_labels(corpus, args.min_count)}
    kept = [p for p in pois if p.label in kept_labels]
    cells = _read_label_cells(args.cells_from) if args.cells_from else None
    table = build_features(kept, taxonomy, region, cells=cells)
    export_features_csv(table, args.out)
    nonzero = int((table.values[:, 0] > 0).sum())
    print(f"features for {table.n} cells written ({nonzero} cells hold third places)")
    return EXIT_OK


def _read_labels_for(cells, path) -> np.ndarray:
    by_cell = {}
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [c.strip() for c in header] != ["col", "row", "cluster"]:
            raise DataError(f"labels file {path} must have header col,row,cluster")
        for r in reader:
            if r:
                by_cell[CellId(int(r[0]), int(r[1]))] = int(r[2])
    try:
        return np.array([by_cell[c] for c in cells], dtype=np.int64)
    except KeyError as exc:
        raise DataError(f"labels file {path} is missing cell {exc}") from exc


def _cmd_fit(args) -> int:
    if len(args.features) != len(args.labels):
        raise DataError("--features and --labels must be paired")
    tables = [load_features_csv(p) for p in args.features]
    label_vectors = [_read_labels_for(t.cells, p) for t, p in zip(tables, args.labels)]
    model, metrics, extra = fit_membership_model(
        tables,
        label_vectors,
        lam=args.lam,
        holdout=args.holdout,
        seed=args.seed,
        standardize_covariates=not args.no_standardize,
    )
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_logit(model, out / "model.json")
    export_coefficients_csv(model, out / "coefficients.csv")
    _write_json(metrics_document(model, metrics, extra), out / "metrics.json")
    print(
        f"fit on {extra['n_train']} rows: accuracy {metrics.accuracy:.4f}, "
        f"macro F1 {metrics.macro_f1:.4f}, weighted F1 {metrics.weighted_f1:.4f}"
    )
    if not model.converged:
        print("warning: gradient descent did not reach tolerance", file=sys.stderr)
    return EXIT_OK


def _cmd_run(args) -> int:
    out = args.out
    if args.manifest:
        manifest = run_from_manifest(args.manifest, out)
    else:
        config = parse_config(args.config)
        for name, value in [
            ("seed", args.seed), ("k_min", args.k_min), ("k_max", args.k_max),
            ("restarts", args.restarts), ("lam", args.lam), ("level", args.level),
            ("holdout", args.holdout),
        ]:
            if value is not None:
                setattr(config, name, value)
        if args.day_type:
            config.day_types = list(args.day_type)
        if args.drop_silent_cells:
            config.drop_silent_cells = True
        if args.mean_per_day:
            config.mean_per_day = True
        config.validate()
        manifest = run_pipeline(config, out)
    print(f"run complete: {len(manifest['artifacts'])} artifacts in {out}")
    for scope in sorted(manifest["results"]):
        r = manifest["results"][scope]
        ari = f", ARI vs truth {r['ari_vs_truth']:.3f}" if "ari_vs_truth" in r else ""
        print(
            f"  {scope}: k={r['chosen_k']} silhouette={r['silhouette']:.4f} "
            f"accuracy={r['accuracy']:.4f}{ari}"
        )
    return EXIT_OK


def _cmd_report(args) -> int:
    run_dir = Path(args.run_dir)
    manifest = read_manifest(run_dir / MANIFEST_NAME)
    print(f"run of {manifest['environment']['package']} "
          f"(seed {manifest['config']['seed']}, level {manifest['config']['level']})")
    header = f"{'scope':<24}{'k':>3}{'silhouette':>12}{'accuracy':>10}{'macroF1':>9}{'wF1':>7}"
    print(header)
    for scope in sorted(manifest["results"]):
        r = manifest["results"][scope]
        print(
            f"{scope:<24}{r['chosen_k']:>3}{r['silhouette']:>12.4f}"
            f"{r['accuracy']:>10.4f}{r['macro_f1']:>9.4f}{r['weighted_f1']:>7.4f}"
        )
    for scope in sorted(manifest["results"]):
        ksel_path = run_dir / scope / "kselection.json"
        if ksel_path.is_file():
            ksel = json.loads(ksel_path.read_text(encoding="utf-8"))
            scores = ", ".join(f"k={k}: {v:.4f}" for k, v in sorted(
                ksel["scores"].items(), key=lambda kv: int(kv[0])))
            print(f"\nsilhouette by k [{scope}]: {scores}")
        coef_path = run_dir / scope / "coefficients.csv"
        if coef_path.is_file():
            print(f"coefficients [{scope}]:")
            for idx, line in enumerate(coef_path.read_text(encoding="utf-8").splitlines()):
                parts = line.split(",")
                if idx == 0:
                    print("  " + parts[0].ljust(34) + "".join(p.rjust(11) for p in parts[1:]))
                else:
                    print("  " + parts[0].ljust(34)
                          + "".join(f"{float(p):>11.4f}" for p in parts[1:]))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="vibrancy", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic city with planted archetypes")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--cells", type=int, default=120)
    p.add_argument("--k-true", type=int, default=3)
    p.add_argument("--categories", type=int, default=4)
    p.add_argument("--sigma", type=float, default=1.0)
    p.add_argument("--days", type=int, default=1)
    p.add_argument("--name", default="synthcity")
    p.add_argument("--day-types", default=["weekday"], nargs="+", choices=DAY_TYPES)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("signatures", help="build a signature tensor from traffic CSV")
    p.add_argument("--region", required=True)
    p.add_argument("--traffic", required=True)
    p.add_argument("--service-taxonomy", required=True)
    p.add_argument("--day-type", required=True, choices=DAY_TYPES)
    p.add_argument("--segment-name", default=None)
    p.add_argument("--mean-per-day", action="store_true")
    p.add_argument("--drop-silent-cells", action="store_true")
    p.add_argument("--cap", type=float, default=DEFAULT_RR_CAP)
    p.add_argument("--out-raw", required=True)
    p.add_argument("--out-rr")
    p.set_defaults(func=_cmd_signatures)

    p = sub.add_parser("cluster", help="silhouette-selected k-means over a tensor")
    p.add_argument("--rr", help="relative-risk tensor file")
    p.add_argument("--raw", action="append", default=[],
                   help="raw tensor file(s); concatenated then normalized")
    p.add_argument("--cap", type=float, default=DEFAULT_RR_CAP)
    p.add_argument("--k-min", type=int, default=3)
    p.add_argument("--k-max", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--restarts", type=int, default=10)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=_cmd_cluster)

    p = sub.add_parser("features", help="third-place covariates per cell from POIs")
    p.add_argument("--region", required=True)
    p.add_argument("--pois", required=True)
    p.add_argument("--third-places", required=True, help="label,category taxonomy CSV")
    p.add_argument("--pool-pois", action="append", default=[],
                   help="extra POI files included in the rare-label count only")
    p.add_argument("--min-count", type=int, default=10)
    p.add_argument("--cells-from", help="labels CSV fixing the cell rows and order")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_features)

    p = sub.add_parser("fit", help="fit the cluster-membership model")
    p.add_argument("--features", action="append", required=True)
    p.add_argument("--labels", action="append", required=True)
    p.add_argument("--lambda", dest="lam", type=float, default=1.0)
    p.add_argument("--holdout", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--no-standardize", action="store_true")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=_cmd_fit)

    p = sub.add_parser("run", help="execute the full pipeline from a config or manifest")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--config")
    src.add_argument("--manifest")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--lambda", dest="lam", type=float)
    p.add_argument("--k-min", type=int)
    p.add_argument("--k-max", type=int)
    p.add_argument("--restarts", type=int)
    p.add_argument("--level", choices=("local", "global"))
    p.add_argument("--day-type", action="append", choices=DAY_TYPES)
    p.add_argument("--holdout", type=float)
    p.add_argument("--drop-silent-cells", action="store_true")
    p.add_argument("--mean-per-day", action="store_true")
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("report", help="re-emit result tables from a finished run")
    p.add_argument("--run-dir", required=True)
    p.set_defaults(func=_cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        if args.command == "cluster" and bool(args.rr) == bool(args.raw):
            raise _UsageError("pass exactly one of --rr or --raw")
        return args.func(args)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except VibrancyError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
