"""Pipeline configuration files.

A minimal TOML-like format: ``key = value`` lines, ``[city.<name>]``
sections, ``#`` comments. Values are strings (optionally quoted), integers,
floats, booleans (``true``/``false``), or comma-separated lists. Paths are
resolved relative to the config file's directory.

Top-level keys::

    seed = 42
    level = local              # local | global
    day_types = weekday, weekend
    k_min = 3
    k_max = 10
    restarts = 10
    lambda = 1.0
    rr_cap = 1e6
    min_label_count = 10
    drop_silent_cells = false
    mean_per_day = false
    holdout = 0.0
    service_taxonomy = services.csv
    third_place_taxonomy = third_places.csv

    [city.nancy]
    region = nancy/region.json
    traffic = nancy/traffic.csv
    pois = nancy/pois.csv
    truth = nancy/truth_labels.csv   # optional planted labels
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .errors import ConfigError
from .signatures import DAY_TYPES, DEFAULT_RR_CAP

LEVELS = ("local", "global")


@dataclass
class CityConfig:
    name: str
    region: Path
    traffic: Path
    pois: Path
    truth: Optional[Path] = None


@dataclass
class PipelineConfig:
    cities: list[CityConfig]
    service_taxonomy: Path
    third_place_taxonomy: Path
    day_types: list[str] = field(default_factory=lambda: ["weekday", "weekend"])
    level: str = "local"
    k_min: int = 3
    k_max: int = 10
    seed: int = 0
    restarts: int = 10
    lam: float = 1.0
    rr_cap: float = DEFAULT_RR_CAP
    min_label_count: int = 10
    drop_silent_cells: bool = False
    mean_per_day: bool = False
    holdout: float = 0.0

    def validate(self) -> None:
        if not self.cities:
            raise ConfigError("config lists no cities")
        if self.level not in LEVELS:
            raise ConfigError(f"level must be one of {LEVELS}")
        for dt in self.day_types:
            if dt not in DAY_TYPES:
                raise ConfigError(f"unknown day type {dt!r}")
        if not self.day_types:
            raise ConfigError("day_types is empty")
        if not (2 <= self.k_min <= self.k_max):
            raise ConfigError("need 2 <= k_min <= k_max")
        if self.restarts < 1:
            raise ConfigError("restarts must be at least 1")
        if self.lam < 0:
            raise ConfigError("lambda must be nonnegative")
        if not (0.0 <= self.holdout < 1.0):
            raise ConfigError("holdout must be in [0, 1)")
        names = [c.name for c in self.cities]
        if len(set(names)) != len(names):
            raise ConfigError("duplicate city names")


def _strip_comment(line: str) -> str:
    out = []
    quote = None
    for ch in line:
        if quote:
            if ch == quote:
                quote = None
        elif ch in "'\"":
            quote = ch
        elif ch == "#":
            break
        out.append(ch)
    return "".join(out).strip()


def _scalar(text: str):
    text = text.strip()
    if len(text) >= 2 and text[0] == text[-1] and text[0] in "'\"":
        return text[1:-1]
    low = text.lower()
    if low == "true":
        return True
    if low == "false":
        return False
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        pass
    return text


def _value(text: str):
    stripped = text.strip()
    if len(stripped) >= 2 and stripped[0] == stripped[-1] and stripped[0] in "'\"":
        return stripped[1:-1]  # quoted values are never split
    if "," in stripped:
        return [_scalar(p) for p in stripped.split(",") if p.strip()]
    return _scalar(stripped)


def _read_sections(path: Path) -> tuple[dict, dict[str, dict]]:
    top: dict = {}
    sections: dict[str, dict] = {}
    current = top
    for line_no, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = _strip_comment(raw)
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            name = line[1:-1].strip()
            if not name.startswith("city."):
                raise ConfigError(f"{path}:{line_no}: unknown section [{name}]")
            city = name[len("city.") :].strip()
            if not city:
                raise ConfigError(f"{path}:{line_no}: empty city name")
            if city in sections:
                raise ConfigError(f"{path}:{line_no}: duplicate section [city.{city}]")
            sections[city] = {}
            current = sections[city]
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{line_no}: expected key = value")
        key, _, val = line.partition("=")
        key = key.strip()
        if not key:
            raise ConfigError(f"{path}:{line_no}: empty key")
        if key in current:
            raise ConfigError(f"{path}:{line_no}: duplicate key {key!r}")
        current[key] = _value(val)
    return top, sections


def _as_list(value) -> list:
    return value if isinstance(value, list) else [value]


def parse_config(path) -> PipelineConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file {path} does not exist")
    top, sections = _read_sections(path)
    base = path.parent

    def path_of(value, context) -> Path:
        if not isinstance(value, str) or not value:
            raise ConfigError(f"{context} must be a path string")
        return (base / value).resolve()

    for required in ("service_taxonomy", "third_place_taxonomy"):
        if required not in top:
            raise ConfigError(f"config is missing {required!r}")
    cities = []
    for name, body in sections.items():
        for required in ("region", "traffic", "pois"):
            if required not in body:
                raise ConfigError(f"[city.{name}] is missing {required!r}")
        cities.append(
            CityConfig(
                name=name,
                region=path_of(body["region"], f"[city.{name}] region"),
                traffic=path_of(body["traffic"], f"[city.{name}] traffic"),
                pois=path_of(body["pois"], f"[city.{name}] pois"),
                truth=path_of(body["truth"], f"[city.{name}] truth") if "truth" in body else None,
            )
        )

    config = PipelineConfig(
        cities=cities,
        service_taxonomy=path_of(top["service_taxonomy"], "service_taxonomy"),
        third_place_taxonomy=path_of(top["third_place_taxonomy"], "third_place_taxonomy"),
        day_types=[str(d) for d in _as_list(top.get("day_types", ["weekday", "weekend"]))],
        level=str(top.get("level", "local")),
        k_min=int(top.get("k_min", 3)),
        k_max=int(top.get("k_max", 10)),
        seed=int(top.get("seed", 0)),
        restarts=int(top.get("restarts", 10)),
        lam=float(top.get("lambda", 1.0)),
        rr_cap=float(top.get("rr_cap", DEFAULT_RR_CAP)),
        min_label_count=int(top.get("min_label_count", 10)),
        drop_silent_cells=bool(top.get("drop_silent_cells", False)),
        mean_per_day=bool(top.get("mean_per_day", False)),
        holdout=float(top.get("holdout", 0.0)),
    )
    config.validate()
    return config


def config_to_dict(config: PipelineConfig) -> dict:
    return {
        "cities": [
            {
                "name": c.name,
                "region": str(c.region),
                "traffic": str(c.traffic),
                "pois": str(c.pois),
                "truth": None if c.truth is None else str(c.truth),
            }
            for c in config.cities
        ],
        "service_taxonomy": str(config.service_taxonomy),
        "third_place_taxonomy": str(config.third_place_taxonomy),
        "day_types": list(config.day_types),
        "level": config.level,
        "k_min": config.k_min,
        "k_max": config.k_max,
        "seed": config.seed,
        "restarts": config.restarts,
        "lambda": config.lam,
        "rr_cap": config.rr_cap,
        "min_label_count": config.min_label_count,
        "drop_silent_cells": config.drop_silent_cells,
        "mean_per_day": config.mean_per_day,
        "holdout": config.holdout,
    }


def config_from_dict(doc: dict) -> PipelineConfig:
    cities = [
        CityConfig(
            name=c["name"],
            region=Path(c["region"]),
            traffic=Path(c["traffic"]),
            pois=Path(c["pois"]),
            truth=None if c.get("truth") is None else Path(c["truth"]),
        )
        for c in doc["cities"]
    ]
    config = PipelineConfig(
        cities=cities,
        service_taxonomy=Path(doc["service_taxonomy"]),
        third_place_taxonomy=Path(doc["third_place_taxonomy"]),
        day_types=list(doc["day_types"]),
        level=doc["level"],
        k_min=int(doc["k_min"]),
        k_max=int(doc["k_max"]),
        seed=int(doc["seed"]),
        restarts=int(doc["restarts"]),
        lam=float(doc["lambda"]),
        rr_cap=float(doc["rr_cap"]),
        min_label_count=int(doc["min_label_count"]),
        drop_silent_cells=bool(doc["drop_silent_cells"]),
        mean_per_day=bool(doc["mean_per_day"]),
        holdout=float(doc["holdout"]),
    )
    config.validate()
    return config
