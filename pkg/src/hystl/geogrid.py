"""Crime-record ingestion, city gridding and the daily count tensor."""
from __future__ import annotations

import csv
import io
import json
import logging
import math
from collections import Counter
from dataclasses import dataclass, field
from datetime import date, datetime, timedelta
from pathlib import Path
from typing import Iterable, Sequence, TextIO

import numpy as np

logger = logging.getLogger(__name__)

KM_PER_DEG_LAT = 110.574
KM_PER_DEG_LON_EQUATOR = 111.320


class IngestError(Exception):
    pass


class OutOfGridError(ValueError):
    pass


@dataclass(frozen=True)
class CrimeRecord:
    timestamp: datetime
    latitude: float
    longitude: float
    crime_label: str
    city_id: str = ""


@dataclass
class ParseReport:
    total_rows: int = 0
    skipped: int = 0
    reasons: Counter = field(default_factory=Counter)

    def skip(self, reason: str) -> None:
        self.skipped += 1
        self.reasons[reason] += 1


@dataclass(frozen=True)
class GridSpec:
    origin_lat: float
    origin_lon: float
    n_rows: int
    n_cols: int
    lat_ref: float
    cell_km: float = 3.0

    def __post_init__(self):
        if self.cell_km <= 0:
            raise ValueError("cell_km must be positive")
        if self.n_rows < 1 or self.n_cols < 1:
            raise ValueError("grid needs at least one row and one column")

    @property
    def n_regions(self) -> int:
        return self.n_rows * self.n_cols

    @property
    def km_per_deg_lon(self) -> float:
        return KM_PER_DEG_LON_EQUATOR * math.cos(math.radians(self.lat_ref))

    def region_index(self) -> list[tuple[int, int]]:
        return [(r, c) for r in range(self.n_rows) for c in range(self.n_cols)]

    def cell_center(self, row: int, col: int) -> tuple[float, float]:
        lat = self.origin_lat + (row + 0.5) * self.cell_km / KM_PER_DEG_LAT
        lon = self.origin_lon + (col + 0.5) * self.cell_km / self.km_per_deg_lon
        return lat, lon

    def to_dict(self) -> dict:
        return {
            "origin_lat": self.origin_lat, "origin_lon": self.origin_lon,
            "n_rows": self.n_rows, "n_cols": self.n_cols,
            "lat_ref": self.lat_ref, "cell_km": self.cell_km,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GridSpec":
        return cls(**{k: d[k] for k in ("origin_lat", "origin_lon", "n_rows", "n_cols", "lat_ref", "cell_km")})


@dataclass
class CrimeTensor:
    counts: np.ndarray  # (T, R, C) nonnegative integers
    start_date: date
    region_index: list[tuple[int, int]]
    crime_types: list[str]
    city_id: str = ""
    resolution: str = "daily"

    def __post_init__(self):
        self.counts = np.asarray(self.counts)
        if self.counts.ndim != 3:
            raise ValueError(f"counts must be T x R x C, got shape {self.counts.shape}")
        if np.any(self.counts < 0):
            raise ValueError("counts must be nonnegative")
        T, R, C = self.counts.shape
        if len(self.region_index) != R or len(self.crime_types) != C:
            raise ValueError("region_index / crime_types do not match counts shape")

    @property
    def n_days(self) -> int:
        return self.counts.shape[0]

    @property
    def n_regions(self) -> int:
        return self.counts.shape[1]

    def type_index(self, crime_type: str) -> int:
        try:
            return self.crime_types.index(crime_type)
        except ValueError:
            raise KeyError(f"unknown crime type {crime_type!r} for city {self.city_id!r}") from None

    def series(self, crime_type: str) -> np.ndarray:
        """(T, R) counts of one crime type."""
        return self.counts[:, :, self.type_index(crime_type)]

    def dates(self) -> list[date]:
        return [self.start_date + timedelta(days=i) for i in range(self.n_days)]

    def save(self, directory: str | Path) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        if self.counts.max(initial=0) > np.iinfo(np.uint32).max:
            raise OverflowError("count exceeds uint32 range")
        manifest = {
            "shape": list(self.counts.shape),
            "start_date": self.start_date.isoformat(),
            "resolution": self.resolution,
            "region_index": [list(rc) for rc in self.region_index],
            "crime_types": list(self.crime_types),
            "city_id": self.city_id,
            "dtype": "<u4",
            "order": "t,r,c",
        }
        (directory / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
        (directory / "counts.bin").write_bytes(np.ascontiguousarray(self.counts, dtype="<u4").tobytes())

    @classmethod
    def load(cls, directory: str | Path) -> "CrimeTensor":
        directory = Path(directory)
        manifest = json.loads((directory / "manifest.json").read_text())
        shape = tuple(manifest["shape"])
        flat = np.frombuffer((directory / "counts.bin").read_bytes(), dtype="<u4")
        if flat.size != int(np.prod(shape)):
            raise ValueError(f"counts.bin has {flat.size} entries, manifest shape {shape}")
        return cls(
            counts=flat.reshape(shape).astype(np.int64),
            start_date=date.fromisoformat(manifest["start_date"]),
            region_index=[tuple(rc) for rc in manifest["region_index"]],
            crime_types=list(manifest["crime_types"]),
            city_id=manifest.get("city_id", ""),
            resolution=manifest.get("resolution", "daily"),
        )


def _parse_timestamp(raw: str, fmt: str | None) -> datetime:
    raw = raw.strip()
    if fmt:
        return datetime.strptime(raw, fmt)
    return datetime.fromisoformat(raw)


def parse_records(source: str | Path | TextIO, column_map: dict) -> tuple[list[CrimeRecord], ParseReport]:
    """Read crime rows from a CSV with a header row.

    ``column_map`` names the ``timestamp``, ``lat``, ``lon`` and ``label``
    columns; optional keys are ``date_format``, ``city_id`` and
    ``year_range`` (inclusive ``[first, last]``). Rows that fail to parse or
    carry out-of-range values are skipped and tallied in the report.
    """
    for key in ("timestamp", "lat", "lon", "label"):
        if key not in column_map:
            raise IngestError(f"column_map missing key {key!r}")
    if isinstance(source, (str, Path)):
        try:
            handle: TextIO = open(source, newline="", encoding="utf-8")
        except OSError as exc:
            raise IngestError(f"cannot read {source}: {exc}") from exc
    else:
        handle = source
    fmt = column_map.get("date_format")
    city = str(column_map.get("city_id", ""))
    years = column_map.get("year_range")
    report = ParseReport()
    records: list[CrimeRecord] = []
    try:
        reader = csv.DictReader(handle)
        if reader.fieldnames is None:
            raise IngestError("source has no header row")
        needed = [column_map[k] for k in ("timestamp", "lat", "lon", "label")]
        absent = [c for c in needed if c not in reader.fieldnames]
        if absent:
            raise IngestError(f"columns not in header: {absent}")
        for lineno, row in enumerate(reader, start=2):
            report.total_rows += 1
            try:
                ts = _parse_timestamp(row[column_map["timestamp"]] or "", fmt)
                lat = float(row[column_map["lat"]])
                lon = float(row[column_map["lon"]])
                label = (row[column_map["label"]] or "").strip()
            except (TypeError, ValueError, KeyError):
                logger.debug("line %d: unparseable row skipped", lineno)
                report.skip("parse")
                continue
            if not label:
                report.skip("empty_label")
                continue
            if not (-90.0 <= lat <= 90.0) or not (-180.0 <= lon <= 180.0) or not (
                math.isfinite(lat) and math.isfinite(lon)
            ):
                logger.debug("line %d: coordinate out of range (%s, %s)", lineno, lat, lon)
                report.skip("coordinate_range")
                continue
            if years is not None and not (years[0] <= ts.year <= years[1]):
                report.skip("year_range")
                continue
            records.append(CrimeRecord(ts, lat, lon, label, city))
    except (csv.Error, UnicodeDecodeError) as exc:
        raise IngestError(f"malformed CSV source: {exc}") from exc
    finally:
        if isinstance(source, (str, Path)):
            handle.close()
    if report.skipped:
        logger.info("parse_records: kept %d rows, skipped %d (%s)",
                    len(records), report.skipped, dict(report.reasons))
    return records, report


def build_grid(records: Sequence[CrimeRecord], cell_km: float = 3.0) -> GridSpec:
    if not records:
        raise ValueError("no records")
    if cell_km <= 0:
        raise ValueError("cell_km must be positive")
    lats = [r.latitude for r in records]
    lons = [r.longitude for r in records]
    lat0, lat1 = min(lats), max(lats)
    lon0, lon1 = min(lons), max(lons)
    lat_ref = 0.5 * (lat0 + lat1)
    lat_km = (lat1 - lat0) * KM_PER_DEG_LAT
    lon_km = (lon1 - lon0) * KM_PER_DEG_LON_EQUATOR * math.cos(math.radians(lat_ref))
    n_rows = max(1, math.ceil(lat_km / cell_km))
    n_cols = max(1, math.ceil(lon_km / cell_km))
    return GridSpec(lat0, lon0, n_rows, n_cols, lat_ref, cell_km)


def assign_cell(record: CrimeRecord, grid: GridSpec) -> tuple[int, int]:
    return assign_coordinate(record.latitude, record.longitude, grid)


def assign_coordinate(lat: float, lon: float, grid: GridSpec) -> tuple[int, int]:
    row = math.floor((lat - grid.origin_lat) * KM_PER_DEG_LAT / grid.cell_km)
    col = math.floor((lon - grid.origin_lon) * grid.km_per_deg_lon / grid.cell_km)
    # tolerance: one cell past either edge is clamped, anything further is an error
    if not (-1 <= row <= grid.n_rows and -1 <= col <= grid.n_cols):
        raise OutOfGridError(f"out of grid: ({lat}, {lon}) -> cell ({row}, {col})")
    return min(max(row, 0), grid.n_rows - 1), min(max(col, 0), grid.n_cols - 1)


def build_tensor(
    records: Iterable[CrimeRecord],
    grid: GridSpec,
    crime_types: Sequence[str],
    start_date: date | None = None,
    end_date: date | None = None,
    city_id: str = "",
) -> tuple[CrimeTensor, int]:
    """Count records per (day, cell, type). Returns the tensor and a skip count.

    Records whose label is not in ``crime_types``, whose date falls outside
    the requested range, or which lie beyond the grid tolerance are skipped.
    """
    records = list(records)
    days = [r.timestamp.date() for r in records]
    if start_date is None or end_date is None:
        if not days:
            raise ValueError("no records and no explicit date range")
        start_date = start_date or min(days)
        end_date = end_date or max(days)
    T = (end_date - start_date).days + 1
    if T < 1:
        raise ValueError("end_date precedes start_date")
    type_pos = {label: i for i, label in enumerate(crime_types)}
    counts = np.zeros((T, grid.n_regions, len(crime_types)), dtype=np.int64)
    skipped = 0
    for rec, day in zip(records, days):
        c = type_pos.get(rec.crime_label)
        t = (day - start_date).days
        if c is None or not 0 <= t < T:
            skipped += 1
            continue
        try:
            row, col = assign_cell(rec, grid)
        except OutOfGridError:
            logger.debug("record outside grid skipped: %s", rec)
            skipped += 1
            continue
        counts[t, row * grid.n_cols + col, c] += 1
    if skipped:
        logger.info("build_tensor: skipped %d records", skipped)
    tensor = CrimeTensor(counts, start_date, grid.region_index(), list(crime_types),
                         city_id or (records[0].city_id if records else ""))
    return tensor, skipped


def ingest_csv(source, column_map: dict, crime_types: Sequence[str] | None = None,
               cell_km: float = 3.0) -> tuple[CrimeTensor, GridSpec, dict]:
    """Parse, grid and count a CSV in one call; returns tensor, grid and a skip summary."""
    if isinstance(source, str) and "\n" in source:
        source = io.StringIO(source)
    records, report = parse_records(source, column_map)
    if crime_types is None:
        crime_types = sorted({r.crime_label for r in records})
    grid = build_grid(records, cell_km)
    tensor, skipped = build_tensor(records, grid, crime_types,
                                   city_id=str(column_map.get("city_id", "")))
    summary = {
        "total_rows": report.total_rows,
        "parse_skipped": report.skipped,
        "parse_reasons": dict(report.reasons),
        "tensor_skipped": skipped,
        "retained": int(tensor.counts.sum()),
    }
    return tensor, grid, summary
