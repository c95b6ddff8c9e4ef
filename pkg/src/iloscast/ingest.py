"""Parse long-format PM telemetry and merge it into per-port daily series.

Input is a long-format CSV with header
``network_id,port_id,facility_type,date,pm_name,pm_value`` and ISO dates.
Several facilities may report the same PM on the same port and day; the
merge keeps the per-day maximum. Days between a port's first and last
observation are filled with all-absent rows so every series is gap-free.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from datetime import date, timedelta
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

from .errors import IngestError, SchemaError
from .schema import FeatureSchema, PmRecord

CSV_HEADER = ["network_id", "port_id", "facility_type", "date", "pm_name", "pm_value"]


@dataclass(frozen=True)
class PortSeries:
    """Gap-free daily rows for one port.

    ``values`` is (n_days, n_numeric) float64 with NaN marking absent
    entries; ``onehot`` is the port's constant facility flags (1.0 where the
    facility reported on any day of the ingest window).
    """

    network_id: str
    port_id: str
    start_day: date
    values: np.ndarray
    onehot: np.ndarray

    @property
    def n_days(self) -> int:
        return self.values.shape[0]

    def day(self, row: int) -> date:
        return self.start_day + timedelta(days=row)


def parse_pm_csv(
    path: str | Path, schema_hint: FeatureSchema | None = None
) -> Iterator[PmRecord]:
    """Yield :class:`PmRecord` in file order.

    Malformed lines raise :class:`IngestError` naming the file and
    1-based line number. When ``schema_hint`` is given, facilities outside
    its one-hot list are rejected.
    """
    path = Path(path)
    try:
        fh = open(path, "r", encoding="utf-8", newline="")
    except OSError as exc:
        raise IngestError(f"cannot read {path}: {exc}") from exc

    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise IngestError(f"{path}: empty file") from None
        if header != CSV_HEADER:
            raise IngestError(f"{path}: bad header {header!r}, expected {CSV_HEADER!r}")

        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 6:
                raise IngestError(f"{path}:{lineno}: expected 6 fields, got {len(row)}")
            network_id, port_id, facility, day_str, pm_name, value_str = row
            try:
                day = date.fromisoformat(day_str)
            except ValueError:
                raise IngestError(f"{path}:{lineno}: malformed date {day_str!r}") from None
            try:
                value = float(value_str)
            except ValueError:
                raise IngestError(
                    f"{path}:{lineno}: non-numeric value {value_str!r} for {pm_name}"
                ) from None
            if schema_hint is not None and facility not in schema_hint.onehot_features:
                raise IngestError(f"{path}:{lineno}: unknown facility {facility!r}")
            try:
                yield PmRecord(network_id, port_id, facility, day, pm_name, value)
            except SchemaError as exc:
                raise IngestError(f"{path}:{lineno}: {exc}") from None


def build_schema(
    records: Iterable[PmRecord], protocol_indicators: Iterable[str] = ()
) -> FeatureSchema:
    """Derive a schema from observed records.

    Numeric features are the sorted union of observed PM names with the
    label sources auto-included; one-hot columns are the sorted distinct
    facility types. Indicators must be part of the numeric union.
    """
    pm_names: set[str] = set()
    facilities: set[str] = set()
    n = 0
    for rec in records:
        pm_names.add(rec.pm_name)
        facilities.add(rec.facility_type)
        n += 1
    if n == 0:
        raise SchemaError("cannot build a schema from an empty record stream")
    pm_names.update(("UAS", "HCCS"))
    return FeatureSchema(
        numeric_features=tuple(sorted(pm_names)),
        onehot_features=tuple(sorted(facilities)),
        protocol_indicators=tuple(protocol_indicators),
    )


def merge_to_port_level(
    records: Iterable[PmRecord], schema: FeatureSchema
) -> list[PortSeries]:
    """Max-merge facility records into gap-free per-port daily series.

    Per (port, day, feature) the merged value is the maximum over all
    facility instances reporting it that day; entries nobody reported stay
    absent (NaN). Merging is total: duplicates and conflicts never error.
    Output is sorted by (network_id, port_id).
    """
    # (network, port) -> {"days": {date: {col: value}}, "facilities": set}
    ports: dict[tuple[str, str], dict] = {}
    for rec in records:
        col = schema.numeric_index(rec.pm_name)
        entry = ports.setdefault(
            (rec.network_id, rec.port_id), {"days": {}, "facilities": set()}
        )
        entry["facilities"].add(rec.facility_type)
        day_vals = entry["days"].setdefault(rec.day, {})
        prev = day_vals.get(col)
        if prev is None or rec.pm_value > prev:
            day_vals[col] = rec.pm_value

    out: list[PortSeries] = []
    for (network_id, port_id) in sorted(ports):
        entry = ports[(network_id, port_id)]
        days = entry["days"]
        start = min(days)
        n_days = (max(days) - start).days + 1
        values = np.full((n_days, schema.n_numeric), np.nan, dtype=np.float64)
        for day, cols in days.items():
            row = (day - start).days
            for col, val in cols.items():
                values[row, col] = val
        onehot = np.zeros(schema.n_onehot, dtype=np.float64)
        for fac in entry["facilities"]:
            if fac not in schema.onehot_features:
                raise SchemaError(f"facility {fac!r} not covered by the schema")
            onehot[schema.onehot_features.index(fac)] = 1.0
        out.append(PortSeries(network_id, port_id, start, values, onehot))
    return out


def series_to_arrays(series: list[PortSeries]) -> tuple[dict[str, np.ndarray], dict]:
    """Pack series into container arrays plus a manifest dict."""
    arrays: dict[str, np.ndarray] = {}
    manifest_ports = []
    for i, s in enumerate(series):
        arrays[f"values_{i:05d}"] = s.values
        arrays[f"onehot_{i:05d}"] = s.onehot
        manifest_ports.append(
            {
                "network_id": s.network_id,
                "port_id": s.port_id,
                "start_day": s.start_day.isoformat(),
                "n_days": s.n_days,
            }
        )
    return arrays, {"ports": manifest_ports}


def series_from_arrays(
    arrays: dict[str, np.ndarray], meta: dict
) -> list[PortSeries]:
    out = []
    for i, p in enumerate(meta["ports"]):
        out.append(
            PortSeries(
                network_id=p["network_id"],
                port_id=p["port_id"],
                start_day=date.fromisoformat(p["start_day"]),
                values=arrays[f"values_{i:05d}"],
                onehot=arrays[f"onehot_{i:05d}"],
            )
        )
    return out
