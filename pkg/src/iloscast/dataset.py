"""The windowed-dataset currency shared by models, transfer, and evaluation.

A :class:`WindowDataset` keeps the raw (unnormalized) window tensors plus
sample metadata and split tags. Normalization is applied on the way out so
that a mega-merge can refit statistics without rebuilding windows.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from datetime import date
from pathlib import Path

import numpy as np

from .container import read_container, write_container
from .errors import DataError
from .ingest import PortSeries
from .missing import compute_mask, compute_time_gaps, flatten_for_trees, impute_median, impute_zero, train_medians
from .schema import FeatureSchema
from .windows import (
    NormStats,
    TRAIN,
    chronological_split,
    filter_defective,
    label_window,
    slide_windows,
    zscore_apply,
    zscore_fit,
)


@dataclass(frozen=True)
class AuditRow:
    network_id: str
    port_id: str
    present_day: date
    label: int
    kept: bool
    reason: str | None


@dataclass
class WindowDataset:
    """Labeled, filtered, split window samples as stacked arrays.

    ``x`` is (N, T, F) raw values; NaN marks absent numeric entries.
    ``split`` holds TRAIN/VALIDATION/TEST tags; ``network``/``port`` are
    metadata only and never appear in ``x``.
    """

    schema: FeatureSchema
    x: np.ndarray
    label: np.ndarray
    network: np.ndarray
    port: np.ndarray
    present_day: np.ndarray  # ordinal day numbers, int64
    split: np.ndarray
    norm: NormStats
    split_bounds: tuple[str, str] = ("", "")
    past_days: int = 7
    future_days: int = 7

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def networks(self) -> tuple[str, ...]:
        return tuple(sorted(set(self.network.tolist())))

    def indices(
        self,
        split: int | None = None,
        network: str | None = None,
        facility: str | None = None,
    ) -> np.ndarray:
        """Indices of samples matching the given split/network/facility."""
        keep = np.ones(self.n, dtype=bool)
        if split is not None:
            keep &= self.split == split
        if network is not None:
            keep &= self.network == network
        if facility is not None:
            col = self.schema.onehot_index(facility)
            keep &= self.x[:, 0, col] == 1.0
        return np.flatnonzero(keep)

    def subset(self, idx: np.ndarray) -> "WindowDataset":
        return WindowDataset(
            schema=self.schema,
            x=self.x[idx],
            label=self.label[idx],
            network=self.network[idx],
            port=self.port[idx],
            present_day=self.present_day[idx],
            split=self.split[idx],
            norm=self.norm,
            split_bounds=self.split_bounds,
            past_days=self.past_days,
            future_days=self.future_days,
        )

    def normalized_x(self, idx: np.ndarray | None = None) -> np.ndarray:
        """Z-scored copy of ``x`` (NaN preserved) using the fitted stats."""
        x = self.x if idx is None else self.x[idx]
        return zscore_apply(x, self.norm)

    def tree_rows(
        self, idx: np.ndarray, imputation: str = "none"
    ) -> np.ndarray:
        """Flattened day-major rows for tree models.

        ``imputation``: "none" keeps NaN markers (sparsity-aware booster),
        "zero"/"median" produce dense rows for the forest. Medians come from
        the training split's observed normalized entries only.
        """
        x = self.normalized_x(idx)
        if imputation == "none":
            pass
        elif imputation == "zero":
            x = impute_zero(x)
        elif imputation == "median":
            medians, _ = self.train_medians()
            x = impute_median(x, medians)
        else:
            raise DataError(f"unknown imputation mode {imputation!r}")
        return flatten_for_trees(x)

    def train_medians(self) -> tuple[np.ndarray, list[int]]:
        train_x = self.normalized_x(self.indices(split=TRAIN))
        return train_medians(train_x, self.schema.n_numeric)

    def rits_tensors(self, idx: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(x, mask, delta) for the recurrent model: normalized, zero-filled."""
        xn = self.normalized_x(idx)
        mask = compute_mask(xn, self.schema.n_numeric)
        delta = compute_time_gaps(mask)
        x = np.where(mask == 1.0, np.nan_to_num(xn), 0.0)
        return x, mask, delta

    def save(self, path: str | Path) -> None:
        nets, net_codes = np.unique(self.network, return_inverse=True)
        ports, port_codes = np.unique(self.port, return_inverse=True)
        arrays = {
            "x": self.x,
            "label": self.label.astype(np.int8),
            "split": self.split.astype(np.int8),
            "present_day": self.present_day.astype(np.int64),
            "network_code": net_codes.astype(np.int32),
            "port_code": port_codes.astype(np.int32),
        }
        meta = {
            "schema": self.schema.to_dict(),
            "norm": self.norm.to_dict(),
            "networks": nets.tolist(),
            "ports": ports.tolist(),
            "split_bounds": list(self.split_bounds),
            "past_days": self.past_days,
            "future_days": self.future_days,
        }
        write_container(path, arrays, meta)

    @classmethod
    def load(cls, path: str | Path) -> "WindowDataset":
        arrays, meta = read_container(path)
        nets = np.asarray(meta["networks"], dtype=object)
        ports = np.asarray(meta["ports"], dtype=object)
        return cls(
            schema=FeatureSchema.from_dict(meta["schema"]),
            x=arrays["x"],
            label=arrays["label"].astype(np.int8),
            network=nets[arrays["network_code"]],
            port=ports[arrays["port_code"]],
            present_day=arrays["present_day"],
            split=arrays["split"].astype(np.int8),
            norm=NormStats.from_dict(meta["norm"]),
            split_bounds=tuple(meta.get("split_bounds", ("", ""))),
            past_days=int(meta.get("past_days", 7)),
            future_days=int(meta.get("future_days", 7)),
        )


def build_dataset(
    series_list: list[PortSeries],
    schema: FeatureSchema,
    past_days: int = 7,
    future_days: int = 7,
) -> tuple[WindowDataset, list[AuditRow]]:
    """Window, label, filter, split, and fit normalization in one pass.

    Returns the dataset of kept samples plus an audit row per emitted
    window (kept or dropped).
    """
    audit: list[AuditRow] = []
    kept = []
    for series in series_list:
        for sample in slide_windows(series, schema, past_days, future_days):
            sample = label_window(sample)
            decision = filter_defective(sample, schema)
            audit.append(
                AuditRow(
                    network_id=sample.network_id,
                    port_id=sample.port_id,
                    present_day=sample.present_day,
                    label=sample.label,
                    kept=decision.keep,
                    reason=decision.reason,
                )
            )
            if decision.keep:
                kept.append(sample)

    if not kept:
        raise DataError("no samples survived filtering")

    assignment = chronological_split(kept)
    x = np.stack([s.x for s in kept])
    label = np.array([s.label for s in kept], dtype=np.int8)
    network = np.array([s.network_id for s in kept], dtype=object)
    port = np.array([s.port_id for s in kept], dtype=object)
    days = np.array([s.present_day.toordinal() for s in kept], dtype=np.int64)

    norm = zscore_fit(x[assignment.tags == TRAIN], schema.n_numeric)
    dataset = WindowDataset(
        schema=schema,
        x=x,
        label=label,
        network=network,
        port=port,
        present_day=days,
        split=assignment.tags,
        norm=norm,
        split_bounds=(assignment.train_end.isoformat(), assignment.val_end.isoformat()),
        past_days=past_days,
        future_days=future_days,
    )
    return dataset, audit


def write_audit_csv(path: str | Path, audit: list[AuditRow]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["network_id", "port_id", "present_day", "label", "kept", "reason"])
        for row in audit:
            writer.writerow(
                [
                    row.network_id,
                    row.port_id,
                    row.present_day.isoformat(),
                    row.label,
                    int(row.kept),
                    row.reason or "",
                ]
            )
