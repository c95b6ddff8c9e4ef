"""Turn port series into labeled, filtered, split, normalized window samples.

A sample spans 14 consecutive days: the first seven (past six plus the
present day) form the model input ``x``; the last seven are kept only as
label sources and audit metadata, never as model input.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from datetime import date
from typing import Sequence

import numpy as np

from .errors import SplitError
from .ingest import PortSeries
from .schema import FeatureSchema

#: Filter reason codes, in the order the predicates are evaluated.
REASON_NO_TRAFFIC = "no_traffic"
REASON_LOS_TODAY = "los_today"
REASON_EMPTY_PAST = "empty_past"
REASON_EMPTY_FUTURE = "empty_future"

TRAIN, VALIDATION, TEST = 0, 1, 2
SPLIT_NAMES = ("train", "validation", "test")


@dataclass(frozen=True, eq=False)
class WindowSample:
    """One sliding-window sample.

    ``x`` is (past_days, F) with NaN-coded numeric columns followed by
    always-present one-hot columns. ``future_uas``/``future_hccs`` carry the
    raw label-source values of the future days; ``future_observed_any``
    records whether any numeric entry of those days was observed at all,
    which the defect filter needs after the full future rows are gone.
    """

    network_id: str
    port_id: str
    present_day: date
    x: np.ndarray
    future_uas: np.ndarray
    future_hccs: np.ndarray
    future_observed_any: bool
    label: int | None = None


@dataclass(frozen=True)
class FilterDecision:
    keep: bool
    reason: str | None = None


@dataclass(frozen=True)
class SplitAssignment:
    """Per-sample split tags plus the day boundaries that induce them."""

    tags: np.ndarray  # int8, TRAIN/VALIDATION/TEST
    train_end: date  # last day (inclusive) in the training split
    val_end: date  # last day (inclusive) in the validation split


@dataclass
class NormStats:
    """Train-split z-score statistics for the numeric columns."""

    mean: np.ndarray
    std: np.ndarray
    n_numeric: int
    unobserved: tuple[int, ...] = ()

    def to_dict(self) -> dict:
        return {
            "mean": self.mean.tolist(),
            "std": self.std.tolist(),
            "n_numeric": self.n_numeric,
            "unobserved": list(self.unobserved),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NormStats":
        return cls(
            mean=np.asarray(d["mean"], dtype=np.float64),
            std=np.asarray(d["std"], dtype=np.float64),
            n_numeric=int(d["n_numeric"]),
            unobserved=tuple(d.get("unobserved", ())),
        )


def slide_windows(
    series: PortSeries,
    schema: FeatureSchema,
    past_days: int = 7,
    future_days: int = 7,
) -> list[WindowSample]:
    """Slide a (past + future)-day window over a gap-free series, stride 1.

    Only fully contained windows are emitted; a series shorter than the
    window yields nothing. The present day is the last past row.
    """
    span = past_days + future_days
    n = series.n_days
    out: list[WindowSample] = []
    if n < span:
        return out
    uas_i, hccs_i = schema.uas_index, schema.hccs_index
    onehot_tile = np.tile(series.onehot, (past_days, 1))
    for start in range(n - span + 1):
        past = series.values[start : start + past_days]
        future = series.values[start + past_days : start + span]
        x = np.concatenate([past, onehot_tile], axis=1)
        out.append(
            WindowSample(
                network_id=series.network_id,
                port_id=series.port_id,
                present_day=series.day(start + past_days - 1),
                x=x,
                future_uas=future[:, uas_i].copy(),
                future_hccs=future[:, hccs_i].copy(),
                future_observed_any=bool(~np.all(np.isnan(future))),
            )
        )
    return out


def label_window(sample: WindowSample) -> WindowSample:
    """Label 1 iff any future day has UAS > 0 or HCCS > 0 (absent = no)."""
    positive = bool(
        np.any(np.nan_to_num(sample.future_uas) > 0)
        or np.any(np.nan_to_num(sample.future_hccs) > 0)
    )
    return replace(sample, label=int(positive))


def filter_defective(sample: WindowSample, schema: FeatureSchema) -> FilterDecision:
    """Decide keep/drop for a labeled sample, with a reason code on drop.

    Drop conditions: all numeric entries of the past days absent; all
    entries of the future days absent; no protocol indicator
    present-and-positive on the present day; LOS already in progress on the
    present day. The emptiness reasons are reported first since an
    all-absent input trivially also fails the traffic check.
    """
    if np.all(np.isnan(sample.x[:, : schema.n_numeric])):
        return FilterDecision(False, REASON_EMPTY_PAST)

    if not sample.future_observed_any:
        return FilterDecision(False, REASON_EMPTY_FUTURE)

    present = sample.x[-1]
    carrying = any(
        not np.isnan(present[c]) and present[c] > 0
        for c in schema.indicator_indices
    )
    if not carrying:
        return FilterDecision(False, REASON_NO_TRAFFIC)

    uas_today = present[schema.uas_index]
    hccs_today = present[schema.hccs_index]
    if (not np.isnan(uas_today) and uas_today > 0) or (
        not np.isnan(hccs_today) and hccs_today > 0
    ):
        return FilterDecision(False, REASON_LOS_TODAY)

    return FilterDecision(True, None)


def chronological_split(
    samples: Sequence[WindowSample] | np.ndarray,
    train_frac: float = 0.7,
    val_frac: float = 0.1,
) -> SplitAssignment:
    """Assign train/validation/test tags by snapping 70/10/20 to day edges.

    All samples sharing a present day land in the same split. Boundaries
    are the day prefixes whose cumulative counts best approximate the
    target fractions, constrained so every split is non-empty.
    """
    if len(samples) and isinstance(samples[0], WindowSample):
        days = np.array([s.present_day.toordinal() for s in samples], dtype=np.int64)
    else:
        days = np.asarray(samples, dtype=np.int64)
    n = days.size
    if n < 10:
        raise SplitError(f"cannot split {n} samples; need at least 10")

    unique_days, counts = np.unique(days, return_counts=True)
    if unique_days.size < 3:
        raise SplitError(
            f"cannot split across {unique_days.size} distinct day(s); need at least 3"
        )
    cum = np.cumsum(counts)

    # Boundary i means "this split ends after unique_days[i]". Leave room
    # for one day of validation and one of test.
    last = unique_days.size - 1
    i1_candidates = np.arange(0, last - 1)
    i1 = int(i1_candidates[np.argmin(np.abs(cum[i1_candidates] - train_frac * n))])
    i2_candidates = np.arange(i1 + 1, last)
    i2 = int(
        i2_candidates[
            np.argmin(np.abs(cum[i2_candidates] - (train_frac + val_frac) * n))
        ]
    )

    tags = np.full(n, TEST, dtype=np.int8)
    tags[days <= unique_days[i2]] = VALIDATION
    tags[days <= unique_days[i1]] = TRAIN
    return SplitAssignment(
        tags=tags,
        train_end=date.fromordinal(int(unique_days[i1])),
        val_end=date.fromordinal(int(unique_days[i2])),
    )


def zscore_fit(train_x: np.ndarray, n_numeric: int) -> NormStats:
    """Fit per-feature mean/std on the observed training entries only.

    ``train_x`` is (N, T, F). Constant or never-observed features get
    std 0; the latter are recorded in ``unobserved``.
    """
    flat = train_x.reshape(-1, train_x.shape[-1])[:, :n_numeric]
    mean = np.zeros(n_numeric, dtype=np.float64)
    std = np.zeros(n_numeric, dtype=np.float64)
    unobserved = []
    for col in range(n_numeric):
        vals = flat[:, col]
        vals = vals[~np.isnan(vals)]
        if vals.size == 0:
            unobserved.append(col)
            continue
        mean[col] = vals.mean()
        s = vals.std()
        # Snap numerically-constant features to the zero-std rule instead of
        # dividing by float noise.
        std[col] = s if s > 1e-12 * max(1.0, abs(mean[col])) else 0.0
    return NormStats(mean=mean, std=std, n_numeric=n_numeric, unobserved=tuple(unobserved))


def zscore_apply(x: np.ndarray, stats: NormStats) -> np.ndarray:
    """Z-score numeric columns with train statistics.

    Absent entries stay absent, one-hot columns pass through, and observed
    entries of zero-std features map to 0.
    """
    out = x.astype(np.float64, copy=True)
    k = stats.n_numeric
    numeric = out[..., :k]
    safe_std = np.where(stats.std > 0, stats.std, 1.0)
    scaled = (numeric - stats.mean) / safe_std
    scaled = np.where(stats.std > 0, scaled, 0.0)
    out[..., :k] = np.where(np.isnan(numeric), np.nan, scaled)
    return out
