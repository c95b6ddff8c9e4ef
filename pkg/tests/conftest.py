from __future__ import annotations

from datetime import date

import numpy as np
import pytest

from iloscast.ingest import PortSeries
from iloscast.schema import FeatureSchema


@pytest.fixture
def schema() -> FeatureSchema:
    """Five numeric features (incl. the label sources and one indicator)
    plus two one-hot facility columns."""
    return FeatureSchema(
        numeric_features=("HCCS", "QAVG", "TRAFFIC", "UAS", "X1"),
        onehot_features=("ETH", "OTM"),
        protocol_indicators=("TRAFFIC",),
    )


def make_series(
    schema: FeatureSchema,
    n_days: int,
    network_id: str = "net1",
    port_id: str = "p1",
    start: date = date(2024, 1, 1),
    fill: dict[str, list[float | None]] | None = None,
    onehot: tuple[float, ...] | None = None,
) -> PortSeries:
    """Build a PortSeries from per-feature day lists (None = absent).

    Features not named in ``fill`` stay absent everywhere.
    """
    values = np.full((n_days, schema.n_numeric), np.nan)
    for name, column in (fill or {}).items():
        j = schema.numeric_index(name)
        for day, v in enumerate(column):
            if v is not None:
                values[day, j] = v
    oh = np.asarray(onehot if onehot is not None else (0.0, 1.0), dtype=np.float64)
    return PortSeries(network_id, port_id, start, values, oh)


def healthy_fill(schema: FeatureSchema, n_days: int) -> dict[str, list[float]]:
    """Traffic-carrying, fully observed benign values for every numeric
    feature except the counters (left at zero/absent by callers)."""
    return {
        "QAVG": [13.0] * n_days,
        "TRAFFIC": [1.0] * n_days,
        "X1": [5.0] * n_days,
    }
