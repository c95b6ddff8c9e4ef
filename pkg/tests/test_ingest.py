from __future__ import annotations

from datetime import date, timedelta

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from iloscast.errors import IngestError, SchemaError
from iloscast.ingest import build_schema, merge_to_port_level, parse_pm_csv
from iloscast.schema import FeatureSchema, PmRecord

HEADER = "network_id,port_id,facility_type,date,pm_name,pm_value\n"


def write_csv(tmp_path, body: str):
    path = tmp_path / "pm.csv"
    path.write_text(HEADER + body, encoding="utf-8")
    return path


def test_parse_single_line(tmp_path):
    path = write_csv(tmp_path, "net1,p7,OTM,2020-03-01,UAS,3612\n")
    (rec,) = list(parse_pm_csv(path))
    assert rec == PmRecord("net1", "p7", "OTM", date(2020, 3, 1), "UAS", 3612.0)


def test_parse_preserves_order_and_count(tmp_path):
    path = write_csv(
        tmp_path,
        "net1,p1,OTM,2020-01-01,QAVG,12.5\n"
        "net1,p1,OTM,2020-01-02,QAVG,12.4\n"
        "net1,p2,ETH,2020-01-01,UAS,0\n",
    )
    records = list(parse_pm_csv(path))
    assert len(records) == 3
    assert [r.port_id for r in records] == ["p1", "p1", "p2"]


def test_parse_bad_value_names_line(tmp_path):
    path = write_csv(tmp_path, "net1,p1,OTM,2020-01-01,QAVG,abc\n")
    with pytest.raises(IngestError, match=r":2: non-numeric value 'abc'"):
        list(parse_pm_csv(path))


def test_parse_bad_date_names_line(tmp_path):
    path = write_csv(
        tmp_path, "net1,p1,OTM,2020-01-01,QAVG,1\nnet1,p1,OTM,2020-13-01,QAVG,1\n"
    )
    with pytest.raises(IngestError, match=r":3: malformed date"):
        list(parse_pm_csv(path))


def test_parse_rejects_nonfinite_value(tmp_path):
    path = write_csv(tmp_path, "net1,p1,OTM,2020-01-01,QAVG,nan\n")
    with pytest.raises(IngestError, match=r":2:"):
        list(parse_pm_csv(path))


def test_parse_unknown_facility_with_hint(tmp_path):
    hint = FeatureSchema(
        numeric_features=("HCCS", "UAS"), onehot_features=("OTM",)
    )
    path = write_csv(tmp_path, "net1,p1,WDM,2020-01-01,UAS,1\n")
    with pytest.raises(IngestError, match="unknown facility 'WDM'"):
        list(parse_pm_csv(path, schema_hint=hint))


def test_parse_unreadable_file(tmp_path):
    with pytest.raises(IngestError, match="cannot read"):
        list(parse_pm_csv(tmp_path / "nope.csv"))


def rec(pm: str, fac: str = "OTM", day: int = 1, value: float = 1.0, port: str = "p1"):
    return PmRecord("net1", port, fac, date(2020, 1, day), pm, value)


def test_build_schema_union_and_autoinclude():
    schema = build_schema([rec("QAVG"), rec("UAS", fac="ETH")])
    assert schema.numeric_features == ("HCCS", "QAVG", "UAS")
    assert schema.onehot_features == ("ETH", "OTM")


def test_build_schema_deduplicates():
    schema = build_schema([rec("QAVG"), rec("QAVG"), rec("QAVG", day=2)])
    assert schema.numeric_features.count("QAVG") == 1


def test_build_schema_union_size_bound():
    set_a = [f"A{i}" for i in range(76)]
    set_b = set_a[:42] + [f"B{i}" for i in range(49)]  # overlap 42, size 91
    records = [rec(n) for n in set_a] + [rec(n) for n in set_b]
    schema = build_schema(records)
    # 76 + 91 - 42 plus the auto-included label sources
    assert len(schema.numeric_features) == 125 + 2


def test_build_schema_empty_stream():
    with pytest.raises(SchemaError, match="empty"):
        build_schema([])


def test_build_schema_unknown_indicator():
    with pytest.raises(SchemaError, match="indicator"):
        build_schema([rec("QAVG")], protocol_indicators=("TRAFFIC",))


def test_schema_rejects_duplicate_names():
    with pytest.raises(SchemaError, match="unique"):
        FeatureSchema(numeric_features=("HCCS", "UAS", "OTM"), onehot_features=("OTM",))


def test_merge_keeps_maximum():
    records = [rec("UAS", fac="OTM", value=3.0), rec("UAS", fac="ETH", value=10.0)]
    schema = build_schema(records)
    (series,) = merge_to_port_level(records, schema)
    assert series.values[0, schema.uas_index] == 10.0


def test_merge_fills_missing_days():
    schema = build_schema([rec("QAVG")])
    records = [rec("QAVG", day=1, value=5.0), rec("QAVG", day=3, value=6.0)]
    (series,) = merge_to_port_level(records, schema)
    assert series.n_days == 3
    assert np.isnan(series.values[1, schema.numeric_index("QAVG")])


def test_merge_single_reporter_is_kept():
    records = [rec("QAVG", fac="OTM", value=12.0), rec("UAS", fac="ETH", value=1.0)]
    schema = build_schema(records)
    (series,) = merge_to_port_level(records, schema)
    assert series.values[0, schema.numeric_index("QAVG")] == 12.0


def test_merge_onehot_is_port_level_or():
    schema = build_schema([rec("QAVG"), rec("UAS", fac="ETH", day=2)])
    records = [rec("QAVG", fac="OTM", day=1), rec("UAS", fac="ETH", day=2)]
    (series,) = merge_to_port_level(records, schema)
    np.testing.assert_array_equal(series.onehot, [1.0, 1.0])


def test_merge_unknown_pm_rejected():
    schema = FeatureSchema(numeric_features=("HCCS", "UAS"), onehot_features=("OTM",))
    with pytest.raises(SchemaError, match="unknown numeric feature"):
        merge_to_port_level([rec("QAVG")], schema)


def _series_to_records(series, schema):
    out = []
    for row in range(series.n_days):
        day = series.start_day + timedelta(days=row)
        for j, name in enumerate(schema.numeric_features):
            v = series.values[row, j]
            if not np.isnan(v):
                for fac_j, fac in enumerate(schema.onehot_features):
                    if series.onehot[fac_j] == 1.0:
                        out.append(PmRecord(series.network_id, series.port_id, fac, day, name, float(v)))
                        break
    return out


@given(
    data=st.lists(
        st.tuples(
            st.sampled_from(["QAVG", "UAS", "HCCS"]),
            st.sampled_from(["OTM", "ETH"]),
            st.integers(min_value=1, max_value=6),
            st.floats(min_value=-100, max_value=100, allow_nan=False),
        ),
        min_size=1,
        max_size=40,
    )
)
@settings(max_examples=60, deadline=None)
def test_merge_max_dominance_bruteforce(data):
    records = [rec(pm, fac=fac, day=day, value=val) for pm, fac, day, val in data]
    schema = build_schema(records)
    (series,) = merge_to_port_level(records, schema)

    # Brute force: per (day, pm), merged value equals max of contributions.
    for row in range(series.n_days):
        day = series.start_day + timedelta(days=row)
        for j, name in enumerate(schema.numeric_features):
            contributions = [r.pm_value for r in records if r.day == day and r.pm_name == name]
            merged = series.values[row, j]
            if contributions:
                assert merged == max(contributions)
            else:
                assert np.isnan(merged)


@given(
    days=st.lists(
        st.tuples(st.integers(1, 8), st.floats(0, 50, allow_nan=False)),
        min_size=1,
        max_size=15,
    )
)
@settings(max_examples=40, deadline=None)
def test_merge_idempotence(days):
    records = [rec("QAVG", day=d, value=v) for d, v in days]
    schema = build_schema(records)
    (series,) = merge_to_port_level(records, schema)
    (again,) = merge_to_port_level(_series_to_records(series, schema), schema)
    np.testing.assert_array_equal(series.values, again.values)
    assert series.start_day == again.start_day


def test_day_continuity():
    schema = build_schema([rec("QAVG")])
    records = [rec("QAVG", day=d, value=float(d)) for d in (2, 5, 9)]
    (series,) = merge_to_port_level(records, schema)
    assert series.n_days == 8
    deltas = [(series.day(i + 1) - series.day(i)).days for i in range(series.n_days - 1)]
    assert set(deltas) == {1}
