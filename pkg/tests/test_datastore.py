import io

import pytest
from helpers import dc, dev_name, device, pid

from malrisk.datastore import (
    DatasetSummary,
    MalwareSet,
    load_device_dataset,
    load_malware_set,
    overlap_report,
    summarize,
    union_malware,
    write_device_csv,
    write_malware_csv,
    write_metadata_csv,
)
from malrisk.errors import DataError, ParseError

HEADER = "device,dc,p,v,first_seen,translated_name,permission_count\n"


def row(i, j, name="com.example.app", v=1, first_seen=""):
    return f"{dev_name(i)},{dc(j)},{name},{v},{first_seen},,\n"


def test_three_rows_two_devices():
    text = HEADER + row(1, 1) + row(1, 2) + row(2, 1)
    devices = load_device_dataset(text)
    assert len(devices) == 2
    assert sorted(d.app_count for d in devices) == [1, 2]


def test_empty_source():
    assert load_device_dataset("") == []
    assert load_device_dataset(HEADER) == []


def test_duplicate_rows_collapse_to_earliest_first_seen():
    text = HEADER + row(1, 1, first_seen=50) + row(1, 1, first_seen=20) + row(1, 1)
    (only,) = load_device_dataset(text)
    assert only.app_count == 1
    assert only.packages[pid(1)] == 20


def test_device_order_does_not_depend_on_row_order():
    rows = [row(1, 1), row(2, 2), row(3, 3, v=4)]
    a = load_device_dataset(HEADER + "".join(rows))
    b = load_device_dataset(HEADER + "".join(reversed(rows)))
    assert a == b


def test_malformed_row_reports_line():
    text = HEADER + row(1, 1) + f"{dev_name(2)},{dc(1)},com.x,-3,,,\n"
    with pytest.raises(ParseError) as err:
        load_device_dataset(text)
    assert err.value.line == 3
    assert err.value.field == "v"


def test_missing_column():
    with pytest.raises(ParseError):
        load_device_dataset("device,dc,p\n")


def test_metadata_join_and_conflict():
    meta = "device,model,os_version,battery_life_hours\n" f"{dev_name(1)},Nexus 4,4.2.2,7.5\n"
    (d,) = load_device_dataset(HEADER + row(1, 1), meta)
    assert (d.model, d.os_version, d.battery_life_hours) == ("Nexus 4", "4.2.2", 7.5)
    conflict = meta + f"{dev_name(1)},Nexus 5,4.2.2,7.5\n"
    with pytest.raises(DataError, match="model"):
        load_device_dataset(HEADER + row(1, 1), conflict)
    bad_battery = "device,model,os_version,battery_life_hours\n" f"{dev_name(1)},Nexus 4,4.2.2,0\n"
    with pytest.raises(ParseError):
        load_device_dataset(HEADER + row(1, 1), bad_battery)


def test_malware_set_semantics():
    text = "dc,p,v\n" + f"{dc(1)},a,1\n{dc(1)},a,1\n{dc(1)},a,2\n{dc(2)},b,1\n"
    m = load_malware_set("m", text)
    assert len(m) == 3
    assert len(m.dc_index) == 2 < len(m.ids)
    assert len(m.dcp_index) == 2
    empty = load_malware_set("e", "dc,p,v\n")
    assert len(empty) == 0 and not empty.dc_index and not empty.dcp_index


def test_summarize():
    assert summarize([]) == DatasetSummary()
    same = [device(1, [pid(1)]), device(2, [pid(1)])]
    s = summarize(same)
    assert (s.distinct_devices, s.unique_dcpv, s.total_unique_records) == (2, 1, 2)
    mixed = [device(1, [pid(1, "a", 1), pid(1, "a", 2), pid(2, "a", 1)])]
    s = summarize(mixed)
    assert (s.unique_package_names, s.unique_devcerts, s.unique_dcp, s.unique_dcpv) == (1, 2, 2, 3)


def test_union_malware():
    a = MalwareSet("A", frozenset({pid(1), pid(2)}))
    b = MalwareSet("B", frozenset({pid(3), pid(4), pid(5)}))
    u = union_malware([a, b])
    assert len(u) == 5 and u.name == "A+B"
    with pytest.raises(ValueError):
        union_malware([])


def test_overlap_identical_and_disjoint():
    a = MalwareSet("A", frozenset({pid(1), pid(2)}))
    same = overlap_report([a, MalwareSet("B", a.ids)])
    assert same == {"A": 0, "B": 0, "A&B": 2}
    other = MalwareSet("C", frozenset({pid(3)}))
    assert overlap_report([a, other])["A&C"] == 0
    with pytest.raises(ValueError):
        overlap_report([a])


def test_overlap_three_sets_planned():
    ids = {i: pid(i) for i in range(1, 11)}
    regions = {"A": [1, 2], "B": [3], "C": [4, 5, 6], "A&B": [7], "A&C": [], "B&C": [8, 9], "A&B&C": [10]}
    members = {"A": set(), "B": set(), "C": set()}
    for region, which in regions.items():
        for name in region.split("&"):
            members[name].update(ids[i] for i in which)
    sets = [MalwareSet(n, frozenset(members[n])) for n in "ABC"]
    report = overlap_report(sets)
    assert report == {k: len(v) for k, v in regions.items()}
    assert sum(report.values()) == len(union_malware(sets))


def test_write_read_round_trip():
    devs = [
        device(1, {pid(1, "a", 1): 10.0, pid(2, "b", 3): 12.5}, model="M", os_version="4.3", battery_life_hours=7.25),
        device(2, {pid(1, "a", 2): None}, model="M", os_version="4.1.2", battery_life_hours=9.0),
    ]
    buf, meta = io.StringIO(), io.StringIO()
    write_device_csv(devs, buf)
    write_metadata_csv(devs, meta)
    again = load_device_dataset(buf.getvalue(), meta.getvalue())
    assert again == sorted(devs, key=lambda d: d.device)
    m = MalwareSet("m", frozenset({pid(1, "a", 1), pid(3, "c", 9)}))
    out = io.StringIO()
    write_malware_csv(m, out)
    assert load_malware_set("m", out.getvalue()) == m
