import pytest
from hypothesis import given
from hypothesis import strategies as st
from oracles import sha1_reference

from malrisk.errors import DataError, ParseError
from malrisk.identity import (
    PackageId,
    PackageKey,
    anonymize_package_name,
    format_package_id,
    hash_devcert,
    is_hashed_name,
    parse_package_id,
    pseudonymize_device,
)

DC = "aa" * 20


def test_reference_sha1_agrees_with_known_vectors():
    assert sha1_reference(b"") == "da39a3ee5e6b4b0d3255bfef95601890afd80709"
    assert sha1_reference(b"abc") == "a9993e364706816aba3e25717850c26c9cd0d89d"


@pytest.mark.parametrize(
    "data, digest",
    [
        (b"", "da39a3ee5e6b4b0d3255bfef95601890afd80709"),
        (b"abc", "a9993e364706816aba3e25717850c26c9cd0d89d"),
    ],
)
def test_hash_devcert_vectors(data, digest):
    assert hash_devcert(data) == digest
    assert hash_devcert(data) == hash_devcert(data)


@given(st.binary(max_size=300))
def test_hash_devcert_matches_reference(data):
    assert hash_devcert(data) == sha1_reference(data)


def test_pseudonymize_device():
    a = pseudonymize_device("dev1", b"S1")
    assert a == pseudonymize_device("dev1", b"S1")
    assert a == sha1_reference(b"S1dev1")
    b = pseudonymize_device("dev1", b"S2")
    assert b == sha1_reference(b"S2dev1")
    assert a != b


def test_pseudonymize_rejects_empty_salt():
    with pytest.raises(ValueError):
        pseudonymize_device("dev1", b"")


def test_anonymize_package_name():
    digest = anonymize_package_name("com.facebook.katana")
    assert digest == sha1_reference(b"com.facebook.katana")
    assert digest == anonymize_package_name("com.facebook.katana")
    assert is_hashed_name(digest)
    with pytest.raises(ValueError):
        anonymize_package_name(digest)


def test_parse_package_id():
    pid = parse_package_id(f"{DC}|com.example.app|7")
    assert pid == PackageId(DC, "com.example.app", 7)
    assert pid.name_kind == "plain"
    assert pid.key == PackageKey(DC, "com.example.app")


@pytest.mark.parametrize(
    "text, field",
    [
        ("xyz|com.example.app|7", "dc"),
        (f"{DC}|com.example.app|-1", "v"),
        (f"{DC}|com.example.app|seven", "v"),
        (f"{DC}||7", "p"),
    ],
)
def test_parse_errors_name_the_field(text, field):
    with pytest.raises(ParseError) as err:
        parse_package_id(text, line=12)
    assert err.value.field == field
    assert err.value.line == 12
    assert "line 12" in str(err.value)


def test_parse_wrong_field_count():
    with pytest.raises(ParseError):
        parse_package_id(f"{DC}|com.example.app")
    with pytest.raises(ParseError):
        parse_package_id(f"{DC}|a|1|2")


def test_hashed_names_are_lowercased():
    upper = "AB" * 20
    pid = PackageId(DC.upper(), upper, 3)
    assert pid.dc == DC
    assert pid.p == upper.lower()
    assert pid.name_kind == "hashed"


def test_package_id_rejects_bad_fields():
    with pytest.raises(DataError):
        PackageId(DC, "a|b", 1)
    with pytest.raises(DataError):
        PackageId(DC, "a", True)
    with pytest.raises(DataError):
        PackageKey("00", "a")


names = st.text(
    alphabet=st.characters(blacklist_characters="|\r\n", blacklist_categories=("Cs",)), min_size=1, max_size=30
)


@given(st.binary(max_size=20), names, st.integers(min_value=0, max_value=2**40))
def test_text_round_trip(cert, name, v):
    pid = PackageId(hash_devcert(cert), name, v)
    assert parse_package_id(format_package_id(pid)) == pid
    assert str(pid) == pid.text == f"{pid.dc}|{pid.p}|{pid.v}"
