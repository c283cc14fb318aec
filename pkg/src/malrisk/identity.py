"""Reliable package identifiers and the anonymizing hashes of the shared dataset.

An Android package is identified by the triple ``(dc, p, v)``: the SHA-1 of the
developer certificate, the package name and the integer version code.  The
textual form is ``dc|p|v``.
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass

from .errors import DataError, ParseError

__all__ = [
    "PackageId",
    "PackageKey",
    "hash_devcert",
    "pseudonymize_device",
    "anonymize_package_name",
    "is_hashed_name",
    "canonical_hex",
    "parse_package_id",
    "format_package_id",
]

_HEX40 = re.compile(r"[0-9a-f]{40}")
_FORBIDDEN_IN_NAME = ("|", "\n", "\r")


def canonical_hex(value: str, what: str = "value") -> str:
    """Lowercase a 40-char hex digest, raising DataError if it is not one."""
    if not isinstance(value, str):
        raise DataError(f"{what} must be a string, got {type(value).__name__}")
    low = value.strip().lower()
    if not _HEX40.fullmatch(low):
        raise DataError(f"{what} is not a 40-character hex digest: {value!r}")
    return low


def is_hashed_name(name: str) -> bool:
    """True if ``name`` looks like an anonymized (SHA-1 hex) package name."""
    return _HEX40.fullmatch(name.lower()) is not None


def _check_name(p: str) -> str:
    if not isinstance(p, str) or not p:
        raise DataError("package name must be a non-empty string")
    if any(ch in p for ch in _FORBIDDEN_IN_NAME):
        raise DataError(f"package name contains a separator character: {p!r}")
    # hashed names are hex digests; canonicalize their case like every other digest
    return p.lower() if is_hashed_name(p) else p


def _check_version(v: object) -> int:
    if isinstance(v, bool) or not isinstance(v, int):
        raise DataError(f"version code must be an integer, got {v!r}")
    if v < 0:
        raise DataError(f"version code must be non-negative, got {v}")
    return v


@dataclass(frozen=True, slots=True)
class PackageKey:
    """The ``(dc, p)`` pair shared by every version of one application."""

    dc: str
    p: str

    def __post_init__(self) -> None:
        object.__setattr__(self, "dc", canonical_hex(self.dc, "dc"))
        object.__setattr__(self, "p", _check_name(self.p))

    @property
    def text(self) -> str:
        return f"{self.dc}|{self.p}"

    @classmethod
    def _trusted(cls, dc: str, p: str) -> PackageKey:
        # components already validated by a PackageId; skip re-checking in hot loops
        key = object.__new__(cls)
        object.__setattr__(key, "dc", dc)
        object.__setattr__(key, "p", p)
        return key


@dataclass(frozen=True, slots=True)
class PackageId:
    """Reliable package identifier ``(dc, p, v)``."""

    dc: str
    p: str
    v: int

    def __post_init__(self) -> None:
        object.__setattr__(self, "dc", canonical_hex(self.dc, "dc"))
        object.__setattr__(self, "p", _check_name(self.p))
        object.__setattr__(self, "v", _check_version(self.v))

    @property
    def key(self) -> PackageKey:
        return PackageKey._trusted(self.dc, self.p)

    @property
    def name_kind(self) -> str:
        return "hashed" if is_hashed_name(self.p) else "plain"

    @property
    def text(self) -> str:
        return f"{self.dc}|{self.p}|{self.v}"

    def __str__(self) -> str:
        return self.text


def hash_devcert(cert_bytes: bytes) -> str:
    """SHA-1 of the developer certificate bytes, lowercase hex.

    The caller decides the encoding of the certificate (DER or otherwise);
    the bytes are hashed as given.
    """
    return hashlib.sha1(bytes(cert_bytes)).hexdigest()


def pseudonymize_device(raw_device_id: str, salt: bytes) -> str:
    """Salted SHA-1 pseudonym of a device identifier: ``sha1(salt + id)``."""
    if not salt:
        raise ValueError("salt must be non-empty")
    if isinstance(salt, str):
        salt = salt.encode("utf-8")
    return hashlib.sha1(bytes(salt) + raw_device_id.encode("utf-8")).hexdigest()


def anonymize_package_name(p: str) -> str:
    """Replace a plain package name with the SHA-1 hex of its UTF-8 bytes.

    Raises:
        ValueError: if ``p`` already is a hashed name.
    """
    p = _check_name(p)
    if is_hashed_name(p):
        raise ValueError(f"package name is already hashed: {p!r}")
    return hashlib.sha1(p.encode("utf-8")).hexdigest()


def format_package_id(pid: PackageId) -> str:
    return pid.text


def parse_package_id(text: str, line: int | None = None) -> PackageId:
    """Parse the canonical ``dc|p|v`` form.

    >>> parse_package_id("A" * 40 + "|com.example.app|7").text
    'aaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaa|com.example.app|7'
    """
    parts = text.strip().split("|")
    if len(parts) != 3:
        raise ParseError(f"expected 3 '|'-separated fields, got {len(parts)}", line=line)
    dc, p, v = parts
    return make_package_id(dc, p, v, line=line)


def make_package_id(dc: str, p: str, v: object, line: int | None = None) -> PackageId:
    """Build a PackageId from loosely typed fields, reporting the bad field."""
    try:
        dc = canonical_hex(dc, "dc")
    except DataError as exc:
        raise ParseError(str(exc), field="dc", line=line) from None
    try:
        p = _check_name(p)
    except DataError as exc:
        raise ParseError(str(exc), field="p", line=line) from None
    if isinstance(v, str):
        vs = v.strip()
        if not re.fullmatch(r"-?\d+", vs):
            raise ParseError(f"version code is not an integer: {v!r}", field="v", line=line)
        v = int(vs)
    try:
        v = _check_version(v)
    except DataError as exc:
        raise ParseError(str(exc), field="v", line=line) from None
    return PackageId(dc, p, v)
