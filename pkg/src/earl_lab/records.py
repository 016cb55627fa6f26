"""Line-delimited JSON records behind a version header line."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Iterable, Iterator

from .errors import MalformedRecord

HEADER = "format=earl-lab/v1"


def dumps(record: dict) -> str:
    return json.dumps(record, separators=(",", ":"), allow_nan=False)


def write_records(path, records: Iterable[dict], header: str = HEADER) -> int:
    """Write ``records`` one per line after the header; returns the record count."""
    path = Path(path)
    n = 0
    with path.open("w", encoding="utf-8", newline="\n") as fh:
        fh.write(header + "\n")
        for rec in records:
            fh.write(dumps(rec) + "\n")
            n += 1
    return n


def read_records(path, header: str = HEADER) -> Iterator[tuple]:
    """Yield ``(line_number, record)`` pairs; line numbers are 1-based file lines."""
    path = Path(path)
    with path.open("r", encoding="utf-8") as fh:
        first = fh.readline().rstrip("\n")
        if first != header:
            raise MalformedRecord(f"expected header {header!r}, got {first!r}", path, 1)
        for lineno, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise MalformedRecord(f"invalid JSON: {exc.msg}", path, lineno) from None
            if not isinstance(rec, dict):
                raise MalformedRecord("record must be a JSON object", path, lineno)
            yield lineno, rec


def require(rec: dict, key: str, kind, path=None, line=None):
    if key not in rec:
        raise MalformedRecord(f"missing field {key!r}", path, line)
    value = rec[key]
    if kind is int and (isinstance(value, bool) or not isinstance(value, int)):
        raise MalformedRecord(f"field {key!r} must be an integer", path, line)
    if kind is not int and not isinstance(value, kind):
        raise MalformedRecord(f"field {key!r} has the wrong type", path, line)
    return value
