"""Reading and writing the ``study,r,n`` CSV format."""

from __future__ import annotations

import csv
import io
from importlib import resources
from pathlib import Path

from .likelihood import Study
from .numerics import DomainError

HEADER = ["study", "r", "n"]
VITAMIN_C = "@vitamin-c"
_EMBEDDED = {VITAMIN_C: "vitamin_c.csv"}


class StudyFileError(ValueError):
    """A study file could not be parsed or failed validation."""


def parse_studies(text: str, source: str = "<string>") -> list[Study]:
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise StudyFileError(f"{source}: empty file, expected header {','.join(HEADER)}") from None
    if [h.strip() for h in header] != HEADER:
        raise StudyFileError(f"{source}, line 1: header must be exactly {','.join(HEADER)!r}")
    studies: list[Study] = []
    seen: set[str] = set()
    for row in reader:
        line = reader.line_num
        if not row or all(not cell.strip() for cell in row):
            continue
        if len(row) != 3:
            raise StudyFileError(f"{source}, line {line}: expected 3 fields, got {len(row)}")
        sid, r_text, n_text = (cell.strip() for cell in row)
        try:
            r = float(r_text)
            n = int(n_text)
        except ValueError:
            raise StudyFileError(f"{source}, line {line}: cannot parse r={r_text!r}, n={n_text!r}") from None
        if sid in seen:
            raise StudyFileError(f"{source}, line {line}: duplicate study id {sid!r}")
        try:
            studies.append(Study(sid, r, n))
        except DomainError as exc:
            raise StudyFileError(f"{source}, line {line}: {exc}") from None
        seen.add(sid)
    if not studies:
        raise StudyFileError(f"{source}: no study rows")
    return studies


def read_studies(path: str | Path) -> list[Study]:
    """Load studies from a CSV path or an embedded pseudo-path such as ``@vitamin-c``."""
    key = str(path)
    if key in _EMBEDDED:
        text = resources.files("corrlik.data").joinpath(_EMBEDDED[key]).read_text(encoding="utf-8")
        return parse_studies(text, key)
    if key.startswith("@"):
        raise StudyFileError(f"unknown embedded dataset {key!r}; available: {', '.join(_EMBEDDED)}")
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise StudyFileError(f"{path}: {exc.strerror or exc}") from None
    return parse_studies(text, str(path))


def vitamin_c() -> list[Study]:
    return read_studies(VITAMIN_C)
