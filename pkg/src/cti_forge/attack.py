"""MITRE ATT&CK enterprise catalog: loading, lookup, text mining, rendering.

The catalog is a flat CSV (header ``id,name,tactics,parent_id,description``,
tactics pipe-delimited). A fixture derived from a public enterprise release
is bundled with the package; an optional leading ``# version: ...`` comment
line records which release it was pinned from.
"""
from __future__ import annotations

import csv
import re
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

from cti_forge.errors import CtiForgeError

_ID_RE = re.compile(r"^T\d{4}(\.\d{3})?$")
_ID_TOKEN_RE = re.compile(r"(?<![\w.])T\d{4}(?:\.\d{3})?(?!\w)(?!\.\d)")

_EXPECTED_HEADER = ["id", "name", "tactics", "parent_id", "description"]

EVIDENCE_WINDOW = 200


class CatalogError(CtiForgeError):
    pass


class ParseError(CatalogError):
    def __init__(self, line: int, cause: str):
        self.line = line
        self.cause = cause
        super().__init__(f"catalog line {line}: {cause}")


class DanglingParent(CatalogError):
    def __init__(self, technique_id: str):
        self.technique_id = technique_id
        super().__init__(f"sub-technique {technique_id} has no parent in the catalog")


class DuplicateId(CatalogError):
    def __init__(self, technique_id: str):
        self.technique_id = technique_id
        super().__init__(f"duplicate technique id {technique_id}")


@dataclass(frozen=True)
class Technique:
    id: str
    name: str
    tactics: tuple[str, ...]
    parent_id: str | None
    description: str


@dataclass(frozen=True)
class TtpHit:
    """One occurrence of a technique in source text."""

    technique_id: str
    evidence: str
    matched_by: str  # "id" or "name"


@dataclass(frozen=True)
class Catalog:
    techniques: dict[str, Technique]
    name_index: dict[str, str]
    version: str = "unknown"

    def lookup(self, technique_id: str) -> Technique:
        return self.techniques[technique_id]

    def __contains__(self, technique_id: str) -> bool:
        return technique_id in self.techniques

    def __len__(self) -> int:
        return len(self.techniques)


def validate_id(s: str) -> bool:
    """True iff ``s`` is a well-formed technique id (T#### or T####.###)."""
    return bool(_ID_RE.match(s))


def bundled_catalog_path() -> Path:
    """Path of the ATT&CK fixture shipped with the package."""
    return Path(resources.files("cti_forge").joinpath("data/attack_enterprise.csv"))


def load_catalog(path: str | Path) -> Catalog:
    """Load and validate a catalog CSV."""
    path = Path(path)
    try:
        raw_lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise CatalogError(f"cannot read catalog {path}: {exc}") from exc

    version = "unknown"
    lineno = 0
    while lineno < len(raw_lines) and raw_lines[lineno].startswith("#"):
        comment = raw_lines[lineno].lstrip("#").strip()
        if comment.lower().startswith("version:"):
            version = comment.split(":", 1)[1].strip()
        lineno += 1
    if lineno >= len(raw_lines):
        raise ParseError(lineno + 1, "missing header")

    reader = csv.reader(raw_lines[lineno:])
    header = next(reader)
    if [h.strip() for h in header] != _EXPECTED_HEADER:
        raise ParseError(lineno + 1, f"expected header {','.join(_EXPECTED_HEADER)}")

    techniques: dict[str, Technique] = {}
    name_index: dict[str, str] = {}
    for offset, row in enumerate(reader, start=lineno + 2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(_EXPECTED_HEADER):
            raise ParseError(offset, f"expected {len(_EXPECTED_HEADER)} columns, got {len(row)}")
        tid, name, tactics, parent_id, description = (c.strip() for c in row)
        if not validate_id(tid):
            raise ParseError(offset, f"malformed technique id {tid!r}")
        if tid in techniques:
            raise DuplicateId(tid)
        expected_parent = tid.split(".")[0] if "." in tid else ""
        if parent_id != expected_parent:
            raise ParseError(
                offset, f"parent_id {parent_id!r} does not match id {tid!r}"
            )
        if not name:
            raise ParseError(offset, "empty technique name")
        tech = Technique(
            id=tid,
            name=name,
            tactics=tuple(t.strip() for t in tactics.split("|") if t.strip()),
            parent_id=parent_id or None,
            description=description,
        )
        techniques[tid] = tech
        # First occurrence wins on (rare) name collisions; later entries
        # stay reachable by id.
        name_index.setdefault(name.lower(), tid)

    for tech in techniques.values():
        if tech.parent_id and tech.parent_id not in techniques:
            raise DanglingParent(tech.id)

    return Catalog(techniques=techniques, name_index=name_index, version=version)


def _evidence(text: str, start: int, end: int) -> str:
    margin = max(0, (EVIDENCE_WINDOW - (end - start)) // 2)
    lo = max(0, start - margin)
    hi = min(len(text), end + margin)
    return text[lo:hi][:EVIDENCE_WINDOW].strip()


def extract_ttp_ids(text: str, cat: Catalog) -> list[TtpHit]:
    """Find technique references by explicit id or exact name phrase.

    Ids that do not resolve in the catalog are dropped. Hits are
    deduplicated by technique id (id matches beat name matches) and sorted
    by id.
    """
    hits: dict[str, TtpHit] = {}
    for m in _ID_TOKEN_RE.finditer(text):
        tid = m.group(0)
        if tid in cat:
            hits.setdefault(
                tid, TtpHit(tid, _evidence(text, m.start(), m.end()), "id")
            )
    lowered = text.lower()
    for name, tid in cat.name_index.items():
        if tid in hits:
            continue
        pattern = re.compile(r"(?<!\w)" + re.escape(name) + r"(?!\w)")
        m = pattern.search(lowered)
        if m:
            hits[tid] = TtpHit(tid, _evidence(text, m.start(), m.end()), "name")
    return sorted(hits.values(), key=lambda h: h.technique_id)


def _escape_cell(value: str) -> str:
    return value.replace("|", "\\|").replace("\n", " ")


def render_mitre_table(hits: list[TtpHit], cat: Catalog) -> str:
    """Render hits as a Markdown table: Tactic | ID | Name | Evidence."""
    lines = [
        "| Tactic | Technique ID | Technique Name | Evidence |",
        "| --- | --- | --- | --- |",
    ]
    seen: dict[str, TtpHit] = {}
    for hit in hits:
        seen.setdefault(hit.technique_id, hit)
    if not seen:
        lines.append("| No techniques identified |  |  |  |")
        return "\n".join(lines)

    def sort_key(hit: TtpHit):
        tech = cat.lookup(hit.technique_id)
        first_tactic = tech.tactics[0] if tech.tactics else ""
        return (first_tactic, hit.technique_id)

    for hit in sorted(seen.values(), key=sort_key):
        tech = cat.lookup(hit.technique_id)
        tactic = ", ".join(tech.tactics)
        lines.append(
            f"| {_escape_cell(tactic)} | {tech.id} | {_escape_cell(tech.name)} "
            f"| {_escape_cell(hit.evidence)} |"
        )
    return "\n".join(lines)
