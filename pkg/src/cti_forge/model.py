"""Core domain types: threat types, the seven-section report schema, requests.

All types here are immutable values once constructed and safe to share
between concurrent tasks.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from decimal import Decimal
from enum import Enum

from cti_forge.errors import CtiForgeError


class ThreatType(Enum):
    """The four supported threat categories."""

    CAMPAIGN = "Campaign"
    THREAT_ACTOR = "Threat Actor"
    VULNERABILITY = "Vulnerability"
    MALWARE_TOOL = "Malware/Tool"

    @property
    def canonical_name(self) -> str:
        return self.value


class SectionKind(Enum):
    """The seven report sections, ordered by ordinal."""

    METADATA_OVERVIEW = 1
    MITRE_SUMMARY = 2
    DATA_EXTRACTION = 3
    TOOLS_MALWARE = 4
    DEFENSE_RECOMMENDATIONS = 5
    REFERENCES = 6
    TAGS = 7

    @property
    def ordinal(self) -> int:
        return self.value

    @property
    def heading(self) -> str:
        return SECTION_HEADINGS[self]


# Canonical level-2 headings, bit-exact; used by the merger and the
# evaluator's section splitter.
SECTION_HEADINGS: dict[SectionKind, str] = {
    SectionKind.METADATA_OVERVIEW: "## Metadata and Overview",
    SectionKind.MITRE_SUMMARY: "## MITRE Summary Table",
    SectionKind.DATA_EXTRACTION: "## Data Extraction",
    SectionKind.TOOLS_MALWARE: "## Tools and Malware",
    SectionKind.DEFENSE_RECOMMENDATIONS: "## Defense Recommendations",
    SectionKind.REFERENCES: "## References",
    SectionKind.TAGS: "## Tags",
}

_FILE_NAME_RE = re.compile(r"^[A-Za-z0-9._-]+\.md$")

# Accepted spellings, lowercased, for each threat type. Aliases are kept
# minimal and explicit: malware, tool, actor.
_THREAT_TYPE_ALIASES: dict[str, ThreatType] = {
    "campaign": ThreatType.CAMPAIGN,
    "threat actor": ThreatType.THREAT_ACTOR,
    "actor": ThreatType.THREAT_ACTOR,
    "vulnerability": ThreatType.VULNERABILITY,
    "malware/tool": ThreatType.MALWARE_TOOL,
    "malware": ThreatType.MALWARE_TOOL,
    "tool": ThreatType.MALWARE_TOOL,
}


class UnknownThreatType(CtiForgeError):
    """Raised when a string names none of the four threat types."""

    def __init__(self, value: str):
        self.value = value
        super().__init__(f"unknown threat type: {value!r}")


class InvalidFileName(CtiForgeError):
    """Raised when a report file name breaks the naming rules."""

    def __init__(self, value: str, rule: str):
        self.value = value
        self.rule = rule
        super().__init__(f"invalid file name {value!r}: {rule}")


def parse_threat_type(s: str) -> ThreatType:
    """Parse a threat-type string, case-insensitively, with fixed aliases."""
    try:
        return _THREAT_TYPE_ALIASES[s.strip().lower()]
    except KeyError:
        raise UnknownThreatType(s) from None


def validate_file_name(s: str) -> str:
    """Return ``s`` unchanged if it is a legal report file name.

    Legal names match ``[A-Za-z0-9._-]+\\.md`` and contain no path
    separators.
    """
    if not s:
        raise InvalidFileName(s, "empty name")
    if "/" in s or "\\" in s:
        raise InvalidFileName(s, "contains a path separator")
    if not _FILE_NAME_RE.match(s):
        raise InvalidFileName(s, "must match [A-Za-z0-9._-]+ and end in .md")
    return s


@dataclass(frozen=True)
class IntelRequest:
    """The trigger payload: intelligence source, threat type, report name."""

    intel_info: str
    threat_type: ThreatType
    file_name: str

    def __post_init__(self):
        validate_file_name(self.file_name)
        info = self.intel_info.strip()
        if not info:
            raise ValueError("intel_info must be nonempty")
        # A single token containing a scheme is URL form; only http(s) allowed.
        if len(info.split()) == 1 and "://" in info:
            if not info.startswith(("http://", "https://")):
                raise ValueError("URL sources must use the http or https scheme")

    @property
    def is_url(self) -> bool:
        info = self.intel_info.strip()
        return len(info.split()) == 1 and info.startswith(("http://", "https://"))


@dataclass(frozen=True)
class UsageRecord:
    """Accounting for one backend call."""

    prompt_chars: int
    completion_chars: int
    scu_estimate: Decimal
    wall_seconds: float

    def __post_init__(self):
        if self.prompt_chars < 0 or self.completion_chars < 0:
            raise ValueError("character counts must be nonnegative")
        if self.scu_estimate < 0 or self.wall_seconds < 0:
            raise ValueError("scu_estimate and wall_seconds must be nonnegative")


@dataclass(frozen=True)
class GenerationMeta:
    """Provenance for one generated section."""

    backend_id: str
    prompt_id: str
    attempts: int
    usage: UsageRecord
    wall_seconds: float


@dataclass(frozen=True)
class ReportSection:
    """One of the seven sections, with generation provenance."""

    kind: SectionKind
    body: str
    meta: GenerationMeta

    def __post_init__(self):
        if not self.body.strip():
            raise ValueError(f"section {self.kind.name} has an empty body")
        if not self.body.startswith(self.kind.heading):
            raise ValueError(
                f"section {self.kind.name} body must begin with {self.kind.heading!r}"
            )


@dataclass(frozen=True)
class CtiReport:
    """A complete report: seven ordered sections plus the merged document."""

    file_name: str
    threat_type: ThreatType
    sections: tuple[ReportSection, ...] = field(default_factory=tuple)
    merged: str = ""

    def __post_init__(self):
        ordinals = [s.kind.ordinal for s in self.sections]
        if ordinals != sorted(ordinals):
            raise ValueError("sections must be sorted by ordinal")
        if len(set(ordinals)) != len(ordinals):
            raise ValueError("duplicate section kinds")

    def section(self, kind: SectionKind) -> ReportSection:
        for s in self.sections:
            if s.kind is kind:
                return s
        raise KeyError(kind)
