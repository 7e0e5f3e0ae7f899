"""Bundled name lists used by the deterministic backend and tag builder."""
from __future__ import annotations

import re
from importlib import resources

_MALWARE_NAMES: tuple[str, ...] | None = None

# Industry sectors commonly called out in threat reporting.
INDUSTRY_TERMS = (
    "aerospace",
    "banking",
    "education",
    "energy",
    "finance",
    "financial",
    "government",
    "healthcare",
    "hospitality",
    "insurance",
    "manufacturing",
    "media",
    "retail",
    "technology",
    "telecommunications",
    "transportation",
)


def malware_names() -> tuple[str, ...]:
    """Known malware/tool display names bundled with the package."""
    global _MALWARE_NAMES
    if _MALWARE_NAMES is None:
        text = (
            resources.files("cti_forge")
            .joinpath("data/malware_names.txt")
            .read_text(encoding="utf-8")
        )
        _MALWARE_NAMES = tuple(
            line.strip() for line in text.splitlines() if line.strip()
        )
    return _MALWARE_NAMES


def find_malware_names(text: str) -> list[str]:
    """Lexicon names present in text as whole phrases, case-insensitively."""
    lowered = text.lower()
    found = []
    for name in malware_names():
        pattern = r"(?<!\w)" + re.escape(name.lower()) + r"(?!\w)"
        if re.search(pattern, lowered):
            found.append(name)
    return sorted(found)


def find_industry_terms(text: str) -> list[str]:
    lowered = text.lower()
    return [
        term
        for term in INDUSTRY_TERMS
        if re.search(r"(?<!\w)" + term + r"(?!\w)", lowered)
    ]
