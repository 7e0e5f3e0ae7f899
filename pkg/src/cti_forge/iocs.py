"""Indicator-of-compromise extraction and defang/refang handling.

Extraction runs over a refanged working copy of the input while spans are
reported against the original text. Patterns are applied in precedence
order (URL, email, CVE, IPv6, IPv4, hash, domain); every match is masked
out of the working copy so lower-precedence patterns cannot re-match
inside it.
"""
from __future__ import annotations

import ipaddress
import re
from dataclasses import dataclass
from enum import Enum
from urllib.parse import urlsplit

from cti_forge.errors import CtiForgeError


class IocKind(Enum):
    IPV4 = "ipv4"
    IPV6 = "ipv6"
    MD5 = "md5"
    SHA1 = "sha1"
    SHA256 = "sha256"
    DOMAIN = "domain"
    URL = "url"
    EMAIL = "email"
    CVE = "cve"


@dataclass(frozen=True)
class Ioc:
    """One extracted, normalized indicator."""

    kind: IocKind
    raw: str
    value: str
    span: tuple[int, int]
    defanged: bool
    is_private: bool = False


class NotAHashLength(CtiForgeError):
    def __init__(self, length: int):
        self.length = length
        super().__init__(f"no hash kind has hex length {length}")


# Refang substitutions, in application order. Only the scheme rewrites are
# case-insensitive.
_REFANG_RULES: list[tuple[str, str]] = [
    (r"(?i:hxxps)", "https"),
    (r"(?i:hxxp)", "http"),
    (r"\[\.\]", "."),
    (r"\(\.\)", "."),
    (r"\[dot\]", "."),
    (r"\[at\]", "@"),
    (r"\[:\]", ":"),
]
_REFANG_RE = re.compile("|".join(f"({p})" for p, _ in _REFANG_RULES))
_REFANG_OUT = [out for _, out in _REFANG_RULES]

_URL_RE = re.compile(r"(?:https?|ftp)://[^\s<>\"'`\x00]+", re.IGNORECASE)
_URL_TRIM = ".,;:!?)]}>\"'"

_EMAIL_RE = re.compile(
    r"(?<![\w.-])[A-Za-z0-9._%+-]+@[A-Za-z0-9][A-Za-z0-9.-]*\.[A-Za-z]{2,24}(?![\w-])"
)

_CVE_RE = re.compile(r"(?<![\w-])CVE-\d{4}-\d{4,}(?![\w-])", re.IGNORECASE)

# Loose candidate; ipaddress does the real validation.
_IPV6_RE = re.compile(r"(?<![\w:.])(?:[0-9A-Fa-f]{0,4}:){2,}[0-9A-Fa-f:.]*(?!\w)")

_IPV4_RE = re.compile(r"(?<![\w.])(?:\d{1,3}\.){3}\d{1,3}(?!\w)(?!\.\d)")

_HASH_RE = re.compile(
    r"(?<![0-9A-Za-z])(?:[0-9A-Fa-f]{64}|[0-9A-Fa-f]{40}|[0-9A-Fa-f]{32})(?![0-9A-Za-z])"
)
_HASH_KINDS = {32: IocKind.MD5, 40: IocKind.SHA1, 64: IocKind.SHA256}

# >= 2 labels, letters-only final label of 2-24 chars; suppresses version
# strings like 3.2.1 without needing a TLD database.
_DOMAIN_RE = re.compile(
    r"(?<![\w.@-])"
    r"(?:[A-Za-z0-9](?:[A-Za-z0-9-]{0,61}[A-Za-z0-9])?\.)+"
    r"[A-Za-z]{2,24}"
    r"(?![\w-])(?!\.[A-Za-z0-9])"
)

_MASK = "\x00"


def refang(text: str) -> str:
    """Rewrite defang markers (hxxp, [.], [at], ...) back to live form."""
    return _refang_with_map(text)[0]


def _refang_with_map(text: str) -> tuple[str, list[int], list[int]]:
    """Refang and keep per-character offset maps into the original text.

    Returns (working, starts, ends) where starts[i]/ends[i] bound the
    original-text region that produced working character i.
    """
    out: list[str] = []
    starts: list[int] = []
    ends: list[int] = []
    pos = 0
    for m in _REFANG_RE.finditer(text):
        for j in range(pos, m.start()):
            out.append(text[j])
            starts.append(j)
            ends.append(j + 1)
        replacement = _REFANG_OUT[m.lastindex - 1]
        for ch in replacement:
            out.append(ch)
            starts.append(m.start())
            ends.append(m.end())
        pos = m.end()
    for j in range(pos, len(text)):
        out.append(text[j])
        starts.append(j)
        ends.append(j + 1)
    return "".join(out), starts, ends


def classify_hash(hex_string: str) -> IocKind:
    """Classify a contiguous hex string by length: 32/40/64 chars."""
    kind = _HASH_KINDS.get(len(hex_string))
    if kind is None:
        raise NotAHashLength(len(hex_string))
    return kind


def _normalize_url(url: str) -> str:
    # Lowercase the scheme and authority; leave path/query untouched.
    scheme, sep, rest = url.partition("://")
    end = len(rest)
    for stop in "/?#":
        idx = rest.find(stop)
        if idx != -1:
            end = min(end, idx)
    return scheme.lower() + sep + rest[:end].lower() + rest[end:]


def _ip_or_none(value: str):
    try:
        return ipaddress.ip_address(value)
    except ValueError:
        return None


@dataclass
class _Candidate:
    kind: IocKind
    value: str
    wspan: tuple[int, int]
    is_private: bool = False


def extract_iocs(text: str) -> list[Ioc]:
    """Extract all indicators from ``text``, defanged or not.

    Deduplicates by (kind, value) keeping the earliest occurrence; the
    result is sorted by kind then value. The host of every URL is also
    emitted as a domain (or IP) indicator.
    """
    working, starts, ends = _refang_with_map(text)
    buf = list(working)
    candidates: list[_Candidate] = []

    def mask(a: int, b: int) -> None:
        for i in range(a, b):
            buf[i] = _MASK

    def scan() -> str:
        return "".join(buf)

    # URLs first, each immediately followed by its derived host indicator.
    snapshot = scan()
    for m in _URL_RE.finditer(snapshot):
        a, b = m.start(), m.end()
        matched = m.group(0)
        trimmed = matched.rstrip(_URL_TRIM)
        if "://" == trimmed[-3:] or not trimmed:
            continue
        b = a + len(trimmed)
        candidates.append(_Candidate(IocKind.URL, _normalize_url(trimmed), (a, b)))
        mask(a, b)
        host = urlsplit(_normalize_url(trimmed)).hostname
        if host:
            idx = trimmed.lower().find(host)
            hspan = (a + idx, a + idx + len(host)) if idx != -1 else (a, b)
            addr = _ip_or_none(host)
            if addr is None:
                candidates.append(_Candidate(IocKind.DOMAIN, host, hspan))
            elif addr.version == 4:
                candidates.append(
                    _Candidate(IocKind.IPV4, str(addr), hspan, addr.is_private)
                )
            else:
                candidates.append(
                    _Candidate(IocKind.IPV6, str(addr), hspan, addr.is_private)
                )

    snapshot = scan()
    for m in _EMAIL_RE.finditer(snapshot):
        candidates.append(
            _Candidate(IocKind.EMAIL, m.group(0).lower(), (m.start(), m.end()))
        )
        mask(m.start(), m.end())

    snapshot = scan()
    for m in _CVE_RE.finditer(snapshot):
        candidates.append(
            _Candidate(IocKind.CVE, m.group(0).upper(), (m.start(), m.end()))
        )
        mask(m.start(), m.end())

    snapshot = scan()
    for m in _IPV6_RE.finditer(snapshot):
        cand = m.group(0)
        b = m.end()
        while cand and cand.endswith("."):
            cand = cand[:-1]
            b -= 1
        addr = _ip_or_none(cand)
        if addr is None or addr.version != 6:
            continue
        candidates.append(
            _Candidate(IocKind.IPV6, str(addr), (m.start(), b), addr.is_private)
        )
        mask(m.start(), b)

    snapshot = scan()
    for m in _IPV4_RE.finditer(snapshot):
        addr = _ip_or_none(m.group(0))
        if addr is None or addr.version != 4:
            continue
        candidates.append(
            _Candidate(IocKind.IPV4, str(addr), (m.start(), m.end()), addr.is_private)
        )
        mask(m.start(), m.end())

    snapshot = scan()
    for m in _HASH_RE.finditer(snapshot):
        kind = _HASH_KINDS[len(m.group(0))]
        candidates.append(
            _Candidate(kind, m.group(0).lower(), (m.start(), m.end()))
        )
        mask(m.start(), m.end())

    snapshot = scan()
    for m in _DOMAIN_RE.finditer(snapshot):
        candidates.append(
            _Candidate(IocKind.DOMAIN, m.group(0).lower(), (m.start(), m.end()))
        )
        mask(m.start(), m.end())

    # Resolve working-copy spans back to the original text, dedup, sort.
    iocs: dict[tuple[IocKind, str], Ioc] = {}
    for c in candidates:
        ws, we = c.wspan
        span = (starts[ws], ends[we - 1])
        raw = text[span[0] : span[1]]
        defanged = raw != working[ws:we]
        ioc = Ioc(c.kind, raw, c.value, span, defanged, c.is_private)
        key = (c.kind, c.value)
        prev = iocs.get(key)
        if prev is None or span[0] < prev.span[0]:
            iocs[key] = ioc
    return sorted(iocs.values(), key=lambda i: (i.kind.value, i.value))
