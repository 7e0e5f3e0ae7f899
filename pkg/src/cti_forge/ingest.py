"""Fetch an intelligence source and reduce it to analyzable plain text.

Sources are URLs, local files, or inline text. HTML is stripped of
boilerplate subtrees (script, style, nav, header, footer) with the
tolerant stdlib parser; threat blogs are messy real-world HTML and never
fail to parse.
"""
from __future__ import annotations

import re
from dataclasses import dataclass
from datetime import datetime, timezone
from html.parser import HTMLParser
from pathlib import Path

import requests

from cti_forge import __version__
from cti_forge.errors import CtiForgeError

DEFAULT_TIMEOUT = 30.0
DEFAULT_MAX_BYTES = 5 * 1024 * 1024
DEFAULT_MAX_REDIRECTS = 5

_USER_AGENT = f"cti-forge/{__version__}"

_TEXT_TYPES = {"text/plain", "text/markdown", "text/html"}

_EXTENSION_TYPES = {
    ".html": "text/html",
    ".htm": "text/html",
    ".md": "text/markdown",
    ".markdown": "text/markdown",
    ".txt": "text/plain",
}


class FetchError(CtiForgeError):
    """The source could not be retrieved."""


class Timeout(FetchError):
    """The fetch exceeded the configured timeout."""


class TooLarge(FetchError):
    """The source exceeded the configured byte cap."""


class UnsupportedContentType(CtiForgeError):
    def __init__(self, content_type: str):
        self.content_type = content_type
        super().__init__(f"cannot extract text from {content_type!r}")


@dataclass(frozen=True)
class FetchLimits:
    timeout: float = DEFAULT_TIMEOUT
    max_bytes: int = DEFAULT_MAX_BYTES
    max_redirects: int = DEFAULT_MAX_REDIRECTS


@dataclass(frozen=True)
class RawDocument:
    origin: str
    content_type: str
    data: bytes
    fetched_at: datetime


def classify_source(src: str) -> str:
    """Classify an intel source as 'url', 'file', or 'text'."""
    token = src.strip()
    if not re.search(r"\s", token):
        if token.startswith(("http://", "https://")):
            return "url"
        if Path(token).exists() or token.lower().endswith(tuple(_EXTENSION_TYPES)):
            return "file"
    return "text"


def _sniff_content_type(data: bytes, fallback: str = "text/plain") -> str:
    head = data[:1024].lstrip().lower()
    if head.startswith(b"%pdf"):
        return "application/pdf"
    if head.startswith(b"<!doctype html") or b"<html" in head:
        return "text/html"
    try:
        data.decode("utf-8")
    except UnicodeDecodeError:
        return "application/octet-stream"
    return fallback


def fetch_source(src: str, limits: FetchLimits | None = None) -> RawDocument:
    """Retrieve the intel source as a RawDocument, honoring fetch limits."""
    limits = limits or FetchLimits()
    now = datetime.now(timezone.utc)
    kind = classify_source(src)

    if kind == "text":
        data = src.encode("utf-8")
        if len(data) > limits.max_bytes:
            raise TooLarge(f"inline text exceeds {limits.max_bytes} bytes")
        return RawDocument(src, "text/plain", data, now)

    if kind == "file":
        path = Path(src.strip())
        try:
            data = path.read_bytes()
        except OSError as exc:
            raise FetchError(f"cannot read {path}: {exc}") from exc
        if len(data) > limits.max_bytes:
            raise TooLarge(f"{path} exceeds {limits.max_bytes} bytes")
        content_type = _EXTENSION_TYPES.get(path.suffix.lower()) or _sniff_content_type(data)
        return RawDocument(str(path), content_type, data, now)

    session = requests.Session()
    session.max_redirects = limits.max_redirects
    try:
        resp = session.get(
            src.strip(),
            timeout=limits.timeout,
            stream=True,
            headers={"User-Agent": _USER_AGENT},
        )
    except requests.Timeout as exc:
        raise Timeout(f"GET {src} timed out after {limits.timeout}s") from exc
    except requests.TooManyRedirects as exc:
        raise FetchError(f"GET {src}: more than {limits.max_redirects} redirects") from exc
    except requests.RequestException as exc:
        raise FetchError(f"GET {src}: {exc}") from exc
    with resp:
        if resp.status_code >= 400:
            raise FetchError(f"GET {src}: HTTP {resp.status_code}")
        chunks = []
        size = 0
        try:
            for chunk in resp.iter_content(chunk_size=65536):
                size += len(chunk)
                if size > limits.max_bytes:
                    raise TooLarge(f"{src} exceeds {limits.max_bytes} bytes")
                chunks.append(chunk)
        except requests.Timeout as exc:
            raise Timeout(f"GET {src} timed out after {limits.timeout}s") from exc
        except requests.RequestException as exc:
            raise FetchError(f"GET {src}: {exc}") from exc
        data = b"".join(chunks)
        content_type = resp.headers.get("Content-Type", "").split(";")[0].strip().lower()
        if not content_type:
            content_type = _sniff_content_type(data)
    return RawDocument(src.strip(), content_type, data, now)


# Subtrees dropped wholesale during HTML text extraction.
_DROP_TAGS = {"script", "style", "nav", "header", "footer"}

# Tags that imply a paragraph break around their content.
_BREAK_TAGS = {
    "p", "div", "br", "li", "ul", "ol", "tr", "table", "h1", "h2", "h3",
    "h4", "h5", "h6", "section", "article", "blockquote", "pre", "td", "th",
}

_NAMED_ENTITIES = {
    "amp": "&",
    "lt": "<",
    "gt": ">",
    "quot": '"',
    "apos": "'",
    "nbsp": " ",
}


class _TextExtractor(HTMLParser):
    """Collects visible text, dropping boilerplate subtrees."""

    def __init__(self):
        super().__init__(convert_charrefs=False)
        self.parts: list[str] = []
        self._drop_depth = 0

    def handle_starttag(self, tag, attrs):
        if tag in _DROP_TAGS:
            self._drop_depth += 1
        elif tag in _BREAK_TAGS:
            self.parts.append("\n")

    def handle_endtag(self, tag):
        if tag in _DROP_TAGS:
            if self._drop_depth > 0:
                self._drop_depth -= 1
        elif tag in _BREAK_TAGS:
            self.parts.append("\n")

    def handle_startendtag(self, tag, attrs):
        if tag in _BREAK_TAGS:
            self.parts.append("\n")

    def handle_data(self, data):
        if not self._drop_depth:
            self.parts.append(data)

    def handle_entityref(self, name):
        if self._drop_depth:
            return
        self.parts.append(_NAMED_ENTITIES.get(name, f"&{name};"))

    def handle_charref(self, name):
        if self._drop_depth:
            return
        try:
            code = int(name[1:], 16) if name.startswith(("x", "X")) else int(name)
            self.parts.append(chr(code))
        except (ValueError, OverflowError):
            self.parts.append(f"&#{name};")


def _normalize_whitespace(text: str) -> str:
    # Single spaces within lines, single newlines between paragraphs.
    text = text.replace("\r\n", "\n").replace("\r", "\n")
    text = re.sub(r"[ \t\f\v\xa0]+", " ", text)
    lines = [line.strip() for line in text.split("\n")]
    return "\n".join(line for line in lines if line)


def extract_text(doc: RawDocument) -> str:
    """Reduce a fetched document to whitespace-normalized plain text."""
    if doc.content_type not in _TEXT_TYPES:
        raise UnsupportedContentType(doc.content_type)
    text = doc.data.decode("utf-8", errors="replace")
    if doc.content_type == "text/html":
        parser = _TextExtractor()
        parser.feed(text)
        parser.close()
        text = "".join(parser.parts)
    return _normalize_whitespace(text)
