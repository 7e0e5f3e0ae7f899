"""Report evaluation: term-vector cosine similarity, embedding similarity,
set-based accuracy, and AI-vs-manual report comparison rows.

Embeddings are always provider-delegated; the bundled deterministic
provider (hashed bag-of-words on the unit sphere) exists for tests and
offline runs, not as a semantic model.
"""
from __future__ import annotations

import hashlib
import json
import math
import re
from dataclasses import dataclass
from enum import Enum
from importlib import resources
from pathlib import Path
from typing import Protocol

from cti_forge.attack import Catalog, extract_ttp_ids
from cti_forge.errors import CtiForgeError
from cti_forge.iocs import extract_iocs
from cti_forge.model import SECTION_HEADINGS, SectionKind


class ZeroVector(CtiForgeError):
    pass


class MissingCorpusStats(CtiForgeError):
    pass


class EmptyReference(CtiForgeError):
    pass


class ProviderError(CtiForgeError):
    pass


class WeightScheme(Enum):
    RAW_TF = "raw_tf"
    TF_IDF = "tf_idf"


@dataclass(frozen=True)
class TermVector:
    """Sparse token-weight vector; zero weights are never stored."""

    weights: dict[str, float]
    scheme: WeightScheme

    def norm(self) -> float:
        return math.sqrt(sum(w * w for w in self.weights.values()))


@dataclass(frozen=True)
class CorpusStats:
    """Document frequencies over a corpus, for TF-IDF weighting."""

    total_documents: int
    document_frequency: dict[str, int]

    @classmethod
    def from_token_lists(cls, documents: list[list[str]]) -> "CorpusStats":
        df: dict[str, int] = {}
        for tokens in documents:
            for token in set(tokens):
                df[token] = df.get(token, 0) + 1
        return cls(total_documents=len(documents), document_frequency=df)


class Apt(Enum):
    PRESENT = "present"
    ABSENT = "absent"
    NOT_APPLICABLE = "not_applicable"


@dataclass(frozen=True)
class ComparisonRow:
    """One row of the AI-vs-manual comparison table."""

    report_name: str
    ioc_score: float | None
    ttp_score: float | None
    apt: Apt

    def to_json(self) -> str:
        return json.dumps(
            {
                "report": self.report_name,
                "ioc_score": self.ioc_score,
                "ttp_score": self.ttp_score,
                "apt": self.apt.value,
            }
        )


# Tokens keep internal dots and dashes so indicators like cve-2023-23397
# or evil.com survive as single tokens.
_TOKEN_RE = re.compile(r"[0-9A-Za-z]+(?:[.\-][0-9A-Za-z]+)*")

_STOPWORDS: frozenset[str] | None = None


def bundled_stopwords_path() -> Path:
    return Path(resources.files("cti_forge").joinpath("data/stopwords.txt"))


def load_stopwords(path: str | Path | None = None) -> frozenset[str]:
    """Load the stopword list; the bundled list is used when path is None."""
    global _STOPWORDS
    if path is None:
        if _STOPWORDS is None:
            text = bundled_stopwords_path().read_text(encoding="utf-8")
            _STOPWORDS = frozenset(w.strip() for w in text.splitlines() if w.strip())
        return _STOPWORDS
    text = Path(path).read_text(encoding="utf-8")
    return frozenset(w.strip() for w in text.splitlines() if w.strip())


def tokenize(
    text: str,
    lowercase: bool = True,
    strip_stopwords: bool = False,
    stopwords: frozenset[str] | None = None,
) -> list[str]:
    """Split text into tokens on non-alphanumeric boundaries."""
    tokens = _TOKEN_RE.findall(text)
    if lowercase:
        tokens = [t.lower() for t in tokens]
    if strip_stopwords:
        words = stopwords if stopwords is not None else load_stopwords()
        tokens = [t for t in tokens if t.lower() not in words]
    return tokens


def term_vector(
    tokens: list[str],
    scheme: WeightScheme = WeightScheme.RAW_TF,
    corpus_stats: CorpusStats | None = None,
) -> TermVector:
    """Build a sparse weight vector from tokens.

    RAW_TF weights are plain counts. TF_IDF weights are
    count * ln((N + 1) / (df + 1)) with add-1 smoothing on the idf
    denominator; corpus-wide tokens weigh out to zero and are dropped.
    """
    counts: dict[str, float] = {}
    for t in tokens:
        counts[t] = counts.get(t, 0) + 1
    if scheme is WeightScheme.RAW_TF:
        return TermVector(counts, scheme)
    if corpus_stats is None:
        raise MissingCorpusStats("TF-IDF weighting requires corpus statistics")
    n = corpus_stats.total_documents
    weights: dict[str, float] = {}
    for t, c in counts.items():
        df = corpus_stats.document_frequency.get(t, 0)
        idf = math.log((n + 1) / (df + 1))
        w = c * idf
        if w > 0:
            weights[t] = w
    return TermVector(weights, scheme)


def cosine(a: TermVector, b: TermVector) -> float:
    """Cosine similarity: dot(a, b) / (|a| * |b|)."""
    if not a.weights or not b.weights:
        raise ZeroVector("cosine is undefined for a zero vector")
    small, large = (a.weights, b.weights)
    if len(small) > len(large):
        small, large = large, small
    dot = sum(w * large[t] for t, w in small.items() if t in large)
    return dot / (a.norm() * b.norm())


class EmbeddingProvider(Protocol):
    """A deterministic text-to-unit-vector encoder."""

    dimension: int
    max_tokens: int | None

    def embed(self, text: str) -> list[float]: ...


class HashedBagEmbedding:
    """Deterministic test provider: seeded hashed bag-of-words projected to
    the unit sphere. Not a semantic model."""

    def __init__(self, dimension: int = 256, seed: int = 7, max_tokens: int | None = 512):
        self.dimension = dimension
        self.seed = seed
        self.max_tokens = max_tokens

    def embed(self, text: str) -> list[float]:
        vec = [0.0] * self.dimension
        tokens = tokenize(text) or [""]
        for token in tokens:
            digest = hashlib.blake2b(
                token.encode("utf-8"), digest_size=8, salt=str(self.seed).encode()
            ).digest()
            value = int.from_bytes(digest, "big")
            idx = value % self.dimension
            sign = 1.0 if (value >> 32) & 1 else -1.0
            vec[idx] += sign
        return _unit(vec)


def _unit(vec: list[float]) -> list[float]:
    norm = math.sqrt(sum(x * x for x in vec))
    if norm == 0:
        out = [0.0] * len(vec)
        out[0] = 1.0
        return out
    return [x / norm for x in vec]


def _chunks(text: str, max_tokens: int) -> list[str]:
    words = text.split()
    if len(words) <= max_tokens:
        return [text]
    return [
        " ".join(words[i : i + max_tokens]) for i in range(0, len(words), max_tokens)
    ]


def embed_similarity(a: str, b: str, provider: EmbeddingProvider) -> float:
    """Dot product of the two unit-norm embeddings, in [-1, 1].

    Texts longer than the provider's token limit are chunked into
    limit-sized windows, mean-pooled, and renormalized.
    """
    try:
        va = _pooled_embedding(a, provider)
        vb = _pooled_embedding(b, provider)
    except CtiForgeError:
        raise
    except Exception as exc:
        raise ProviderError(str(exc)) from exc
    return sum(x * y for x, y in zip(va, vb))


def _pooled_embedding(text: str, provider: EmbeddingProvider) -> list[float]:
    limit = getattr(provider, "max_tokens", None)
    if limit:
        parts = _chunks(text, limit)
    else:
        parts = [text]
    vectors = [provider.embed(p) for p in parts]
    if len(vectors) == 1:
        return _unit(vectors[0])
    pooled = [sum(col) / len(vectors) for col in zip(*vectors)]
    return _unit(pooled)


def set_accuracy(predicted: set, reference: set) -> float:
    """|predicted ∩ reference| / |reference|."""
    if not reference:
        raise EmptyReference("reference set is empty")
    return len(predicted & reference) / len(reference)


def split_sections(markdown: str) -> dict[SectionKind, str]:
    """Split a report into sections by the canonical level-2 headings.

    Returns an empty mapping when no canonical heading is present.
    """
    positions: list[tuple[int, SectionKind]] = []
    for kind, heading in SECTION_HEADINGS.items():
        pattern = re.compile(rf"^{re.escape(heading)}\s*$", re.MULTILINE)
        m = pattern.search(markdown)
        if m:
            positions.append((m.start(), kind))
    positions.sort()
    sections: dict[SectionKind, str] = {}
    for i, (start, kind) in enumerate(positions):
        end = positions[i + 1][0] if i + 1 < len(positions) else len(markdown)
        sections[kind] = markdown[start:end].strip()
    return sections


def bundled_aliases_path() -> Path:
    return Path(resources.files("cti_forge").joinpath("data/adversary_aliases.json"))


def load_adversary_aliases(path: str | Path | None = None) -> dict[str, list[str]]:
    """Load the adversary alias map (canonical group name -> aliases)."""
    p = Path(path) if path is not None else bundled_aliases_path()
    data = json.loads(p.read_text(encoding="utf-8"))
    return {name: list(aliases) for name, aliases in data.items()}


def find_adversary_groups(text: str, aliases: dict[str, list[str]]) -> set[str]:
    """Canonical names of groups referenced in text by name or alias."""
    lowered = text.lower()
    found = set()
    for group, names in aliases.items():
        for candidate in [group, *names]:
            pattern = r"(?<!\w)" + re.escape(candidate.lower()) + r"(?!\w)"
            if re.search(pattern, lowered):
                found.add(group)
                break
    return found


def _scoped_text(markdown: str, scope: list[SectionKind] | None) -> str:
    if scope is None:
        return markdown
    sections = split_sections(markdown)
    if not sections:
        # No canonical headings: fall back to whole-document scope.
        return markdown
    return "\n\n".join(sections[k] for k in scope if k in sections)


def compare_reports(
    ai: str,
    manual: str,
    cat: Catalog,
    report_name: str = "report",
    aliases: dict[str, list[str]] | None = None,
    scope: list[SectionKind] | None = None,
) -> ComparisonRow:
    """Score an AI-generated report against its manual counterpart.

    IoC and TTP scores are set accuracies against the manual document's
    extraction; a score is absent (N/A) when the manual document yields an
    empty reference set for that element class.
    """
    if aliases is None:
        aliases = load_adversary_aliases()
    ai_text = _scoped_text(ai, scope)
    manual_text = _scoped_text(manual, scope)

    ai_iocs = {(i.kind, i.value) for i in extract_iocs(ai_text)}
    manual_iocs = {(i.kind, i.value) for i in extract_iocs(manual_text)}
    ioc_score = set_accuracy(ai_iocs, manual_iocs) if manual_iocs else None

    ai_ttps = {h.technique_id for h in extract_ttp_ids(ai_text, cat)}
    manual_ttps = {h.technique_id for h in extract_ttp_ids(manual_text, cat)}
    ttp_score = set_accuracy(ai_ttps, manual_ttps) if manual_ttps else None

    manual_groups = find_adversary_groups(manual_text, aliases)
    ai_groups = find_adversary_groups(ai_text, aliases)
    if not manual_groups:
        apt = Apt.NOT_APPLICABLE
    elif manual_groups & ai_groups:
        apt = Apt.PRESENT
    else:
        apt = Apt.ABSENT

    return ComparisonRow(report_name, ioc_score, ttp_score, apt)


def render_comparison_table(rows: list[ComparisonRow]) -> str:
    """Markdown table (Report | IoC% | TTP% | APT) plus an averages row."""

    def pct(score: float | None) -> str:
        return "N/A" if score is None else f"{score * 100:.1f}"

    def apt_cell(apt: Apt) -> str:
        return {"present": "yes", "absent": "no", "not_applicable": "N/A"}[apt.value]

    lines = ["| Report | IoC% | TTP% | APT |", "| --- | --- | --- | --- |"]
    for row in rows:
        lines.append(
            f"| {row.report_name} | {pct(row.ioc_score)} | {pct(row.ttp_score)} "
            f"| {apt_cell(row.apt)} |"
        )
    ioc_scores = [r.ioc_score for r in rows if r.ioc_score is not None]
    ttp_scores = [r.ttp_score for r in rows if r.ttp_score is not None]
    apt_rows = [r for r in rows if r.apt is not Apt.NOT_APPLICABLE]
    avg_ioc = pct(sum(ioc_scores) / len(ioc_scores)) if ioc_scores else "N/A"
    avg_ttp = pct(sum(ttp_scores) / len(ttp_scores)) if ttp_scores else "N/A"
    if apt_rows:
        present = sum(1 for r in apt_rows if r.apt is Apt.PRESENT)
        avg_apt = f"{present / len(apt_rows) * 100:.1f}"
    else:
        avg_apt = "N/A"
    lines.append(f"| Average | {avg_ioc} | {avg_ttp} | {avg_apt} |")
    return "\n".join(lines)
