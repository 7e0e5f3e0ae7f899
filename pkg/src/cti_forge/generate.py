"""Section generation: prompt templates, the backend contract, retries,
tags normalization, and usage-cost estimation.

Routing is fixed: sections 1, 4, 5, 6 go through the assistant profile,
sections 2+3 are produced by one flow call and split at the Data
Extraction heading, and section 7 consumes the merged sections 1-6.
"""
from __future__ import annotations

import re
import time
from dataclasses import dataclass, replace
from decimal import ROUND_HALF_EVEN, Decimal
from enum import Enum
from typing import Protocol

from cti_forge.attack import Catalog, TtpHit
from cti_forge.errors import CtiForgeError
from cti_forge.iocs import Ioc
from cti_forge.model import (
    GenerationMeta,
    ReportSection,
    SectionKind,
    ThreatType,
    UsageRecord,
)


class Capability(Enum):
    FETCH_URL = "fetch_url"
    TI_LOOKUP = "ti_lookup"


PLACEHOLDERS = {"intel_text", "source_url", "ioc_table", "ttp_table", "sections_1_to_6"}

_PLACEHOLDER_RE = re.compile(r"\{(\w+)\}")


class GenerateError(CtiForgeError):
    pass


class MissingTemplate(GenerateError):
    def __init__(self, kind: SectionKind, threat_type: ThreatType):
        super().__init__(f"no template registered for {kind.name}/{threat_type.value}")


class MissingContextField(GenerateError):
    def __init__(self, name: str):
        self.name = name
        super().__init__(f"context field {name!r} is not populated")


class CapabilityMissing(GenerateError):
    def __init__(self, missing: set[Capability]):
        self.missing = missing
        names = ", ".join(sorted(c.value for c in missing))
        super().__init__(f"backend lacks required capabilities: {names}")


class BackendError(GenerateError):
    pass


class MissingSectionHeading(GenerateError):
    def __init__(self, kind: SectionKind):
        self.kind = kind
        super().__init__(f"input is missing the {kind.heading!r} heading")


@dataclass(frozen=True)
class PromptTemplate:
    section: SectionKind
    threat_type: ThreatType
    template: str
    required_capabilities: frozenset[Capability] = frozenset()

    def __post_init__(self):
        used = set(_PLACEHOLDER_RE.findall(self.template))
        unknown = used - PLACEHOLDERS
        if unknown:
            raise ValueError(f"unknown placeholders: {sorted(unknown)}")
        if self.section is SectionKind.TAGS:
            if "sections_1_to_6" not in used:
                raise ValueError("Tags templates must reference {sections_1_to_6}")
        elif "sections_1_to_6" in used:
            raise ValueError(
                "only Tags templates may reference {sections_1_to_6}"
            )

    @property
    def prompt_id(self) -> str:
        return f"{self.threat_type.name.lower()}/{self.section.name.lower()}"

    def placeholders(self) -> set[str]:
        return set(_PLACEHOLDER_RE.findall(self.template))


@dataclass(frozen=True)
class GenerationContext:
    """Everything a backend may need to produce a section."""

    threat_type: ThreatType
    report_name: str = "report.md"
    intel_text: str | None = None
    source_url: str | None = None
    ioc_table: str | None = None
    ttp_table: str | None = None
    sections_1_to_6: str | None = None
    iocs: tuple[Ioc, ...] = ()
    hits: tuple[TtpHit, ...] = ()
    catalog: Catalog | None = None
    kind: SectionKind | None = None


class GenBackend(Protocol):
    """Pluggable generator: one prompt in, one section body out."""

    id: str
    capabilities: frozenset[Capability]

    def generate(
        self, prompt: str, context: GenerationContext
    ) -> tuple[str, UsageRecord]: ...


@dataclass(frozen=True)
class RetryPolicy:
    max_attempts: int = 3
    backoff: float = 1.0


class TemplateRegistry:
    def __init__(self):
        self._templates: dict[tuple[SectionKind, ThreatType], PromptTemplate] = {}

    def register(self, template: PromptTemplate) -> None:
        self._templates[(template.section, template.threat_type)] = template

    def get(self, kind: SectionKind, threat_type: ThreatType) -> PromptTemplate:
        try:
            return self._templates[(kind, threat_type)]
        except KeyError:
            raise MissingTemplate(kind, threat_type) from None


_TEMPLATE_TEXTS: dict[SectionKind, str] = {
    SectionKind.METADATA_OVERVIEW: (
        "You are writing the Metadata and Overview section of a {threat_label} "
        "threat intelligence report.\n"
        "Source: {source_url}\n"
        "Populate the report metadata (name, threat category, affected sectors, "
        "severity) and write a short strategic overview for executives.\n"
        "Begin the section with the exact heading '## Metadata and Overview'.\n"
        "Source material:\n{intel_text}"
    ),
    SectionKind.MITRE_SUMMARY: (
        "You are writing the MITRE Summary Table and Data Extraction sections of "
        "a {threat_label} threat intelligence report.\n"
        "First emit the exact heading '## MITRE Summary Table' followed by a "
        "table of the techniques and sub-techniques used, then the exact heading "
        "'## Data Extraction' followed by every indicator of compromise.\n"
        "Reference tables prepared from the source:\n"
        "{ttp_table}\n\n{ioc_table}\n\n"
        "Source material:\n{intel_text}"
    ),
    SectionKind.DATA_EXTRACTION: (
        "You are writing the Data Extraction section of a {threat_label} threat "
        "intelligence report.\n"
        "List every indicator of compromise (IP addresses, file hashes, domain "
        "names, URLs, emails, CVEs) from the source.\n"
        "Begin the section with the exact heading '## Data Extraction'.\n"
        "Indicator table prepared from the source:\n{ioc_table}"
    ),
    SectionKind.TOOLS_MALWARE: (
        "You are writing the Tools and Malware section of a {threat_label} "
        "threat intelligence report.\n"
        "Describe each tool, exploit, or malware family observed and how the "
        "threat actors use it.\n"
        "Begin the section with the exact heading '## Tools and Malware'.\n"
        "Source material:\n{intel_text}"
    ),
    SectionKind.DEFENSE_RECOMMENDATIONS: (
        "You are writing the Defense Recommendations section of a "
        "{threat_label} threat intelligence report.\n"
        "Give actionable mitigations: patches, configuration changes, detection "
        "rules, and longer-term strategies.\n"
        "Begin the section with the exact heading '## Defense Recommendations'.\n"
        "Source material:\n{intel_text}"
    ),
    SectionKind.REFERENCES: (
        "You are writing the References section of a {threat_label} threat "
        "intelligence report.\n"
        "List the sources used for this report as markdown bullet points, "
        "starting from the primary source: {source_url}\n"
        "Begin the section with the exact heading '## References'."
    ),
    SectionKind.TAGS: (
        "You are writing the Tags section of a {threat_label} threat "
        "intelligence report.\n"
        "Produce a comma-separated list of 8 to 20 lowercase keywords covering "
        "the threat type, malware and tool names, technique ids, adversaries, "
        "and affected industries found in the report below.\n"
        "Begin the section with the exact heading '## Tags'.\n"
        "Report sections 1-6:\n{sections_1_to_6}"
    ),
}


def default_registry() -> TemplateRegistry:
    """Templates for all seven sections across all four threat types."""
    registry = TemplateRegistry()
    for threat_type in ThreatType:
        label = threat_type.value.lower()
        for kind, text in _TEMPLATE_TEXTS.items():
            registry.register(
                PromptTemplate(
                    section=kind,
                    threat_type=threat_type,
                    template=text.replace("{threat_label}", label),
                )
            )
    return registry


_DEFAULT_REGISTRY: TemplateRegistry | None = None


def _registry(registry: TemplateRegistry | None) -> TemplateRegistry:
    global _DEFAULT_REGISTRY
    if registry is not None:
        return registry
    if _DEFAULT_REGISTRY is None:
        _DEFAULT_REGISTRY = default_registry()
    return _DEFAULT_REGISTRY


def _minimize_whitespace(text: str) -> str:
    # Collapse blank-line runs and trailing spaces to keep prompts small.
    lines = [line.rstrip() for line in text.split("\n")]
    out: list[str] = []
    for line in lines:
        if line == "" and out and out[-1] == "":
            continue
        out.append(line)
    return "\n".join(out).strip()


def build_prompt(
    kind: SectionKind,
    threat_type: ThreatType,
    ctx: GenerationContext,
    registry: TemplateRegistry | None = None,
) -> str:
    """Render the registered template for (kind, threat_type) against ctx."""
    template = _registry(registry).get(kind, threat_type)
    values = {
        "intel_text": ctx.intel_text,
        "source_url": ctx.source_url,
        "ioc_table": ctx.ioc_table,
        "ttp_table": ctx.ttp_table,
        "sections_1_to_6": ctx.sections_1_to_6,
    }

    def sub(m: re.Match) -> str:
        name = m.group(1)
        value = values.get(name)
        if value is None:
            raise MissingContextField(name)
        return value

    return _minimize_whitespace(_PLACEHOLDER_RE.sub(sub, template.template))


def generate_section(
    kind: SectionKind,
    ctx: GenerationContext,
    backend: GenBackend,
    retry: RetryPolicy = RetryPolicy(),
    registry: TemplateRegistry | None = None,
) -> ReportSection:
    """Generate one section through the backend, retrying on failure.

    The canonical heading is prefixed if the backend omitted it.
    """
    template = _registry(registry).get(kind, ctx.threat_type)
    missing = set(template.required_capabilities) - set(backend.capabilities)
    if missing:
        raise CapabilityMissing(missing)
    prompt = build_prompt(kind, ctx.threat_type, ctx, registry)
    call_ctx = replace(ctx, kind=kind)

    start = time.monotonic()
    last_error: Exception | None = None
    for attempt in range(1, retry.max_attempts + 1):
        try:
            body, usage = backend.generate(prompt, call_ctx)
        except Exception as exc:
            last_error = exc
            body, usage = "", None
        if body.strip():
            body = body.strip()
            if not body.startswith(kind.heading):
                body = f"{kind.heading}\n\n{body}"
            meta = GenerationMeta(
                backend_id=backend.id,
                prompt_id=template.prompt_id,
                attempts=attempt,
                usage=usage,
                wall_seconds=time.monotonic() - start,
            )
            return ReportSection(kind=kind, body=body, meta=meta)
        if attempt < retry.max_attempts and retry.backoff > 0:
            time.sleep(retry.backoff * 2 ** (attempt - 1))
    detail = f": {last_error}" if last_error else " (empty body)"
    raise BackendError(
        f"{backend.id} failed to generate {kind.name} "
        f"after {retry.max_attempts} attempts{detail}"
    ) from last_error


def split_flow_output(body: str) -> tuple[str, str]:
    """Split a combined sections-2+3 body at the Data Extraction heading."""
    marker = SectionKind.DATA_EXTRACTION.heading
    idx = body.find(marker)
    if idx == -1:
        raise BackendError(
            f"flow output is missing the {marker!r} heading and cannot be split"
        )
    return body[:idx].rstrip(), body[idx:].strip()


_TAG_ID_RE = re.compile(r"(?<![\w.])T\d{4}(?:\.\d{3})?(?!\w)(?!\.\d)")
_WORD_RE = re.compile(r"[a-z][a-z0-9-]{3,}")


def normalize_tags(raw: str, sections_1_to_6: str, threat_type: ThreatType) -> str:
    """Normalize a tag list to 8-20 deduplicated lowercase keywords.

    Guarantees coverage of the threat type, of any technique ids in the
    source sections, and of lexicon-known malware/tool names from the
    Tools and Malware section; pads with frequent content words when the
    backend returned too few tags.
    """
    from cti_forge.evalkit import split_sections
    from cti_forge.lexicon import find_malware_names

    tags: list[str] = []
    seen: set[str] = set()

    def add(tag: str) -> None:
        tag = tag.strip().lower()
        if tag and tag not in seen:
            seen.add(tag)
            tags.append(tag)

    add(threat_type.value.lower())
    for m in _TAG_ID_RE.finditer(sections_1_to_6):
        add(m.group(0))
    tools_section = split_sections(sections_1_to_6).get(SectionKind.TOOLS_MALWARE, "")
    for name in find_malware_names(tools_section):
        add(name)
    for part in raw.split(","):
        add(part)
    if len(tags) < 8:
        from cti_forge.evalkit import load_stopwords

        stop = load_stopwords()
        counts: dict[str, int] = {}
        for word in _WORD_RE.findall(sections_1_to_6.lower()):
            if word not in stop:
                counts[word] = counts.get(word, 0) + 1
        for word, _ in sorted(counts.items(), key=lambda kv: (-kv[1], kv[0])):
            if len(tags) >= 8:
                break
            add(word)
    return ", ".join(tags[:20])


def generate_tags(
    sections_1_to_6: str,
    ctx: GenerationContext,
    backend: GenBackend,
    retry: RetryPolicy = RetryPolicy(),
    registry: TemplateRegistry | None = None,
) -> ReportSection:
    """Generate the Tags section from the merged sections 1-6."""
    for kind in list(SectionKind)[:6]:
        if kind.heading not in sections_1_to_6:
            raise MissingSectionHeading(kind)
    tag_ctx = replace(ctx, sections_1_to_6=sections_1_to_6)
    section = generate_section(SectionKind.TAGS, tag_ctx, backend, retry, registry)
    raw = section.body[len(SectionKind.TAGS.heading) :].strip()
    tags = normalize_tags(raw, sections_1_to_6, ctx.threat_type)
    body = f"{SectionKind.TAGS.heading}\n\n{tags}"
    return ReportSection(kind=SectionKind.TAGS, body=body, meta=section.meta)


@dataclass(frozen=True)
class CostModel:
    """Pricing inputs for a deployment month."""

    scu_price: Decimal = Decimal("5.60")
    compute_hourly: Decimal = Decimal("0.20")
    deployments: int = 2
    hours: int = 720

    def __post_init__(self):
        if (
            self.scu_price < 0
            or self.compute_hourly < 0
            or self.deployments < 0
            or self.hours < 0
        ):
            raise ValueError("cost model fields must be nonnegative")


@dataclass(frozen=True)
class CostBreakdown:
    scu_cost: Decimal
    compute_cost: Decimal
    total: Decimal


_CENTS = Decimal("0.01")


def estimate_cost(usages: list[UsageRecord], model: CostModel) -> CostBreakdown:
    """Decimal cost arithmetic; half-even rounding to cents at the end only."""
    scu_total = sum((u.scu_estimate for u in usages), Decimal("0"))
    raw_scu = scu_total * model.scu_price
    raw_compute = model.deployments * model.compute_hourly * model.hours
    return CostBreakdown(
        scu_cost=raw_scu.quantize(_CENTS, rounding=ROUND_HALF_EVEN),
        compute_cost=raw_compute.quantize(_CENTS, rounding=ROUND_HALF_EVEN),
        total=(raw_scu + raw_compute).quantize(_CENTS, rounding=ROUND_HALF_EVEN),
    )
