"""Bundled generation backends.

RuleBackend renders sections deterministically from extraction results and
is used for tests and offline runs; the whole pipeline is bit-reproducible
with it. LlmHttpBackend talks to a chat-completions-style HTTP endpoint.
"""
from __future__ import annotations

import os
import time
from dataclasses import dataclass
from decimal import Decimal

import requests

from cti_forge.evalkit import find_adversary_groups, load_adversary_aliases
from cti_forge.generate import (
    BackendError,
    Capability,
    GenerationContext,
    normalize_tags,
)
from cti_forge.lexicon import find_industry_terms, find_malware_names
from cti_forge.model import SectionKind, UsageRecord


def _first_words(text: str, count: int) -> str:
    words = text.split()
    if len(words) <= count:
        return " ".join(words)
    return " ".join(words[:count]) + " ..."

# Tactic-keyed mitigation advice for the deterministic backend.
_TACTIC_ADVICE: dict[str, str] = {
    "Initial Access": "Harden exposure points: filter inbound mail, sandbox attachments, and patch internet-facing services.",
    "Execution": "Constrain script interpreters and enforce application allow-listing on endpoints.",
    "Persistence": "Audit autostart locations, scheduled tasks, and newly created accounts or services.",
    "Privilege Escalation": "Apply least privilege, patch known local vulnerabilities, and monitor token manipulation.",
    "Defense Evasion": "Alert on tampering with security tooling and on suspicious use of signed system binaries.",
    "Credential Access": "Enforce multi-factor authentication and monitor credential stores and LSASS access.",
    "Discovery": "Watch for unusual enumeration of accounts, shares, and network topology.",
    "Lateral Movement": "Segment networks and restrict remote-service logons between workstations.",
    "Collection": "Monitor bulk file access and staging directories for unusual archive activity.",
    "Command and Control": "Inspect egress traffic for anomalous protocols, beaconing, and newly seen domains.",
    "Exfiltration": "Apply egress filtering and data-loss-prevention controls on uploads to external services.",
    "Impact": "Maintain offline, tested backups and rehearse recovery from destructive incidents.",
    "Reconnaissance": "Minimize the organization's public footprint and monitor for scanning activity.",
    "Resource Development": "Track newly registered look-alike domains and leaked credentials tied to the organization.",
}

_BASELINE_ADVICE = [
    "Keep operating systems and third-party software patched on a defined cadence.",
    "Collect and retain endpoint and network telemetry to support detection and response.",
    "Block the indicators listed in the Data Extraction section at mail, DNS, and network controls.",
]


class RuleBackend:
    """Deterministic renderer over the pipeline's extraction results."""

    id = "rule"
    capabilities: frozenset[Capability] = frozenset()

    def __init__(self, aliases: dict[str, list[str]] | None = None):
        self._aliases = aliases if aliases is not None else load_adversary_aliases()

    def generate(
        self, prompt: str, context: GenerationContext
    ) -> tuple[str, UsageRecord]:
        start = time.monotonic()
        kind = context.kind
        if kind is None:
            raise BackendError("rule backend needs context.kind to pick a renderer")
        renderers = {
            SectionKind.METADATA_OVERVIEW: self._metadata,
            SectionKind.MITRE_SUMMARY: self._flow,
            SectionKind.DATA_EXTRACTION: self._data_extraction,
            SectionKind.TOOLS_MALWARE: self._tools,
            SectionKind.DEFENSE_RECOMMENDATIONS: self._defense,
            SectionKind.REFERENCES: self._references,
            SectionKind.TAGS: self._tags,
        }
        body = renderers[kind](context)
        usage = UsageRecord(
            prompt_chars=len(prompt),
            completion_chars=len(body),
            scu_estimate=Decimal("0"),
            wall_seconds=time.monotonic() - start,
        )
        return body, usage

    def _metadata(self, ctx: GenerationContext) -> str:
        text = ctx.intel_text or ""
        adversaries = sorted(find_adversary_groups(text, self._aliases))
        industries = find_industry_terms(text)
        overview = _first_words(text, 80)
        lines = [
            SectionKind.METADATA_OVERVIEW.heading,
            "",
            f"- **Report**: {ctx.report_name}",
            f"- **Threat Type**: {ctx.threat_type.value}",
            f"- **Source**: {ctx.source_url or 'inline text provided with the request'}",
            f"- **Associated Adversaries**: {', '.join(adversaries) if adversaries else 'none identified'}",
            f"- **Affected Industries**: {', '.join(industries) if industries else 'not stated'}",
            f"- **Indicators Extracted**: {len(ctx.iocs)}",
            f"- **Techniques Identified**: {len(ctx.hits)}",
            "",
            "### Overview",
            "",
            overview or "No source text was available for this report.",
        ]
        return "\n".join(lines)

    def _flow(self, ctx: GenerationContext) -> str:
        return f"{self._mitre_summary(ctx)}\n\n{self._data_extraction(ctx)}"

    def _mitre_summary(self, ctx: GenerationContext) -> str:
        table = ctx.ttp_table or "No techniques identified."
        return f"{SectionKind.MITRE_SUMMARY.heading}\n\n{table}"

    def _data_extraction(self, ctx: GenerationContext) -> str:
        table = ctx.ioc_table or "No indicators of compromise were extracted."
        return f"{SectionKind.DATA_EXTRACTION.heading}\n\n{table}"

    def _tools(self, ctx: GenerationContext) -> str:
        names = find_malware_names(ctx.intel_text or "")
        lines = [SectionKind.TOOLS_MALWARE.heading, ""]
        if names:
            for name in names:
                lines.append(
                    f"- **{name}**: referenced in the source material; review its"
                    f" role in this activity."
                )
        else:
            lines.append("No known tools or malware families were identified in the source.")
        return "\n".join(lines)

    def _defense(self, ctx: GenerationContext) -> str:
        tactics: list[str] = []
        if ctx.catalog is not None:
            seen = set()
            for hit in ctx.hits:
                tech = ctx.catalog.lookup(hit.technique_id)
                for tactic in tech.tactics:
                    if tactic not in seen:
                        seen.add(tactic)
                        tactics.append(tactic)
        lines = [SectionKind.DEFENSE_RECOMMENDATIONS.heading, ""]
        for tactic in sorted(tactics):
            advice = _TACTIC_ADVICE.get(tactic)
            if advice:
                lines.append(f"- **{tactic}**: {advice}")
        for advice in _BASELINE_ADVICE:
            lines.append(f"- {advice}")
        return "\n".join(lines)

    def _references(self, ctx: GenerationContext) -> str:
        source = ctx.source_url or "(inline text provided with the request)"
        return f"{SectionKind.REFERENCES.heading}\n\n- {source}"

    def _tags(self, ctx: GenerationContext) -> str:
        text = ctx.sections_1_to_6 or ""
        raw_parts: list[str] = []
        raw_parts.extend(sorted(g.lower() for g in find_adversary_groups(text, self._aliases)))
        raw_parts.extend(find_industry_terms(text))
        tags = normalize_tags(", ".join(raw_parts), text, ctx.threat_type)
        return f"{SectionKind.TAGS.heading}\n\n{tags}"


_SYSTEM_PROMPT = (
    "You are a cyber threat intelligence analyst. Write precise, factual "
    "markdown sections for CTI reports. Never invent indicators."
)

API_KEY_ENV = "CTI_FORGE_API_KEY"


@dataclass
class LlmHttpConfig:
    base_url: str
    model: str = "gpt-4o"
    temperature: float = 0.2
    timeout: float = 60.0
    # prompt_chars / 4000 * base_rate; default sized so a typical 4-prompt
    # run lands in the 3.0-3.5 SCU band.
    scu_base_rate: Decimal = Decimal("0.8")


class LlmHttpBackend:
    """Client for a chat-completions-style endpoint.

    The FetchUrl capability is satisfied by passing pre-fetched source text
    in the prompt context rather than letting the model browse.
    """

    id = "llm-http"
    capabilities: frozenset[Capability] = frozenset({Capability.FETCH_URL})

    def __init__(self, config: LlmHttpConfig, session: requests.Session | None = None):
        self.config = config
        self._session = session or requests.Session()

    def generate(
        self, prompt: str, context: GenerationContext
    ) -> tuple[str, UsageRecord]:
        start = time.monotonic()
        headers = {"Content-Type": "application/json"}
        api_key = os.environ.get(API_KEY_ENV)
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"
        payload = {
            "model": self.config.model,
            "messages": [
                {"role": "system", "content": _SYSTEM_PROMPT},
                {"role": "user", "content": prompt},
            ],
            "temperature": self.config.temperature,
        }
        url = self.config.base_url.rstrip("/") + "/chat/completions"
        try:
            resp = self._session.post(
                url, json=payload, headers=headers, timeout=self.config.timeout
            )
        except requests.RequestException as exc:
            raise BackendError(f"POST {url}: {exc}") from exc
        if resp.status_code >= 400:
            raise BackendError(f"POST {url}: HTTP {resp.status_code}")
        try:
            body = resp.json()["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise BackendError(f"malformed completion response: {exc}") from exc
        usage = UsageRecord(
            prompt_chars=len(prompt),
            completion_chars=len(body),
            scu_estimate=(
                Decimal(len(prompt)) / Decimal(4000) * self.config.scu_base_rate
            ),
            wall_seconds=time.monotonic() - start,
        )
        return body, usage
