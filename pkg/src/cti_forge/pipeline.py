"""End-to-end run orchestration: validate, ingest, extract, generate,
merge, commit, and monitor.

Section generation is fanned out concurrently (sections 1, 4, 5, 6 plus
the 2+3 flow); the Tags section runs strictly after sections 1-6. Nothing
is committed unless all seven sections succeeded.
"""
from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import Callable

from cti_forge.attack import Catalog, extract_ttp_ids, render_mitre_table
from cti_forge.errors import CtiForgeError
from cti_forge.generate import (
    GenBackend,
    GenerationContext,
    RetryPolicy,
    TemplateRegistry,
    generate_section,
    generate_tags,
    split_flow_output,
)
from cti_forge.ingest import FetchLimits, extract_text, fetch_source
from cti_forge.iocs import Ioc, extract_iocs
from cti_forge.model import (
    CtiReport,
    IntelRequest,
    ReportSection,
    SectionKind,
    UsageRecord,
    validate_file_name,
)
from cti_forge.store import CommitRef, ReportStore

ASSISTANT_SECTIONS = (
    SectionKind.METADATA_OVERVIEW,
    SectionKind.TOOLS_MALWARE,
    SectionKind.DEFENSE_RECOMMENDATIONS,
    SectionKind.REFERENCES,
)

COMMIT_MESSAGE_TEMPLATE = "add CTI report: {file_name}"

DEFAULT_MONITOR_INTERVAL = 120.0


class ValidationFailed(CtiForgeError):
    pass


class NameTaken(CtiForgeError):
    def __init__(self, file_name: str):
        self.file_name = file_name
        super().__init__(f"a report named {file_name!r} already exists")


class DuplicateSection(CtiForgeError):
    def __init__(self, kind: SectionKind):
        self.kind = kind
        super().__init__(f"duplicate section: {kind.name}")


class MonitorTimeout(CtiForgeError):
    pass


@dataclass
class PipelineDeps:
    """Everything a run needs, wired up by the caller."""

    store: ReportStore
    backends: dict[str, GenBackend]  # "assistant" | "flow" | "tags"
    catalog: Catalog
    limits: FetchLimits = field(default_factory=FetchLimits)
    retry: RetryPolicy = field(default_factory=RetryPolicy)
    registry: TemplateRegistry | None = None


@dataclass(frozen=True)
class RunResult:
    report: CtiReport
    commit: CommitRef
    usages: list[UsageRecord]
    timings: dict[str, float]


def validate_request(req: IntelRequest, store: ReportStore) -> IntelRequest:
    """Core-model validation plus the store name-uniqueness check."""
    try:
        validate_file_name(req.file_name)
    except CtiForgeError as exc:
        raise ValidationFailed(str(exc)) from exc
    if store.exists(req.file_name):
        raise NameTaken(req.file_name)
    return req


def report_title(file_name: str) -> str:
    stem = file_name[:-3] if file_name.endswith(".md") else file_name
    return stem.replace("-", " ").replace("_", " ").title()


def merge_sections(
    sections: list[ReportSection], title: str, generated_at: datetime
) -> str:
    """Assemble the final document: title header, then bodies in ordinal
    order separated by single blank lines, one trailing newline.

    ``generated_at`` is part of the merge contract but is not rendered:
    the merged document must be byte-identical across reruns.
    """
    seen: set[SectionKind] = set()
    for section in sections:
        if section.kind in seen:
            raise DuplicateSection(section.kind)
        seen.add(section.kind)
    ordered = sorted(sections, key=lambda s: s.kind.ordinal)
    bodies = "\n\n".join(s.body.strip() for s in ordered)
    return f"# {title}\n\n{bodies}\n"


def render_ioc_table(iocs: list[Ioc]) -> str:
    """Markdown table of extracted indicators for the report body."""
    if not iocs:
        return "No indicators of compromise were extracted."
    lines = [
        "| Kind | Value | Defanged in Source |",
        "| --- | --- | --- |",
    ]
    for ioc in iocs:
        flag = "yes" if ioc.defanged else "no"
        value = ioc.value.replace("|", "\\|")
        lines.append(f"| {ioc.kind.value} | {value} | {flag} |")
    return "\n".join(lines)


def run(
    req: IntelRequest,
    deps: PipelineDeps,
    progress: Callable[[str], None] | None = None,
) -> RunResult:
    """Execute a full generation run and commit the merged report.

    Any stage failure aborts the run before the single commit at the end,
    so a failing run never changes the store.
    """

    def note(stage: str) -> None:
        if progress is not None:
            progress(stage)

    timings: dict[str, float] = {}

    def timed(stage: str):
        class _Timer:
            def __enter__(self_inner):
                self_inner.start = time.monotonic()

            def __exit__(self_inner, exc_type, exc, tb):
                timings[stage] = time.monotonic() - self_inner.start
                note(stage if exc_type is None else f"{stage} failed")

        return _Timer()

    with timed("validate"):
        validate_request(req, deps.store)

    with timed("ingest"):
        doc = fetch_source(req.intel_info, deps.limits)
        intel_text = extract_text(doc)

    with timed("extract"):
        iocs = extract_iocs(intel_text)
        hits = extract_ttp_ids(intel_text, deps.catalog)

    source_url = req.intel_info.strip() if req.is_url else None
    if source_url is None and doc.content_type != "text/plain":
        source_url = doc.origin
    ctx = GenerationContext(
        threat_type=req.threat_type,
        report_name=req.file_name,
        intel_text=intel_text,
        source_url=source_url or "inline text provided with the request",
        ioc_table=render_ioc_table(iocs),
        ttp_table=render_mitre_table(hits, deps.catalog),
        iocs=tuple(iocs),
        hits=tuple(hits),
        catalog=deps.catalog,
    )

    usages: list[UsageRecord] = []
    with timed("generate"):
        with ThreadPoolExecutor(max_workers=5) as pool:
            assistant_futures = {
                kind: pool.submit(
                    generate_section,
                    kind,
                    ctx,
                    deps.backends["assistant"],
                    deps.retry,
                    deps.registry,
                )
                for kind in ASSISTANT_SECTIONS
            }
            flow_future = pool.submit(
                generate_section,
                SectionKind.MITRE_SUMMARY,
                ctx,
                deps.backends["flow"],
                deps.retry,
                deps.registry,
            )
            sections: dict[SectionKind, ReportSection] = {
                kind: future.result() for kind, future in assistant_futures.items()
            }
            flow_section = flow_future.result()
        mitre_body, data_body = split_flow_output(flow_section.body)
        sections[SectionKind.MITRE_SUMMARY] = ReportSection(
            SectionKind.MITRE_SUMMARY, mitre_body, flow_section.meta
        )
        sections[SectionKind.DATA_EXTRACTION] = ReportSection(
            SectionKind.DATA_EXTRACTION, data_body, flow_section.meta
        )
        for kind in ASSISTANT_SECTIONS:
            usages.append(sections[kind].meta.usage)
        usages.append(flow_section.meta.usage)

    with timed("tags"):
        first_six = [sections[k] for k in list(SectionKind)[:6]]
        merged_1_6 = "\n\n".join(s.body for s in first_six)
        tags_section = generate_tags(
            merged_1_6, ctx, deps.backends["tags"], deps.retry, deps.registry
        )
        sections[SectionKind.TAGS] = tags_section
        usages.append(tags_section.meta.usage)

    with timed("merge"):
        ordered = [sections[k] for k in SectionKind]
        merged = merge_sections(
            ordered, report_title(req.file_name), datetime.now(timezone.utc)
        )
        report = CtiReport(
            file_name=req.file_name,
            threat_type=req.threat_type,
            sections=tuple(ordered),
            merged=merged,
        )

    with timed("commit"):
        commit = deps.store.put(
            req.file_name,
            merged.encode("utf-8"),
            COMMIT_MESSAGE_TEMPLATE.format(file_name=req.file_name),
        )

    return RunResult(report=report, commit=commit, usages=usages, timings=timings)


def monitor(
    store: ReportStore,
    file_name: str,
    interval: float = DEFAULT_MONITOR_INTERVAL,
    timeout: float = 3600.0,
    since: CommitRef | None = None,
) -> CommitRef:
    """Poll the store until a commit touching ``file_name`` appears.

    The first poll happens immediately; ``since`` bounds how far back to
    look (all history when None).
    """
    if interval <= 0:
        raise ValueError("interval must be positive")
    deadline = time.monotonic() + timeout
    while True:
        for commit in store.list_commits_since(since):
            if file_name in commit.files:
                return commit
        remaining = deadline - time.monotonic()
        if remaining <= 0:
            raise MonitorTimeout(
                f"no commit for {file_name!r} within {timeout} seconds"
            )
        time.sleep(min(interval, remaining))
