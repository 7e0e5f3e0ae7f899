"""The cti-forge command line: trigger runs, watch for commits, evaluate
reports, extract indicators, estimate costs.

Exit codes: 0 success, 2 validation, 3 name taken, 4 fetch, 5 backend,
6 store, 7 monitor timeout.
"""
from __future__ import annotations

import json
import sys
from decimal import Decimal, InvalidOperation
from pathlib import Path

import click

from cti_forge import __version__
from cti_forge.attack import CatalogError, bundled_catalog_path, load_catalog
from cti_forge.backends import LlmHttpBackend, LlmHttpConfig, RuleBackend
from cti_forge.config import Config, ConfigError, load_config
from cti_forge.errors import CtiForgeError
from cti_forge.evalkit import (
    compare_reports,
    load_adversary_aliases,
    render_comparison_table,
)
from cti_forge.generate import CostModel, GenerateError, estimate_cost
from cti_forge.ingest import FetchError, UnsupportedContentType
from cti_forge.iocs import extract_iocs
from cti_forge.model import (
    IntelRequest,
    SectionKind,
    UsageRecord,
    parse_threat_type,
    validate_file_name,
)
from cti_forge.pipeline import (
    MonitorTimeout,
    NameTaken,
    PipelineDeps,
    ValidationFailed,
    monitor,
    run,
    validate_request,
)
from cti_forge.store import StoreError, open_store

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_NAME_TAKEN = 3
EXIT_FETCH = 4
EXIT_BACKEND = 5
EXIT_STORE = 6
EXIT_MONITOR_TIMEOUT = 7


def _exit_code(exc: CtiForgeError) -> int:
    if isinstance(exc, NameTaken):
        return EXIT_NAME_TAKEN
    if isinstance(exc, (FetchError, UnsupportedContentType)):
        return EXIT_FETCH
    if isinstance(exc, GenerateError):
        return EXIT_BACKEND
    if isinstance(exc, StoreError):
        return EXIT_STORE
    if isinstance(exc, MonitorTimeout):
        return EXIT_MONITOR_TIMEOUT
    # ValidationFailed, CatalogError, ConfigError, model errors
    return EXIT_VALIDATION


def _fail(exc: CtiForgeError) -> None:
    click.echo(f"error: {exc}", err=True)
    sys.exit(_exit_code(exc))


def _load_config(config_path: str | None) -> Config:
    try:
        return load_config(config_path)
    except ConfigError as exc:
        _fail(exc)


def _catalog(cfg: Config, flag: str | None):
    path = Path(flag) if flag else (cfg.attack_catalog or bundled_catalog_path())
    try:
        return load_catalog(path)
    except CatalogError as exc:
        _fail(exc)


def _backends(cfg: Config, profile: str | None) -> dict:
    name = profile or cfg.backend.profile
    if name == "rule":
        aliases = (
            load_adversary_aliases(cfg.adversary_aliases)
            if cfg.adversary_aliases
            else None
        )
        backend = RuleBackend(aliases=aliases)
    elif name == "llm-http":
        if not cfg.backend.base_url:
            _fail(ConfigError("backend.base_url is required for the llm-http profile"))
        backend = LlmHttpBackend(
            LlmHttpConfig(
                base_url=cfg.backend.base_url,
                model=cfg.backend.model,
                temperature=cfg.backend.temperature,
            )
        )
    else:
        _fail(ConfigError(f"unknown backend profile {name!r}"))
    return {"assistant": backend, "flow": backend, "tags": backend}


@click.group()
@click.version_option(version=__version__, prog_name="cti-forge")
@click.option(
    "--config",
    "config_path",
    type=click.Path(exists=True, dir_okay=False),
    default=None,
    help="Path to cti-forge.toml (default: ./cti-forge.toml if present).",
)
@click.pass_context
def main(ctx: click.Context, config_path: str | None):
    """Generate, store, and evaluate CTI reports."""
    ctx.obj = {"config_path": config_path}


def _request_from_args(
    intel: str | None, threat_type: str | None, name: str | None, request_file: str | None
) -> IntelRequest:
    if request_file:
        try:
            payload = json.loads(Path(request_file).read_text(encoding="utf-8"))
        except (OSError, ValueError) as exc:
            raise ValidationFailed(f"cannot read request file: {exc}") from exc
        intel = payload.get("intelInfo", intel)
        threat_type = payload.get("threatType", threat_type)
        name = payload.get("fileName", name)
    if not intel or not threat_type or not name:
        raise ValidationFailed(
            "an intel source, a threat type, and a report name are all required"
        )
    try:
        return IntelRequest(
            intel_info=intel,
            threat_type=parse_threat_type(threat_type),
            file_name=name,
        )
    except (CtiForgeError, ValueError) as exc:
        raise ValidationFailed(str(exc)) from exc


@main.command()
@click.option("--intel", help="Intel source: URL, file path, or inline text.")
@click.option("--type", "threat_type", help="Campaign, Threat Actor, Vulnerability, or Malware/Tool.")
@click.option("--name", help="Report file name (must end in .md).")
@click.option(
    "--request-file",
    type=click.Path(exists=True, dir_okay=False),
    help='JSON trigger payload: {"intelInfo": ..., "threatType": ..., "fileName": ...}.',
)
@click.option("--backend", "profile", type=click.Choice(["rule", "llm-http"]), default=None)
@click.option("--store", "store_path", type=click.Path(), default=None)
@click.option("--store-kind", type=click.Choice(["journal", "git"]), default=None)
@click.option("--attack-catalog", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option(
    "--usage-out",
    type=click.Path(),
    default=None,
    help="Write per-call usage records as NDJSON (consumable by `cost --usage`).",
)
@click.pass_context
def generate(
    ctx: click.Context,
    intel: str | None,
    threat_type: str | None,
    name: str | None,
    request_file: str | None,
    profile: str | None,
    store_path: str | None,
    store_kind: str | None,
    attack_catalog: str | None,
    usage_out: str | None,
):
    """Run the full pipeline and commit the report to the store."""
    cfg = _load_config(ctx.obj["config_path"])
    catalog = _catalog(cfg, attack_catalog)
    backends = _backends(cfg, profile)
    try:
        store = open_store(
            store_path or cfg.store_path, store_kind or cfg.store_kind, create=True
        )
        req = _request_from_args(intel, threat_type, name, request_file)
        while True:
            try:
                validate_request(req, store)
                break
            except NameTaken as exc:
                if not sys.stdin.isatty():
                    raise
                click.echo(f"{exc}", err=True)
                new_name = click.prompt("new report name")
                req = _request_from_args(req.intel_info, req.threat_type.value, new_name, None)
        deps = PipelineDeps(
            store=store,
            backends=backends,
            catalog=catalog,
            limits=cfg.limits,
            registry=None,
        )
        result = run(req, deps, progress=lambda stage: click.echo(f"[{stage}] done", err=True))
    except CtiForgeError as exc:
        _fail(exc)
    if usage_out:
        with open(usage_out, "w", encoding="utf-8") as f:
            for usage in result.usages:
                f.write(
                    json.dumps(
                        {
                            "prompt_chars": usage.prompt_chars,
                            "completion_chars": usage.completion_chars,
                            "scu_estimate": str(usage.scu_estimate),
                            "wall_seconds": usage.wall_seconds,
                        }
                    )
                    + "\n"
                )
    click.echo(f"commit {result.commit.id}")
    click.echo(f"report {req.file_name}")


@main.command(name="check-name")
@click.argument("name")
@click.option("--store", "store_path", type=click.Path(), default=None)
@click.option("--store-kind", type=click.Choice(["journal", "git"]), default=None)
@click.pass_context
def check_name(ctx: click.Context, name: str, store_path: str | None, store_kind: str | None):
    """Check that a report name is still free in the store."""
    cfg = _load_config(ctx.obj["config_path"])
    try:
        store = open_store(
            store_path or cfg.store_path, store_kind or cfg.store_kind, create=True
        )
        validate_file_name(name)
        if store.exists(name):
            raise NameTaken(name)
    except CtiForgeError as exc:
        _fail(exc)
    click.echo(f"{name} is available")


@main.command(name="monitor")
@click.option("--name", required=True, help="Report file name to wait for.")
@click.option("--interval", type=float, default=None, help="Poll interval in seconds (default 120).")
@click.option("--timeout", type=float, default=None, help="Give up after this many seconds.")
@click.option("--store", "store_path", type=click.Path(), default=None)
@click.option("--store-kind", type=click.Choice(["journal", "git"]), default=None)
@click.pass_context
def monitor_cmd(
    ctx: click.Context,
    name: str,
    interval: float | None,
    timeout: float | None,
    store_path: str | None,
    store_kind: str | None,
):
    """Poll the store until a commit containing the report appears."""
    cfg = _load_config(ctx.obj["config_path"])
    try:
        store = open_store(
            store_path or cfg.store_path, store_kind or cfg.store_kind, create=True
        )
        commit = monitor(
            store,
            name,
            interval=interval if interval is not None else cfg.monitor.interval,
            timeout=timeout if timeout is not None else cfg.monitor.timeout,
        )
    except CtiForgeError as exc:
        _fail(exc)
    click.echo(f"commit {commit.id}")


_SCOPE_NAMES = {
    "1": SectionKind.METADATA_OVERVIEW,
    "2": SectionKind.MITRE_SUMMARY,
    "3": SectionKind.DATA_EXTRACTION,
    "4": SectionKind.TOOLS_MALWARE,
    "5": SectionKind.DEFENSE_RECOMMENDATIONS,
    "6": SectionKind.REFERENCES,
    "7": SectionKind.TAGS,
}


@main.command()
@click.option("--ai", "ai_paths", multiple=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--manual", "manual_paths", multiple=True, type=click.Path(exists=True, dir_okay=False))
@click.option(
    "--manifest",
    type=click.Path(exists=True, dir_okay=False),
    help="File of tab-separated `ai<TAB>manual` path pairs.",
)
@click.option("--scope", default=None, help="Comma-separated section ordinals to compare, e.g. 1,2.")
@click.option("--ndjson", "ndjson_path", type=click.Path(), default=None, help="Also write rows as NDJSON.")
@click.option("--attack-catalog", type=click.Path(exists=True, dir_okay=False), default=None)
@click.pass_context
def evaluate(
    ctx: click.Context,
    ai_paths: tuple[str, ...],
    manual_paths: tuple[str, ...],
    manifest: str | None,
    scope: str | None,
    ndjson_path: str | None,
    attack_catalog: str | None,
):
    """Compare AI-generated reports against manual references."""
    cfg = _load_config(ctx.obj["config_path"])
    catalog = _catalog(cfg, attack_catalog)
    pairs: list[tuple[Path, Path]] = []
    if manifest:
        for line in Path(manifest).read_text(encoding="utf-8").splitlines():
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                click.echo(f"error: bad manifest line: {line!r}", err=True)
                sys.exit(EXIT_VALIDATION)
            pairs.append((Path(parts[0]), Path(parts[1])))
    pairs.extend(
        (Path(a), Path(m)) for a, m in zip(ai_paths, manual_paths)
    )
    if not pairs:
        click.echo("error: no report pairs given (use --ai/--manual or --manifest)", err=True)
        sys.exit(EXIT_VALIDATION)
    section_scope = None
    if scope:
        try:
            section_scope = [_SCOPE_NAMES[s.strip()] for s in scope.split(",")]
        except KeyError as exc:
            click.echo(f"error: unknown section ordinal {exc}", err=True)
            sys.exit(EXIT_VALIDATION)
    aliases = (
        load_adversary_aliases(cfg.adversary_aliases) if cfg.adversary_aliases else None
    )
    rows = []
    try:
        for ai_path, manual_path in pairs:
            rows.append(
                compare_reports(
                    ai_path.read_text(encoding="utf-8"),
                    manual_path.read_text(encoding="utf-8"),
                    catalog,
                    report_name=ai_path.stem,
                    aliases=aliases,
                    scope=section_scope,
                )
            )
    except (OSError, CtiForgeError) as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(EXIT_VALIDATION)
    click.echo(render_comparison_table(rows))
    if ndjson_path:
        with open(ndjson_path, "w", encoding="utf-8") as f:
            for row in rows:
                f.write(row.to_json() + "\n")


@main.command(name="extract-iocs")
@click.argument("source", type=click.Path(exists=True, dir_okay=False), required=False)
def extract_iocs_cmd(source: str | None):
    """Extract indicators from a file (or stdin) as TSV records."""
    if source:
        text = Path(source).read_text(encoding="utf-8")
    else:
        text = sys.stdin.read()
    for ioc in extract_iocs(text):
        flag = "true" if ioc.defanged else "false"
        click.echo(f"{ioc.kind.value}\t{ioc.value}\t{flag}")


@main.command()
@click.option("--usage", "usage_path", type=click.Path(exists=True, dir_okay=False), default=None,
              help="NDJSON stream of usage records.")
@click.option("--scu", "scu_total", default=None, help="Total SCU consumption, e.g. 3.3.")
@click.option("--scu-price", default=None, help="Override price per SCU.")
@click.option("--compute-hourly", default=None, help="Override hourly deployment price.")
@click.option("--deployments", type=int, default=None)
@click.option("--hours", type=int, default=None)
@click.pass_context
def cost(
    ctx: click.Context,
    usage_path: str | None,
    scu_total: str | None,
    scu_price: str | None,
    compute_hourly: str | None,
    deployments: int | None,
    hours: int | None,
):
    """Estimate generation cost from usage records and the cost model."""
    cfg = _load_config(ctx.obj["config_path"])
    usages: list[UsageRecord] = []
    try:
        if usage_path:
            for line in Path(usage_path).read_text(encoding="utf-8").splitlines():
                if not line.strip():
                    continue
                rec = json.loads(line)
                usages.append(
                    UsageRecord(
                        prompt_chars=int(rec.get("prompt_chars", 0)),
                        completion_chars=int(rec.get("completion_chars", 0)),
                        scu_estimate=Decimal(str(rec.get("scu_estimate", "0"))),
                        wall_seconds=float(rec.get("wall_seconds", 0.0)),
                    )
                )
        if scu_total is not None:
            usages.append(
                UsageRecord(
                    prompt_chars=0,
                    completion_chars=0,
                    scu_estimate=Decimal(scu_total),
                    wall_seconds=0.0,
                )
            )
        model = CostModel(
            scu_price=Decimal(scu_price) if scu_price else cfg.cost.scu_price,
            compute_hourly=(
                Decimal(compute_hourly) if compute_hourly else cfg.cost.compute_hourly
            ),
            deployments=deployments if deployments is not None else cfg.cost.deployments,
            hours=hours if hours is not None else cfg.cost.hours,
        )
    except (ValueError, InvalidOperation) as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(EXIT_VALIDATION)
    breakdown = estimate_cost(usages, model)
    click.echo(f"scu_cost {breakdown.scu_cost}")
    click.echo(f"compute_cost {breakdown.compute_cost}")
    click.echo(f"total {breakdown.total}")


if __name__ == "__main__":
    main()
