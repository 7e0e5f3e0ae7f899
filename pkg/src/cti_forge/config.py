"""Operator configuration: a single TOML file, overridable per CLI flag."""
from __future__ import annotations

import sys
from dataclasses import dataclass, field
from decimal import Decimal, InvalidOperation
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from cti_forge.errors import CtiForgeError
from cti_forge.generate import CostModel
from cti_forge.ingest import FetchLimits

DEFAULT_CONFIG_NAME = "cti-forge.toml"


class ConfigError(CtiForgeError):
    pass


@dataclass
class BackendConfig:
    profile: str = "rule"  # "rule" | "llm-http"
    base_url: str = ""
    model: str = "gpt-4o"
    temperature: float = 0.2


@dataclass
class MonitorConfig:
    interval: float = 120.0
    timeout: float = 3600.0


@dataclass
class Config:
    store_path: Path = Path("cti-reports")
    store_kind: str = "journal"  # "journal" | "git"
    attack_catalog: Path | None = None  # None -> bundled fixture
    stopwords: Path | None = None
    adversary_aliases: Path | None = None
    backend: BackendConfig = field(default_factory=BackendConfig)
    cost: CostModel = field(default_factory=CostModel)
    monitor: MonitorConfig = field(default_factory=MonitorConfig)
    limits: FetchLimits = field(default_factory=FetchLimits)


def _decimal(value, name: str) -> Decimal:
    try:
        return Decimal(str(value))
    except InvalidOperation as exc:
        raise ConfigError(f"{name} is not a number: {value!r}") from exc


def _existing_path(value: str, name: str) -> Path:
    path = Path(value)
    if not path.exists():
        raise ConfigError(f"{name} path does not exist: {path}")
    return path


def _require_nonnegative(value, name: str) -> None:
    if value < 0:
        raise ConfigError(f"{name} must be nonnegative, got {value}")


def load_config(path: str | Path | None = None) -> Config:
    """Load configuration from a TOML file; all keys are optional.

    With path=None, ``cti-forge.toml`` in the working directory is used if
    present, else built-in defaults.
    """
    cfg = Config()
    if path is None:
        candidate = Path(DEFAULT_CONFIG_NAME)
        if not candidate.is_file():
            return cfg
        path = candidate
    path = Path(path)
    try:
        data = tomllib.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"malformed config {path}: {exc}") from exc

    if "store_path" in data:
        cfg.store_path = Path(data["store_path"])
    if "store_kind" in data:
        kind = data["store_kind"]
        if kind not in ("journal", "git"):
            raise ConfigError(f"store_kind must be 'journal' or 'git', got {kind!r}")
        cfg.store_kind = kind
    if "attack_catalog" in data:
        cfg.attack_catalog = _existing_path(data["attack_catalog"], "attack_catalog")
    if "stopwords" in data:
        cfg.stopwords = _existing_path(data["stopwords"], "stopwords")
    if "adversary_aliases" in data:
        cfg.adversary_aliases = _existing_path(
            data["adversary_aliases"], "adversary_aliases"
        )

    backend = data.get("backend", {})
    cfg.backend = BackendConfig(
        profile=backend.get("profile", cfg.backend.profile),
        base_url=backend.get("base_url", cfg.backend.base_url),
        model=backend.get("model", cfg.backend.model),
        temperature=float(backend.get("temperature", cfg.backend.temperature)),
    )
    if cfg.backend.profile not in ("rule", "llm-http"):
        raise ConfigError(
            f"backend.profile must be 'rule' or 'llm-http', got {cfg.backend.profile!r}"
        )
    _require_nonnegative(cfg.backend.temperature, "backend.temperature")

    cost = data.get("cost", {})
    try:
        cfg.cost = CostModel(
            scu_price=_decimal(cost.get("scu_price", cfg.cost.scu_price), "cost.scu_price"),
            compute_hourly=_decimal(
                cost.get("compute_hourly", cfg.cost.compute_hourly),
                "cost.compute_hourly",
            ),
            deployments=int(cost.get("deployments", cfg.cost.deployments)),
            hours=int(cost.get("hours", cfg.cost.hours)),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc

    mon = data.get("monitor", {})
    cfg.monitor = MonitorConfig(
        interval=float(mon.get("interval", cfg.monitor.interval)),
        timeout=float(mon.get("timeout", cfg.monitor.timeout)),
    )
    _require_nonnegative(cfg.monitor.interval, "monitor.interval")
    _require_nonnegative(cfg.monitor.timeout, "monitor.timeout")

    limits = data.get("limits", {})
    cfg.limits = FetchLimits(
        timeout=float(limits.get("timeout", cfg.limits.timeout)),
        max_bytes=int(limits.get("max_bytes", cfg.limits.max_bytes)),
        max_redirects=int(limits.get("max_redirects", cfg.limits.max_redirects)),
    )
    _require_nonnegative(cfg.limits.timeout, "limits.timeout")
    _require_nonnegative(cfg.limits.max_bytes, "limits.max_bytes")
    _require_nonnegative(cfg.limits.max_redirects, "limits.max_redirects")
    return cfg
