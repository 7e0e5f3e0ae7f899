import pytest

from cti_forge.attack import bundled_catalog_path, load_catalog
from cti_forge.backends import RuleBackend
from cti_forge.generate import RetryPolicy
from cti_forge.ingest import FetchLimits
from cti_forge.pipeline import PipelineDeps
from cti_forge.store import JournalStore

from pathlib import Path

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture(scope="session")
def catalog():
    return load_catalog(bundled_catalog_path())


@pytest.fixture
def rule_backend():
    return RuleBackend()


@pytest.fixture
def campaign_html() -> Path:
    return FIXTURES / "campaign.html"


@pytest.fixture
def journal_store(tmp_path):
    return JournalStore(tmp_path / "store", create=True)


@pytest.fixture
def rule_deps(catalog, rule_backend, journal_store):
    """Pipeline dependencies wired for fast offline runs."""
    backends = {"assistant": rule_backend, "flow": rule_backend, "tags": rule_backend}
    return PipelineDeps(
        store=journal_store,
        backends=backends,
        catalog=catalog,
        limits=FetchLimits(),
        retry=RetryPolicy(max_attempts=3, backoff=0.0),
    )
