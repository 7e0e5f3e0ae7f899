"""Acceptance suite: every primary criterion at its stated tolerance.

Each test prints one PASS/FAIL line (run with ``pytest -s`` to see them on
success). Timing budgets are asserted with ``time.perf_counter``.
"""
import inspect
import math
import random
import time
from contextlib import contextmanager
from decimal import Decimal
from pathlib import Path

import pytest

from cti_forge.attack import bundled_catalog_path, load_catalog
from cti_forge.backends import RuleBackend
from cti_forge.evalkit import (
    HashedBagEmbedding,
    TermVector,
    WeightScheme,
    compare_reports,
    cosine,
    embed_similarity,
    term_vector,
    tokenize,
)
from cti_forge.generate import CostModel, RetryPolicy, estimate_cost
from cti_forge.iocs import extract_iocs
from cti_forge.model import (
    IntelRequest,
    SECTION_HEADINGS,
    ThreatType,
    UsageRecord,
)
from cti_forge.pipeline import PipelineDeps, monitor, run
from cti_forge.store import JournalStore

from corpus_gen import build_corpus

FIXTURES = Path(__file__).parent / "fixtures"


@contextmanager
def criterion(name: str):
    try:
        yield
    except BaseException:
        print(f"FAIL: {name}")
        raise
    print(f"PASS: {name}")


def test_cosine_sentence_pair_band():
    a = (
        "According to a new report by Trustwave, cybercriminals have developed "
        "an innovative phishing method that involves the use of encrypted RPMSG "
        "attachments."
    )
    b = (
        "The article from Trustwave discusses a phishing campaign that uses "
        "Microsoft Encrypted Restricted Permission Messages to deliver phishing "
        "attacks."
    )
    with criterion("cosine sentence pair in [0.12, 0.32], < 1 ms"):
        # Hand-computed oracle for this tokenization: overlap is
        # trustwave(1*1) + encrypted(1*1) + phishing(1*2) = 4;
        # |A| = sqrt(14) distinct singles, |B| = sqrt(12 + 2^2) = 4.
        hand_oracle = 4 / (math.sqrt(14) * 4)
        best = math.inf
        for _ in range(5):
            start = time.perf_counter()
            value = cosine(
                term_vector(tokenize(a, strip_stopwords=True)),
                term_vector(tokenize(b, strip_stopwords=True)),
            )
            best = min(best, time.perf_counter() - start)
        assert 0.12 <= value <= 0.32
        assert value == pytest.approx(hand_oracle, abs=1e-12)
        assert best < 0.001


def test_cosine_formula_properties():
    with criterion(
        "cosine self-similarity/orthogonality/scaling on 1,000 random vectors, < 1 s"
    ):
        start = time.perf_counter()
        rng = random.Random(2718)
        tokens = [f"tok{i}" for i in range(40)]
        for _ in range(1000):
            support = rng.sample(tokens, rng.randint(1, 12))
            a = TermVector(
                {t: rng.uniform(0.01, 9.0) for t in support}, WeightScheme.RAW_TF
            )
            assert cosine(a, a) == pytest.approx(1.0, abs=1e-12)

            disjoint = TermVector(
                {t + "-x": rng.uniform(0.01, 9.0) for t in support},
                WeightScheme.RAW_TF,
            )
            assert cosine(a, disjoint) == 0.0

            other_support = rng.sample(tokens, rng.randint(1, 12))
            b = TermVector(
                {t: rng.uniform(0.01, 9.0) for t in other_support},
                WeightScheme.RAW_TF,
            )
            k = rng.uniform(1e-3, 1e3)
            scaled = TermVector({t: w * k for t, w in a.weights.items()}, a.scheme)
            assert cosine(scaled, b) == pytest.approx(cosine(a, b), abs=1e-12)
        assert time.perf_counter() - start < 1.0


def test_cost_arithmetic():
    with criterion("cost arithmetic: 18.48 and 288.00 exactly"):
        usage = UsageRecord(0, 0, Decimal("3.3"), 0.0)
        scu_only = estimate_cost(
            [usage], CostModel(scu_price=Decimal("5.60"), deployments=0, hours=0)
        )
        assert scu_only.scu_cost == Decimal("18.48")
        assert scu_only.total == Decimal("18.48")

        compute_only = estimate_cost(
            [],
            CostModel(
                scu_price=Decimal("5.60"),
                compute_hourly=Decimal("0.20"),
                deployments=2,
                hours=720,
            ),
        )
        assert compute_only.compute_cost == Decimal("288.00")
        assert compute_only.total == Decimal("288.00")


def test_accuracy_metric_with_planted_ground_truth(catalog):
    with criterion("accuracy 0.700/1.000 with Table-3 N/A convention, < 1 s"):
        start = time.perf_counter()
        reference_ttps = [
            "T1566", "T1059", "T1486", "T1055", "T1021",
            "T1041", "T1105", "T1027", "T1036", "T1003",
        ]
        iocs = ["10.8.7.6", "10.8.7.5", "bad-host.example", "ee" * 32]
        manual = "Indicators: {}.\nTechniques: {}.".format(
            " ".join(iocs), " ".join(reference_ttps)
        )
        ai = "Indicators: {}.\nTechniques: {}.".format(
            " ".join(iocs), " ".join(reference_ttps[:7])
        )
        row = compare_reports(ai, manual, catalog, report_name="synthetic")
        assert row.ttp_score == pytest.approx(0.700, abs=0)
        assert row.ioc_score == pytest.approx(1.000, abs=0)

        # N/A convention: class absent in both documents -> score absent.
        empty = compare_reports("prose only", "also prose only", catalog)
        assert empty.ioc_score is None
        assert empty.ttp_score is None
        from cti_forge.evalkit import render_comparison_table

        table = render_comparison_table([empty])
        assert "| N/A | N/A |" in table
        assert time.perf_counter() - start < 1.0


def test_ioc_extractor_oracle_equivalence():
    with criterion(
        "IoC oracle equivalence: 200 docs / 1,000 seeds, zero misses or extras, < 5 s"
    ):
        docs, expected = build_corpus(documents=200, indicators=1000)
        start = time.perf_counter()
        found = set()
        for doc in docs:
            found |= {(i.kind.value, i.value) for i in extract_iocs(doc)}
        elapsed = time.perf_counter() - start
        missing = expected - found
        spurious = found - expected
        assert not missing, f"{len(missing)} seeded indicators missed: {sorted(missing)[:5]}"
        assert not spurious, f"{len(spurious)} spurious extras: {sorted(spurious)[:5]}"
        assert elapsed < 5.0


def test_end_to_end_determinism(catalog, tmp_path):
    with criterion(
        "end-to-end rule-backend determinism + atomic commit + one-poll monitor, < 5 s"
    ):
        start = time.perf_counter()
        backend = RuleBackend()
        blobs = []
        stores = []
        for sub in ("left", "right"):
            store = JournalStore(tmp_path / sub, create=True)
            deps = PipelineDeps(
                store=store,
                backends={"assistant": backend, "flow": backend, "tags": backend},
                catalog=catalog,
                retry=RetryPolicy(backoff=0.0),
            )
            req = IntelRequest(
                str(FIXTURES / "campaign.html"), ThreatType.CAMPAIGN, "accept.md"
            )
            result = run(req, deps)
            assert len(result.report.sections) == 7
            blobs.append(store.read("accept.md"))
            stores.append(store)
            assert len(store.list_commits_since(None)) == 1  # atomic single commit
        assert blobs[0] == blobs[1]

        merged = blobs[0].decode("utf-8")
        positions = [merged.index(h) for h in SECTION_HEADINGS.values()]
        assert positions == sorted(positions)

        poll_start = time.perf_counter()
        ref = monitor(stores[0], "accept.md", interval=0.1, timeout=5.0)
        assert "accept.md" in ref.files
        assert time.perf_counter() - poll_start < 0.1  # first poll, no sleep
        assert time.perf_counter() - start < 5.0


def test_store_contract_equivalence(tmp_path):
    from cti_forge.store import open_store
    import test_store

    with criterion("journal and git stores pass the identical 20-case suite, < 10 s"):
        start = time.perf_counter()
        cases = [
            name
            for name, _ in inspect.getmembers(
                test_store.TestStoreContract, predicate=inspect.isfunction
            )
            if name.startswith("test_")
        ]
        assert len(cases) == 20
        for kind in ("journal", "git"):
            for i, name in enumerate(sorted(cases)):
                root = tmp_path / f"{kind}-{i}"

                def reopen(root=root, kind=kind):
                    return open_store(root, kind)

                factory = (open_store(root, kind, create=True), reopen)
                method = getattr(test_store.TestStoreContract(), name)
                params = inspect.signature(method).parameters
                kwargs = {"store_factory": factory}
                if "tmp_path" in params:
                    kwargs["tmp_path"] = tmp_path / f"extra-{kind}-{i}"
                    kwargs["tmp_path"].mkdir()
                method(**kwargs)
        assert time.perf_counter() - start < 10.0


def test_catalog_integrity():
    with criterion("bundled catalog loads clean; T1566 is Phishing, < 1 s"):
        start = time.perf_counter()
        catalog = load_catalog(bundled_catalog_path())
        for tech in catalog.techniques.values():
            if tech.parent_id:
                assert tech.parent_id in catalog.techniques
        assert catalog.lookup("T1566").name == "Phishing"
        assert time.perf_counter() - start < 1.0


def test_embedding_properties_substitute():
    # Declared substitute for the paper's proprietary-dataset figures: the
    # deterministic provider satisfies self-similarity, symmetry, and range
    # over 500 random text pairs.
    with criterion(
        "embedding self-similarity 1.0 +/- 1e-6, symmetry, range [-1, 1] x 500 pairs"
    ):
        provider = HashedBagEmbedding()
        rng = random.Random(31415)
        vocab = [f"word{i}" for i in range(300)]
        for _ in range(500):
            a = " ".join(rng.choices(vocab, k=rng.randint(1, 60)))
            b = " ".join(rng.choices(vocab, k=rng.randint(1, 60)))
            assert embed_similarity(a, a, provider) == pytest.approx(1.0, abs=1e-6)
            ab = embed_similarity(a, b, provider)
            ba = embed_similarity(b, a, provider)
            assert ab == pytest.approx(ba, abs=1e-12)
            assert -1.0 - 1e-9 <= ab <= 1.0 + 1e-9
