import random

import pytest

from cti_forge.iocs import (
    Ioc,
    IocKind,
    NotAHashLength,
    classify_hash,
    extract_iocs,
    refang,
)

from corpus_gen import build_corpus, make_indicator


class TestRefang:
    def test_scheme_and_bracket_dot(self):
        assert refang("hxxp://evil[.]com") == "http://evil.com"

    def test_at_and_dot_words(self):
        assert refang("admin[at]evil[dot]com") == "admin@evil.com"

    def test_identity_on_clean_text(self):
        assert refang("no indicators here") == "no indicators here"

    def test_full_table(self):
        assert refang("hxxps://a[.]b(.)c[dot]d[:]8080") == "https://a.b.c.d:8080"

    def test_scheme_case_insensitive(self):
        assert refang("HXXP://X") == "http://X"
        assert refang("HxXpS://X") == "https://X"


class TestClassifyHash:
    def test_lengths(self):
        assert classify_hash("a" * 32) is IocKind.MD5
        assert classify_hash("b" * 40) is IocKind.SHA1
        assert classify_hash("c" * 64) is IocKind.SHA256

    def test_other_lengths_rejected(self):
        with pytest.raises(NotAHashLength):
            classify_hash("abcdef1234")


class TestExtractIocs:
    def test_spec_example(self):
        got = extract_iocs("Beacons to 192.168.10.5 via hxxp://evil[.]com/a.php")
        assert [(i.kind, i.value) for i in got] == [
            (IocKind.DOMAIN, "evil.com"),
            (IocKind.IPV4, "192.168.10.5"),
            (IocKind.URL, "http://evil.com/a.php"),
        ]
        ipv4 = got[1]
        assert ipv4.is_private
        url = got[2]
        assert url.defanged
        assert url.raw == "hxxp://evil[.]com/a.php"

    def test_bare_md5(self):
        got = extract_iocs("d41d8cd98f00b204e9800998ecf8427e")
        assert [(i.kind, i.value) for i in got] == [
            (IocKind.MD5, "d41d8cd98f00b204e9800998ecf8427e")
        ]

    def test_cve_trailing_period_excluded(self):
        got = extract_iocs("Exploits CVE-2023-23397.")
        assert [(i.kind, i.value) for i in got] == [(IocKind.CVE, "CVE-2023-23397")]
        assert got[0].raw == "CVE-2023-23397"

    def test_email_not_double_counted_as_domain(self):
        got = extract_iocs("contact admin@evil.com today")
        assert [(i.kind, i.value) for i in got] == [(IocKind.EMAIL, "admin@evil.com")]

    def test_defanged_email(self):
        got = extract_iocs("contact admin[at]evil[dot]com today")
        assert [(i.kind, i.value) for i in got] == [(IocKind.EMAIL, "admin@evil.com")]
        assert got[0].defanged

    def test_ipv6(self):
        got = extract_iocs("traffic to 2001:db8:dead::beef observed")
        assert [(i.kind, i.value) for i in got] == [(IocKind.IPV6, "2001:db8:dead::beef")]

    def test_version_strings_not_domains(self):
        assert extract_iocs("upgrade to version 3.2.1 now") == []

    def test_loopback_is_private(self):
        got = extract_iocs("connects to 127.0.0.1 locally")
        assert got[0].is_private

    def test_hash_lengths_classified(self):
        text = " ".join(["a1" * 16, "b2" * 20, "c3" * 32])
        kinds = {i.kind for i in extract_iocs(text)}
        assert kinds == {IocKind.MD5, IocKind.SHA1, IocKind.SHA256}

    def test_no_matches(self):
        assert extract_iocs("") == []
        assert extract_iocs("nothing of interest") == []

    def test_spans_reference_original_text(self):
        text = "payload at hxxps://bad[.]example/x ok"
        got = extract_iocs(text)
        for ioc in got:
            assert text[ioc.span[0] : ioc.span[1]] == ioc.raw

    def test_spans_do_not_overlap_except_url_hosts(self):
        text = (
            "hxxp://one[.]example/a mail to x@two.example and 10.0.0.1 plus "
            "deadbeefdeadbeefdeadbeefdeadbeef on three.example"
        )
        got = extract_iocs(text)
        urls = {i.value: i.span for i in got if i.kind is IocKind.URL}
        for a in got:
            for b in got:
                if a is b or a.span[0] >= b.span[1] or b.span[0] >= a.span[1]:
                    continue
                # The only sanctioned overlap: a URL and its derived host.
                pair = sorted([a, b], key=lambda i: i.span[1] - i.span[0])
                host, url = pair
                assert url.kind is IocKind.URL
                assert url.span[0] <= host.span[0] and host.span[1] <= url.span[1]

    def test_determinism(self):
        docs, _ = build_corpus(documents=5, indicators=25)
        for doc in docs:
            assert extract_iocs(doc) == extract_iocs(doc)

    def test_defang_invariance(self):
        # Refanging first never changes what is found, only how.
        docs, _ = build_corpus(documents=10, indicators=50)
        for doc in docs:
            plain = {(i.kind, i.value) for i in extract_iocs(refang(doc))}
            fanged = {(i.kind, i.value) for i in extract_iocs(doc)}
            assert plain == fanged

    def test_dedup_keeps_first_span(self):
        got = extract_iocs("see 10.1.2.3 then again 10.1.2.3 later")
        assert len(got) == 1
        assert got[0].span[0] == 4

    def test_sorted_by_kind_then_value(self):
        docs, _ = build_corpus(documents=3, indicators=27)
        for doc in docs:
            got = extract_iocs(doc)
            keys = [(i.kind.value, i.value) for i in got]
            assert keys == sorted(keys)

    def test_oracle_equivalence_small(self):
        # Seeded corpus is the ground truth: no misses, no extras.
        docs, expected = build_corpus(documents=20, indicators=100)
        found = set()
        for doc in docs:
            found |= {(i.kind.value, i.value) for i in extract_iocs(doc)}
        assert found == expected

    def test_every_seed_kind_appears(self):
        rng = random.Random(5)
        kinds = {make_indicator(i, rng)[0] for i in range(9)}
        assert len(kinds) == 9
