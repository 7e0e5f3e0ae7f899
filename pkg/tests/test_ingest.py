import threading
import time
from http.server import BaseHTTPRequestHandler, HTTPServer
from pathlib import Path

import pytest

from cti_forge.ingest import (
    FetchError,
    FetchLimits,
    RawDocument,
    Timeout,
    TooLarge,
    UnsupportedContentType,
    classify_source,
    extract_text,
    fetch_source,
)

FIXTURES = Path(__file__).parent / "fixtures"


def _doc(data: bytes, content_type: str) -> RawDocument:
    from datetime import datetime, timezone

    return RawDocument("test", content_type, data, datetime.now(timezone.utc))


class _Handler(BaseHTTPRequestHandler):
    seen_headers = {}

    def do_GET(self):
        _Handler.seen_headers = dict(self.headers)
        if self.path == "/page":
            body = b"<html><body><p>hello threat</p></body></html>"
            self.send_response(200)
            self.send_header("Content-Type", "text/html; charset=utf-8")
            self.end_headers()
            self.wfile.write(body)
        elif self.path == "/slow":
            time.sleep(1.0)
            self.send_response(200)
            self.end_headers()
        elif self.path == "/big":
            self.send_response(200)
            self.send_header("Content-Type", "text/plain")
            self.end_headers()
            self.wfile.write(b"x" * 4096)
        elif self.path == "/missing":
            self.send_response(404)
            self.end_headers()
        elif self.path.startswith("/loop"):
            self.send_response(302)
            self.send_header("Location", "/loop")
            self.end_headers()
        else:
            self.send_response(204)
            self.end_headers()

    def log_message(self, *args):
        pass


@pytest.fixture(scope="module")
def http_server():
    server = HTTPServer(("127.0.0.1", 0), _Handler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    yield f"http://127.0.0.1:{server.server_port}"
    server.shutdown()


class TestClassifySource:
    def test_url(self):
        assert classify_source("https://example.org/a") == "url"

    def test_file(self, tmp_path):
        path = tmp_path / "intel.txt"
        path.write_text("x")
        assert classify_source(str(path)) == "file"

    def test_inline(self):
        assert classify_source("APT used T1566 against targets.") == "text"


class TestFetchSource:
    def test_inline_passthrough(self):
        doc = fetch_source("APT used T1566.")
        assert doc.content_type == "text/plain"
        assert doc.data == b"APT used T1566."

    def test_local_html_file(self, tmp_path):
        path = tmp_path / "post.html"
        path.write_bytes(b"<p>x</p>")
        doc = fetch_source(str(path))
        assert doc.content_type == "text/html"
        assert doc.data == b"<p>x</p>"

    def test_missing_file(self, tmp_path):
        with pytest.raises(FetchError):
            fetch_source(str(tmp_path / "absent.html"))

    def test_file_too_large(self, tmp_path):
        path = tmp_path / "big.txt"
        path.write_bytes(b"y" * 2048)
        with pytest.raises(TooLarge):
            fetch_source(str(path), FetchLimits(max_bytes=1024))

    def test_http_get(self, http_server):
        doc = fetch_source(f"{http_server}/page")
        assert doc.content_type == "text/html"
        assert b"hello threat" in doc.data
        assert _Handler.seen_headers.get("User-Agent", "").startswith("cti-forge/")

    def test_http_error_status(self, http_server):
        with pytest.raises(FetchError):
            fetch_source(f"{http_server}/missing")

    def test_http_too_large(self, http_server):
        with pytest.raises(TooLarge):
            fetch_source(f"{http_server}/big", FetchLimits(max_bytes=1024))

    def test_http_timeout(self, http_server):
        with pytest.raises(Timeout):
            fetch_source(f"{http_server}/slow", FetchLimits(timeout=0.1))

    def test_redirect_limit(self, http_server):
        with pytest.raises(FetchError):
            fetch_source(f"{http_server}/loop", FetchLimits(max_redirects=3))

    def test_connection_refused(self):
        # Port 9 is discard; nothing listens on it in the test environment.
        with pytest.raises(FetchError):
            fetch_source("http://127.0.0.1:9/", FetchLimits(timeout=0.5))


class TestExtractText:
    def test_strips_markup_keeps_defanged_ioc(self):
        doc = _doc(b"<p>Uses <b>hxxp://evil[.]com</b></p>", "text/html")
        assert extract_text(doc) == "Uses hxxp://evil[.]com"

    def test_snippet_golden_file(self):
        # Expected text was hand-stripped from the snippet fixture.
        html = (FIXTURES / "snippet.html").read_bytes()
        expected = (FIXTURES / "snippet.txt").read_text().strip()
        assert extract_text(_doc(html, "text/html")) == expected

    def test_plain_text_identity(self):
        text = "line one\nline two"
        assert extract_text(_doc(text.encode(), "text/plain")) == text

    def test_plain_whitespace_collapse(self):
        got = extract_text(_doc(b"a   b\t c\n\n\nd  ", "text/plain"))
        assert got == "a b c\nd"

    def test_pdf_rejected(self):
        with pytest.raises(UnsupportedContentType):
            extract_text(_doc(b"%PDF-1.4 ...", "application/pdf"))

    def test_boilerplate_subtrees_dropped(self, campaign_html):
        text = extract_text(_doc(campaign_html.read_bytes(), "text/html"))
        assert "ignore me" not in text
        assert "color:" not in text
        assert "Home" not in text  # nav
        assert "All rights reserved" not in text  # footer
        assert "Emotet" in text
        assert "hxxp://malcdn[.]example/payload.bin" in text

    def test_idempotent(self, campaign_html):
        first = extract_text(_doc(campaign_html.read_bytes(), "text/html"))
        again = extract_text(_doc(first.encode(), "text/plain"))
        assert first == again

    def test_no_surviving_tags(self, campaign_html):
        import re

        text = extract_text(_doc(campaign_html.read_bytes(), "text/html"))
        assert not re.search(r"<[A-Za-z]", text)

    def test_entity_decoding(self):
        doc = _doc(b"<p>a &amp; b &lt;c&gt; &quot;d&quot; &#65;&nbsp;end</p>", "text/html")
        assert extract_text(doc) == 'a & b <c> "d" A end'

    def test_unknown_entity_preserved(self):
        doc = _doc(b"<p>x &copy; y</p>", "text/html")
        assert extract_text(doc) == "x &copy; y"
