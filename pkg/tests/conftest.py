import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import pytest


class RouteServer:
    """Loopback server answering from a mutable ``{path: (status, headers, body)}`` table."""

    def __init__(self, host="127.0.0.1"):
        self.routes = {}
        self.hits = []
        table = self

        class Handler(BaseHTTPRequestHandler):
            def log_message(self, *args):
                pass

            def do_GET(self):
                table.hits.append(self.path)
                status, headers, body = table.routes.get(self.path, (404, {}, "missing"))
                data = body.encode("utf-8") if isinstance(body, str) else body
                self.send_response(status)
                headers = {"Content-Type": "text/html; charset=utf-8", **headers}
                for k, v in headers.items():
                    for item in (v if isinstance(v, list) else [v]):
                        self.send_header(k, item)
                self.send_header("Content-Length", str(len(data)))
                self.end_headers()
                self.wfile.write(data)

        self.httpd = ThreadingHTTPServer((host, 0), Handler)
        self.httpd.daemon_threads = True
        self.thread = threading.Thread(target=self.httpd.serve_forever, args=(0.05,), daemon=True)
        self.thread.start()

    @property
    def origin(self):
        return f"http://127.0.0.1:{self.httpd.server_address[1]}"

    def url(self, path="/"):
        return self.origin + path

    def close(self):
        self.httpd.shutdown()
        self.httpd.server_close()


@pytest.fixture
def route_servers():
    """Two loopback servers on different ports, hence different origins."""
    servers = [RouteServer(), RouteServer()]
    yield servers
    for s in servers:
        s.close()


# -- acceptance reporting ------------------------------------------------------

_criteria = {}
_criterion_of = {}


def pytest_collection_modifyitems(items):
    for item in items:
        marker = item.get_closest_marker("criterion")
        if marker is not None:
            number, title = marker.args
            _criteria.setdefault(number, {"title": title, "failed": False, "ran": 0})
            _criterion_of[item.nodeid] = number


def pytest_runtest_logreport(report):
    number = _criterion_of.get(report.nodeid)
    if number is None:
        return
    entry = _criteria[number]
    if report.failed:
        entry["failed"] = True
    if report.when == "call":
        entry["ran"] += 1


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_criteria):
        entry = _criteria[number]
        status = "FAIL" if entry["failed"] or not entry["ran"] else "PASS"
        terminalreporter.write_line(f"criterion {number:>2} {status}  {entry['title']}")
