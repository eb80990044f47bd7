from __future__ import annotations

import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Callable

import pytest

from larc.synthesizer import Reaction, ReactionDatabase
from larc.toolbox import HazardList, LookupPredictor, ToolRegistry


def rxn(text: str, rid: str = "") -> Reaction:
    left, _, right = text.partition(">>")
    return Reaction(tuple(left.split(".")), right, rid)


def db_of(*texts: str) -> ReactionDatabase:
    return ReactionDatabase(rxn(t, f"R{i}") for i, t in enumerate(texts))


def registry(carcinogens=(), pyrophorics=()) -> ToolRegistry:
    return ToolRegistry(
        LookupPredictor(HazardList.from_smiles("carcinogen", carcinogens)),
        HazardList.from_smiles("pyrophoric", pyrophorics),
    )


@pytest.fixture
def json_server():
    """Start a local HTTP server whose POST handler is ``handler(path, body) -> (status, obj)``."""
    servers = []

    def start(handler: Callable[[str, dict], tuple[int, object]]) -> str:
        class Handler(BaseHTTPRequestHandler):
            def do_POST(self):
                length = int(self.headers.get("Content-Length", 0))
                body = json.loads(self.rfile.read(length) or b"{}")
                status, obj = handler(self.path, body)
                payload = obj.encode() if isinstance(obj, str) else json.dumps(obj).encode()
                self.send_response(status)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(payload)))
                self.end_headers()
                self.wfile.write(payload)

            def log_message(self, *args):
                pass

        server = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        threading.Thread(target=server.serve_forever, daemon=True).start()
        servers.append(server)
        return f"http://127.0.0.1:{server.server_address[1]}"

    yield start
    for s in servers:
        s.shutdown()
        s.server_close()


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def acceptance():
    """Record one pass/fail line for an acceptance criterion and return the outcome."""

    def record(name: str, ok: bool, detail: str) -> bool:
        line = f"{'PASS' if ok else 'FAIL'} {name}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
