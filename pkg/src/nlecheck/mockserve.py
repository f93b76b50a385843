"""Serve a rule-based mock model over the wire protocol (stdio or http)."""

from __future__ import annotations

import json
import sys
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Optional

from .corpus import DataError, Instance
from .protocol import MockModel, ProtocolError, mock_infer


def handle_request(model: MockModel, raw: str) -> dict:
    """Evaluate one request line; never raises, errors go in the response."""
    req_id: Optional[str] = None
    try:
        request = json.loads(raw)
        req_id = request.get("id")
        op = request.get("op")
        if op == "handshake":
            return {
                "id": req_id,
                "label": None,
                "nle": None,
                "scores": None,
                "error": None,
                "capabilities": {
                    "name": model.name,
                    "setup": model.setup,
                    "supports_scores": True,
                    "deterministic": True,
                },
            }
        if op not in ("infer", "predict"):
            return _error(req_id, f"unsupported op {op!r}")
        instance = Instance.from_wire(request["instance"])
        out = mock_infer(model, instance)
        return {
            "id": req_id,
            "label": out.label,
            "nle": out.nle if op == "infer" else None,
            "scores": out.scores,
            "error": None,
        }
    except (json.JSONDecodeError, KeyError, TypeError, DataError, ProtocolError) as exc:
        return _error(req_id, f"bad request: {exc}")


def _error(req_id, message: str) -> dict:
    return {"id": req_id, "label": None, "nle": None, "scores": None, "error": message}


def serve_stdio(model: MockModel, stdin=None, stdout=None) -> None:
    stdin = stdin or sys.stdin
    stdout = stdout or sys.stdout
    for line in stdin:
        line = line.strip()
        if not line:
            continue
        response = handle_request(model, line)
        stdout.write(json.dumps(response, ensure_ascii=False) + "\n")
        stdout.flush()


def serve_http(model: MockModel, host: str = "127.0.0.1", port: int = 8750) -> None:
    class Handler(BaseHTTPRequestHandler):
        def do_POST(self):  # noqa: N802 - stdlib naming
            if self.path.rstrip("/") != "/infer":
                self.send_error(404)
                return
            length = int(self.headers.get("Content-Length", 0))
            raw = self.rfile.read(length).decode("utf-8")
            body = json.dumps(handle_request(model, raw), ensure_ascii=False).encode("utf-8")
            self.send_response(200)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(body)))
            self.end_headers()
            self.wfile.write(body)

        def log_message(self, *args):
            pass

    ThreadingHTTPServer((host, port), Handler).serve_forever()
