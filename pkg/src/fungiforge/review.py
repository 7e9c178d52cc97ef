"""HTTP service for the manual triage queue.

A single curator works through the NeedsReview items; every verdict is
appended to a write-ahead log and fsynced before the 200 response goes
out, and the manifest CSV is rewritten on clean shutdown. On startup
any leftover log is replayed, so a crash mid-session loses nothing.

Verdict transitions are one way: NeedsReview -> ManualKeep or
ManualReject. Decided items cannot be resurrected and automatic
Reject rows cannot be overridden (those POSTs get 409); repeating an
identical verdict is idempotent and answers 200.
"""

from __future__ import annotations

import json
import mimetypes
import os
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from urllib.parse import parse_qs, urlparse

from .dataset import Manifest
from .errors import MissingPatchDir, PortUnavailable
from .filtering import Verdict, patch_stats
from .imaging import load_image

_STATIC_FALLBACK = Path(__file__).parent / "static"


class ReviewState:
    """Manifest plus the durable verdict log."""

    def __init__(self, manifest_path, patch_dir):
        self.manifest_path = Path(manifest_path)
        self.patch_dir = Path(patch_dir)
        if not self.patch_dir.is_dir():
            raise MissingPatchDir(f"patch directory missing: {self.patch_dir}")
        self.manifest = Manifest.load(self.manifest_path)
        self.wal_path = self.manifest_path.with_name(self.manifest_path.name + ".wal")
        self._replay_wal()
        self.lock = threading.RLock()
        self._wal_fh = open(self.wal_path, "a", encoding="utf-8")
        self._stats_cache: dict[str, dict] = {}

    def _replay_wal(self) -> None:
        if not self.wal_path.is_file():
            return
        for line in self.wal_path.read_text(encoding="utf-8").splitlines():
            if not line.strip():
                continue
            entry = json.loads(line)
            row = self.manifest.get(entry["patch_id"])
            row.verdict = Verdict(entry["verdict"])

    def pending_ids(self) -> list[str]:
        return [r.patch_id for r in self.manifest.rows()
                if r.verdict is Verdict.NEEDS_REVIEW]

    def progress(self) -> dict:
        pending = decided = 0
        for r in self.manifest.rows():
            if r.verdict is Verdict.NEEDS_REVIEW:
                pending += 1
            elif r.verdict.is_manual:
                decided += 1
        return {"pending": pending, "decided": decided, "total": pending + decided}

    def stats_for(self, patch_id: str) -> dict:
        cached = self._stats_cache.get(patch_id)
        if cached is None:
            s = patch_stats(load_image(self.patch_dir / f"{patch_id}.png"))
            cached = {"mean": s.mean, "p05": s.p05, "p95": s.p95,
                      "michelson": s.michelson}
            self._stats_cache[patch_id] = cached
        return cached

    def apply_verdict(self, patch_id: str, verdict: str) -> int:
        """Returns the HTTP status; 200 responses are durable on return."""
        target = {"keep": Verdict.MANUAL_KEEP,
                  "reject": Verdict.MANUAL_REJECT}.get(verdict)
        if target is None:
            return 400
        with self.lock:
            if patch_id not in self.manifest:
                return 404
            row = self.manifest.get(patch_id)
            if row.verdict is target:
                return 200  # idempotent repeat, no duplicate log entry
            if row.verdict is not Verdict.NEEDS_REVIEW:
                return 409
            self._wal_fh.write(json.dumps(
                {"patch_id": patch_id, "verdict": target.value}) + "\n")
            self._wal_fh.flush()
            os.fsync(self._wal_fh.fileno())
            row.verdict = target
            return 200

    def close(self, clean: bool = True) -> None:
        with self.lock:
            self._wal_fh.close()
            if clean:
                self.manifest.save(self.manifest_path)
                self.wal_path.unlink(missing_ok=True)


class _Handler(BaseHTTPRequestHandler):
    state: ReviewState
    ui_dir: Path

    # Quiet by default; the CLI prints its own status line.
    def log_message(self, fmt, *args):
        pass

    def _send(self, code: int, body: bytes, content_type: str) -> None:
        self.send_response(code)
        self.send_header("Content-Type", content_type)
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def _send_json(self, code: int, payload) -> None:
        self._send(code, json.dumps(payload).encode("utf-8"),
                   "application/json; charset=utf-8")

    def do_GET(self):
        url = urlparse(self.path)
        path = url.path
        if path == "/api/queue":
            q = parse_qs(url.query)
            offset = int(q.get("offset", ["0"])[0])
            limit = int(q.get("limit", ["50"])[0])
            items = []
            for pid in self.state.pending_ids()[offset : offset + limit]:
                row = self.state.manifest.get(pid)
                items.append({
                    "patch_id": pid,
                    "class": row.class_name,
                    "stats": self.state.stats_for(pid),
                    "image_url": f"/api/patch/{pid}.png",
                })
            self._send_json(200, items)
        elif path == "/api/progress":
            self._send_json(200, self.state.progress())
        elif path == "/api/export":
            body = self.state.manifest.to_csv_text().encode("utf-8")
            self._send(200, body, "text/csv; charset=utf-8")
        elif path.startswith("/api/patch/") and path.endswith(".png"):
            pid = path[len("/api/patch/") : -len(".png")]
            if pid not in self.state.manifest:
                self._send_json(404, {"error": f"unknown patch {pid}"})
                return
            file_path = self.state.patch_dir / f"{pid}.png"
            if not file_path.is_file():
                self._send_json(404, {"error": f"missing file for {pid}"})
                return
            self._send(200, file_path.read_bytes(), "image/png")
        else:
            self._serve_static(path)

    def _serve_static(self, path: str) -> None:
        rel = path.lstrip("/") or "index.html"
        root = self.ui_dir.resolve()
        target = (root / rel).resolve()
        if not str(target).startswith(str(root)) or not target.is_file():
            self._send_json(404, {"error": "not found"})
            return
        ctype = mimetypes.guess_type(target.name)[0] or "application/octet-stream"
        self._send(200, target.read_bytes(), ctype)

    def do_POST(self):
        if urlparse(self.path).path != "/api/verdict":
            self._send_json(404, {"error": "not found"})
            return
        try:
            length = int(self.headers.get("Content-Length", "0"))
            payload = json.loads(self.rfile.read(length).decode("utf-8"))
            patch_id = payload["patch_id"]
            verdict = payload["verdict"]
        except (ValueError, KeyError, json.JSONDecodeError):
            self._send_json(400, {"error": "malformed body"})
            return
        if not isinstance(patch_id, str) or verdict not in ("keep", "reject"):
            self._send_json(400, {"error": "malformed body"})
            return
        code = self.state.apply_verdict(patch_id, verdict)
        messages = {200: "ok", 404: f"unknown patch {patch_id}",
                    409: "item is not awaiting review"}
        self._send_json(code, {"status": messages[code]}
                        if code == 200 else {"error": messages[code]})


class ReviewServer:
    """Running service handle; close(clean=True) persists the manifest."""

    def __init__(self, state: ReviewState, port: int = 0, ui_dir=None,
                 host: str = "127.0.0.1"):
        self.state = state
        handler = type("BoundHandler", (_Handler,), {
            "state": state,
            "ui_dir": Path(ui_dir) if ui_dir else _STATIC_FALLBACK,
        })
        try:
            self._httpd = ThreadingHTTPServer((host, port), handler)
        except OSError as exc:
            state.close(clean=False)
            raise PortUnavailable(f"cannot bind {host}:{port}: {exc}") from exc
        self.host = host
        self.port = self._httpd.server_address[1]
        self._thread = threading.Thread(target=self._httpd.serve_forever,
                                        daemon=True)

    @property
    def base_url(self) -> str:
        return f"http://{self.host}:{self.port}"

    def start(self) -> "ReviewServer":
        self._thread.start()
        return self

    def close(self, clean: bool = True) -> None:
        self._httpd.shutdown()
        self._httpd.server_close()
        self.state.close(clean=clean)

    def abort(self) -> None:
        """Stop without the clean-shutdown manifest rewrite (crash stand-in)."""
        self.close(clean=False)


def start_review_server(manifest_path, patch_dir, port: int = 0, ui_dir=None,
                        host: str = "127.0.0.1") -> ReviewServer:
    state = ReviewState(manifest_path, patch_dir)
    return ReviewServer(state, port=port, ui_dir=ui_dir, host=host).start()
