"""Publication-point read service.

Routes (all ``GET``)::

    /registry/root          JSON envelope of the signed aggregate root
    /registry/listing       canonical TLV child listing
    /ca/{id}/root           JSON envelope of the CA's root record
    /ca/{id}/manifest       manifest bytes
    /ca/{id}/crl            CRL bytes
    /ca/{id}/obj/{name}     object payload
    /ca/{id}/paths          per-object authentication paths (path-carrying baseline)

CA routes accept ``?root=<hex>`` or ``?snapshot=<epoch>.<serial>`` to pin a
retained snapshot; otherwise the ``current`` snapshot is used.  Every CA
response carries ``X-Snapshot``.  Snapshot directories are immutable once
renamed into place, so the only read of mutable state is the ``current``
pointer itself.

:class:`RepositoryView` holds the routing logic; :class:`PublicationServer`
exposes it over HTTP and :class:`LoopbackTransport` calls it in-process.
"""

from __future__ import annotations

import json
import logging
import threading
import urllib.error
import urllib.request
from dataclasses import dataclass, field
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from urllib.parse import parse_qs, unquote, urlsplit

from .formats import NAME_RE, FormatError, Manifest, PathBundle, RegistryRoot, RootRecord
from .mtl import Ladder
from .publisher import REGISTRY_DIR

log = logging.getLogger(__name__)

OCTETS = "application/octet-stream"
JSON = "application/json"


class ServiceError(Exception):
    pass


class CorruptRepo(ServiceError):
    pass


class BindFailure(ServiceError):
    pass


class TransportError(Exception):
    pass


@dataclass
class Response:
    status: int
    body: bytes = b""
    content_type: str = OCTETS
    headers: dict[str, str] = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.status == 200

    def json(self) -> dict:
        return json.loads(self.body)


def _json(doc: dict, **headers: str) -> Response:
    body = json.dumps(doc, sort_keys=True, separators=(",", ":")).encode()
    return Response(200, body, JSON, dict(headers))


NOT_FOUND = Response(404, b"not found\n", "text/plain")
UNAVAILABLE = Response(503, b"repository not ready\n", "text/plain")


class RepositoryView:
    """Resolves routes against a repository directory written by the publisher."""

    def __init__(self, repo_root: Path | str) -> None:
        self.root = Path(repo_root)
        if not self.root.is_dir():
            raise CorruptRepo(f"{self.root} is not a directory")
        self._roots: dict[tuple[str, str], bytes] = {}
        self._lock = threading.Lock()

    # -- snapshot resolution ---------------------------------------------

    def _ca_dir(self, ca_id: str) -> Path | None:
        if not NAME_RE.match(ca_id) or ca_id == REGISTRY_DIR:
            return None
        path = self.root / ca_id
        return path if (path / "current").is_file() else None

    def _snapshot_root(self, ca_id: str, snap: Path) -> bytes | None:
        key = (ca_id, snap.name)
        with self._lock:
            if key in self._roots:
                return self._roots[key]
        try:
            record = RootRecord.from_bytes((snap / "root.bin").read_bytes())
        except (OSError, FormatError):
            return None
        with self._lock:
            self._roots[key] = record.ladder_root
        return record.ladder_root

    def resolve(self, ca_id: str, query: dict[str, list[str]]) -> Path | None:
        ca_dir = self._ca_dir(ca_id)
        if ca_dir is None:
            return None
        if "snapshot" in query:
            snap_id = query["snapshot"][0]
            parts = snap_id.split(".")
            if len(parts) != 2 or not all(p.isdigit() for p in parts):
                return None
            snap = ca_dir / snap_id
            return snap if snap.is_dir() else None
        if "root" in query:
            try:
                want = bytes.fromhex(query["root"][0])
            except ValueError:
                return None
            candidates = sorted(
                (p for p in ca_dir.iterdir() if p.is_dir() and not p.name.startswith(".")),
                key=lambda p: p.name,
                reverse=True,
            )
            for snap in candidates:
                if self._snapshot_root(ca_id, snap) == want:
                    return snap
            return None
        try:
            snap_id = (ca_dir / "current").read_text().strip()
        except OSError:
            return None
        snap = ca_dir / snap_id
        return snap if snap.is_dir() else None

    # -- routing ---------------------------------------------------------------

    def handle(self, target: str) -> Response:
        parts = urlsplit(target)
        query = parse_qs(parts.query)
        segments = [unquote(s) for s in parts.path.strip("/").split("/")]
        try:
            if segments[:1] == ["registry"] and len(segments) == 2:
                return self._registry(segments[1])
            if segments[:1] == ["ca"] and len(segments) >= 3:
                return self._ca(segments[1], segments[2:], query)
        except (OSError, FormatError) as exc:
            log.warning("failed to serve %s: %s", target, exc)
            return NOT_FOUND
        return NOT_FOUND

    def _registry(self, what: str) -> Response:
        reg = self.root / REGISTRY_DIR
        if what == "root":
            path = reg / "root.bin"
            if not path.is_file():
                return UNAVAILABLE
            return _json(RegistryRoot.from_bytes(path.read_bytes()).to_json())
        if what == "listing":
            path = reg / "listing.bin"
            if not path.is_file():
                return UNAVAILABLE
            return Response(200, path.read_bytes())
        return NOT_FOUND

    def _ca(self, ca_id: str, rest: list[str], query: dict[str, list[str]]) -> Response:
        snap = self.resolve(ca_id, query)
        if snap is None:
            return NOT_FOUND
        headers = {"X-Snapshot": snap.name}
        route = rest[0]
        if route == "root" and len(rest) == 1:
            record = RootRecord.from_bytes((snap / "root.bin").read_bytes())
            return _json(record.to_json(), **headers)
        if route in ("manifest", "crl") and len(rest) == 1:
            return Response(200, (snap / f"{route}.bin").read_bytes(), headers=headers)
        if route == "obj" and len(rest) == 2 and NAME_RE.match(rest[1]):
            path = snap / "obj" / rest[1]
            if not path.is_file():
                return NOT_FOUND
            return Response(200, path.read_bytes(), headers=headers)
        if route == "paths" and len(rest) == 1:
            return Response(200, path_bundle(Manifest.from_bytes((snap / "manifest.bin").read_bytes())).to_bytes(), headers=headers)
        return NOT_FOUND


def path_bundle(manifest: Manifest) -> PathBundle:
    ladder = Ladder.from_commitments(manifest.commitments())
    return PathBundle(
        [r.root for r in ladder.object_rungs],
        {name: ladder.auth_path(i) for name, i in manifest.names().items()},
    )


class LoopbackTransport:
    """In-process transport that counts requests and body bytes."""

    def __init__(self, view: RepositoryView) -> None:
        self.view = view
        self.requests = 0
        self.bytes_received = 0
        self.fail_after: int | None = None

    def get(self, path: str) -> Response:
        if self.fail_after is not None and self.requests >= self.fail_after:
            raise TransportError(f"injected failure on {path}")
        self.requests += 1
        resp = self.view.handle(path)
        self.bytes_received += len(resp.body)
        return resp


class HttpTransport:
    def __init__(self, base_url: str, timeout: float = 10.0) -> None:
        self.base_url = base_url.rstrip("/")
        self.timeout = timeout
        self.requests = 0
        self.bytes_received = 0

    def get(self, path: str) -> Response:
        self.requests += 1
        try:
            with urllib.request.urlopen(self.base_url + path, timeout=self.timeout) as resp:
                body = resp.read()
                self.bytes_received += len(body)
                return Response(resp.status, body, resp.headers.get_content_type(), dict(resp.headers))
        except urllib.error.HTTPError as exc:
            body = exc.read()
            self.bytes_received += len(body)
            if exc.code >= 500:
                raise TransportError(f"{path}: HTTP {exc.code}") from exc
            return Response(exc.code, body)
        except (urllib.error.URLError, OSError) as exc:
            raise TransportError(f"{path}: {exc}") from exc


class _Handler(BaseHTTPRequestHandler):
    server: "_Server"
    protocol_version = "HTTP/1.1"

    def do_GET(self) -> None:  # noqa: N802
        resp = self.server.view.handle(self.path)
        self.send_response(resp.status)
        self.send_header("Content-Type", resp.content_type)
        self.send_header("Content-Length", str(len(resp.body)))
        for key, value in resp.headers.items():
            self.send_header(key, value)
        self.end_headers()
        self.wfile.write(resp.body)

    def log_message(self, format: str, *args) -> None:
        log.debug("%s - %s", self.address_string(), format % args)


class _Server(ThreadingHTTPServer):
    daemon_threads = True

    def __init__(self, address: tuple[str, int], view: RepositoryView) -> None:
        self.view = view
        super().__init__(address, _Handler)


class PublicationServer:
    """Threaded HTTP server; use as a context manager or call start/stop."""

    def __init__(self, repo_root: Path | str, bind: tuple[str, int] = ("127.0.0.1", 0)) -> None:
        self.view = RepositoryView(repo_root)
        try:
            self._server = _Server(bind, self.view)
        except OSError as exc:
            raise BindFailure(f"cannot bind {bind}: {exc}") from exc
        self._thread: threading.Thread | None = None

    @property
    def url(self) -> str:
        host, port = self._server.server_address[:2]
        return f"http://{host}:{port}"

    def start(self) -> "PublicationServer":
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)
        self._thread.start()
        return self

    def serve_forever(self) -> None:
        self._server.serve_forever()

    def stop(self) -> None:
        self._server.shutdown()
        self._server.server_close()
        if self._thread is not None:
            self._thread.join()

    def __enter__(self) -> "PublicationServer":
        return self.start()

    def __exit__(self, *exc) -> None:
        self.stop()


@dataclass(frozen=True)
class EndpointDescriptor:
    """Where a registry is served: an HTTP base URL or an in-process repository."""

    registry_id: str
    base_url: str = ""
    repo_root: Path | None = None

    def transport(self, timeout: float = 10.0) -> "LoopbackTransport | HttpTransport":
        if self.base_url:
            return HttpTransport(self.base_url, timeout)
        if self.repo_root is None:
            raise ServiceError("endpoint needs a base URL or a repository path")
        return LoopbackTransport(RepositoryView(self.repo_root))


def serve(repo_root: Path | str, bind: tuple[str, int] = ("127.0.0.1", 0)) -> PublicationServer:
    return PublicationServer(repo_root, bind).start()
