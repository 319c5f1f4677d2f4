"""Node-level blob proxy: an LRU byte cache plus a small HTTP wire.

Workers fetch blobs through a proxy co-located on their node instead of
hitting the backing store directly.  Because blobs are content-addressed
and immutable, the cache can never serve stale bytes; eviction is purely
a capacity concern.  Cache population is single-flight per content id:
when N clients ask for the same cold blob concurrently, exactly one
backing fetch happens and the rest wait for it.

Wire format v1 (all paths under ``/v1/``):

    GET  /v1/blobs/<content-id>   -> 200 application/octet-stream (the bytes)
                                     404 {"error": "not_found"}
    HEAD /v1/blobs/<content-id>   -> 200 | 404, no body
    PUT  /v1/blobs                -> 201 {"content_id": ..., "size": ...}
    GET  /v1/stats                -> 200 cache counters as JSON
    GET  /v1/health               -> 200 {"ok": true}

Bodies on error paths are JSON.  Clients re-verify the digest of every
GET so a misbehaving proxy can never inject wrong bytes.
"""

from __future__ import annotations

import json
import threading
import urllib.error
import urllib.request
from collections import OrderedDict
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Callable

from ..errors import BlobIntegrityError, BlobNotFound, ProxyUnreachable
from ..ids import content_id
from .store import BlobRef, BlobStore


class _Flight:
    """One in-progress backing fetch; followers wait on ``done``."""

    __slots__ = ("done", "data", "error")

    def __init__(self) -> None:
        self.done = threading.Event()
        self.data: bytes | None = None
        self.error: BaseException | None = None


class BlobCache:
    """Thread-safe LRU byte cache with single-flight population.

    ``fetch`` is the backing read, called with a bare content id.  A blob
    larger than the whole capacity is fetched and returned but never
    cached, so one oversized object cannot flush the working set.
    """

    def __init__(self, fetch: Callable[[str], bytes], capacity_bytes: int) -> None:
        if capacity_bytes <= 0:
            raise ValueError("capacity_bytes must be positive")
        self._fetch = fetch
        self.capacity_bytes = capacity_bytes
        self._entries: OrderedDict[str, bytes] = OrderedDict()
        self._bytes = 0
        self._lock = threading.Lock()
        self._in_flight: dict[str, _Flight] = {}
        self.hits = 0
        self.misses = 0
        self.evictions = 0
        self.backing_fetches = 0

    def stats(self) -> dict:
        with self._lock:
            return {"hits": self.hits, "misses": self.misses,
                    "evictions": self.evictions,
                    "backing_fetches": self.backing_fetches,
                    "cached_blobs": len(self._entries),
                    "cached_bytes": self._bytes,
                    "capacity_bytes": self.capacity_bytes}

    def get(self, ref: BlobRef | str) -> bytes:
        blob_id = ref.id if isinstance(ref, BlobRef) else ref
        with self._lock:
            cached = self._entries.get(blob_id)
            if cached is not None:
                self._entries.move_to_end(blob_id)
                self.hits += 1
                return cached
            self.misses += 1
            flight = self._in_flight.get(blob_id)
            leader = flight is None
            if leader:
                flight = self._in_flight[blob_id] = _Flight()
        if not leader:
            flight.done.wait()
            if flight.error is not None:
                raise flight.error
            assert flight.data is not None
            return flight.data
        try:
            with self._lock:
                self.backing_fetches += 1
            flight.data = self._fetch(blob_id)
        except BaseException as err:
            flight.error = err
            raise
        finally:
            with self._lock:
                del self._in_flight[blob_id]
                if flight.data is not None:
                    self._insert(blob_id, flight.data)
            flight.done.set()
        return flight.data

    def _insert(self, blob_id: str, data: bytes) -> None:
        # caller holds the lock
        if len(data) > self.capacity_bytes or blob_id in self._entries:
            return
        self._entries[blob_id] = data
        self._bytes += len(data)
        while self._bytes > self.capacity_bytes:
            _, evicted = self._entries.popitem(last=False)
            self._bytes -= len(evicted)
            self.evictions += 1


class BlobProxy:
    """Caching facade over a backing store; what workers read blobs through."""

    def __init__(self, backing, capacity_bytes: int = 64 * 1024 * 1024) -> None:
        self.backing = backing
        self.cache = BlobCache(backing.get, capacity_bytes)

    def proxy_get(self, ref: BlobRef | str) -> bytes:
        return self.cache.get(ref)

    # writes bypass the cache; reads after a put are warm via the store anyway
    def put(self, data: bytes, hint: str | None = None) -> BlobRef:
        return self.backing.put(data, hint)

    def stats(self) -> dict:
        return self.cache.stats()


_BLOB_PATH = "/v1/blobs"


class _ProxyHandler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"
    server_version = "fanout-blob-proxy/1"

    def log_message(self, fmt: str, *args) -> None:  # quiet by default
        pass

    def _send_json(self, code: int, payload: dict) -> None:
        body = json.dumps(payload).encode("utf-8")
        self.send_response(code)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def _blob_id(self) -> str | None:
        if not self.path.startswith(_BLOB_PATH + "/"):
            return None
        return self.path[len(_BLOB_PATH) + 1:]

    def do_GET(self) -> None:
        if self.path == "/v1/health":
            self._send_json(200, {"ok": True})
            return
        if self.path == "/v1/stats":
            self._send_json(200, self.server.proxy.stats())
            return
        blob_id = self._blob_id()
        if blob_id is None:
            self._send_json(404, {"error": "unknown_path"})
            return
        try:
            data = self.server.proxy.proxy_get(blob_id)
        except BlobNotFound:
            self._send_json(404, {"error": "not_found", "content_id": blob_id})
            return
        except BlobIntegrityError:
            self._send_json(502, {"error": "integrity", "content_id": blob_id})
            return
        self.send_response(200)
        self.send_header("Content-Type", "application/octet-stream")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def do_HEAD(self) -> None:
        blob_id = self._blob_id()
        try:
            ok = blob_id is not None and self.server.proxy.backing.has(blob_id)
        except BlobNotFound:
            ok = False
        self.send_response(200 if ok else 404)
        self.send_header("Content-Length", "0")
        self.end_headers()

    def do_PUT(self) -> None:
        if self.path != _BLOB_PATH:
            self._send_json(404, {"error": "unknown_path"})
            return
        length = int(self.headers.get("Content-Length", "0"))
        data = self.rfile.read(length)
        ref = self.server.proxy.put(data)
        self._send_json(201, {"content_id": ref.id, "size": ref.size})


class ProxyServer:
    """Serves one BlobProxy over HTTP on a background thread."""

    def __init__(self, proxy: BlobProxy, host: str = "127.0.0.1",
                 port: int = 0) -> None:
        self.proxy = proxy
        self._httpd = ThreadingHTTPServer((host, port), _ProxyHandler)
        self._httpd.daemon_threads = True
        self._httpd.proxy = proxy
        self._thread: threading.Thread | None = None

    @property
    def address(self) -> str:
        host, port = self._httpd.server_address[:2]
        return f"http://{host}:{port}"

    def start(self) -> "ProxyServer":
        self._thread = threading.Thread(target=self._httpd.serve_forever,
                                        name="blob-proxy", daemon=True)
        self._thread.start()
        return self

    def stop(self) -> None:
        self._httpd.shutdown()
        self._httpd.server_close()
        if self._thread is not None:
            self._thread.join(timeout=5)

    def __enter__(self) -> "ProxyServer":
        return self.start()

    def __exit__(self, *exc) -> None:
        self.stop()


class RemoteBlobStore:
    """Client for the proxy wire; duck-compatible with BlobStore reads.

    Every fetched payload is re-hashed locally, so integrity does not
    depend on trusting the wire.
    """

    def __init__(self, base_url: str, timeout: float = 10.0) -> None:
        self.base_url = base_url.rstrip("/")
        self.timeout = timeout

    def _url(self, tail: str) -> str:
        return f"{self.base_url}{tail}"

    def get(self, ref: BlobRef | str) -> bytes:
        blob_id = ref.id if isinstance(ref, BlobRef) else ref
        try:
            with urllib.request.urlopen(self._url(f"{_BLOB_PATH}/{blob_id}"),
                                        timeout=self.timeout) as resp:
                data = resp.read()
        except urllib.error.HTTPError as err:
            if err.code == 404:
                raise BlobNotFound(f"no blob {blob_id}") from None
            raise BlobIntegrityError(
                f"proxy refused blob {blob_id} (HTTP {err.code})") from None
        except urllib.error.URLError as err:
            raise ProxyUnreachable(f"blob proxy at {self.base_url}: {err.reason}") from None
        if content_id(data) != blob_id:
            raise BlobIntegrityError(
                f"blob {blob_id} arrived with a different digest")
        return data

    def put(self, data: bytes, hint: str | None = None) -> BlobRef:
        req = urllib.request.Request(self._url(_BLOB_PATH), data=data,
                                     method="PUT")
        try:
            with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                payload = json.loads(resp.read())
        except urllib.error.URLError as err:
            raise ProxyUnreachable(f"blob proxy at {self.base_url}: {err}") from None
        return BlobRef(payload["content_id"], payload["size"], hint)

    def has(self, ref: BlobRef | str) -> bool:
        blob_id = ref.id if isinstance(ref, BlobRef) else ref
        req = urllib.request.Request(self._url(f"{_BLOB_PATH}/{blob_id}"),
                                     method="HEAD")
        try:
            with urllib.request.urlopen(req, timeout=self.timeout):
                return True
        except urllib.error.HTTPError:
            return False
        except urllib.error.URLError as err:
            raise ProxyUnreachable(f"blob proxy at {self.base_url}: {err.reason}") from None
