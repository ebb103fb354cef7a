"""Binary cache: output paths mapped to compressed canonical archives.

On disk a cache is a flat directory of ``<digest32>.info`` metadata files
and ``<digest32>.arc.xz`` payloads (see docs/cache-format.md).  The serving
mode exposes the same bytes over HTTP as ``/<digest32>.info`` and
``/<digest32>.arc``; clients treat a directory path and a URL uniformly.
"""

from __future__ import annotations

import lzma
import os
import re
import tempfile
import threading
import urllib.error
import urllib.request
from dataclasses import dataclass
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

from . import archive
from .errors import CorruptPayload, DigestConflict, SubstituteCorrupt
from .paths import StorePath

COMPRESSION = "xz"

_INFO_KEYS = ("ArchiveDigest", "ArchiveSize", "CompressedSize", "Compression", "Deriver", "References", "StorePath")


@dataclass(frozen=True)
class CacheEntry:
    store_path: str  # rendered
    archive_digest: str  # sha256 hex of the uncompressed archive
    archive_size: int
    compressed_size: int
    references: tuple = ()  # rendered paths
    deriver: str = ""

    def render_info(self) -> bytes:
        fields = {
            "ArchiveDigest": self.archive_digest,
            "ArchiveSize": str(self.archive_size),
            "CompressedSize": str(self.compressed_size),
            "Compression": COMPRESSION,
            "Deriver": self.deriver,
            "References": " ".join(self.references),
            "StorePath": self.store_path,
        }
        return "".join(f"{k}: {fields[k]}\n" for k in _INFO_KEYS).encode("utf-8")

    @classmethod
    def parse_info(cls, data: bytes) -> "CacheEntry":
        fields: dict[str, str] = {}
        for line in data.decode("utf-8").splitlines():
            key, sep, value = line.partition(": ")
            if not sep:
                key, value = line.rstrip(":"), ""
            fields[key] = value
        missing = [k for k in _INFO_KEYS if k not in fields]
        if missing:
            raise CorruptPayload(f"info file missing keys: {', '.join(missing)}")
        if fields["Compression"] != COMPRESSION:
            raise CorruptPayload(f"unsupported compression {fields['Compression']!r}")
        return cls(
            store_path=fields["StorePath"],
            archive_digest=fields["ArchiveDigest"],
            archive_size=int(fields["ArchiveSize"]),
            compressed_size=int(fields["CompressedSize"]),
            references=tuple(fields["References"].split()) if fields["References"] else (),
            deriver=fields["Deriver"],
        )


def entry_for(store, path: StorePath) -> tuple[CacheEntry, bytes]:
    """Build a cache entry plus payload for a registered store path."""
    data = store.export_archive(path)
    deriver = store.deriver(path)
    entry = CacheEntry(
        store_path=path.render(),
        archive_digest=archive.digest(data),
        archive_size=len(data),
        compressed_size=0,  # filled on put
        references=tuple(sorted(r.render() for r in store.references(path))),
        deriver=deriver.render() if deriver else "",
    )
    return entry, data


class BinaryCache:
    """Writable directory-backed cache."""

    def __init__(self, directory: str):
        self.directory = os.path.abspath(directory)
        os.makedirs(self.directory, exist_ok=True)
        self._lock = threading.Lock()

    def _info_file(self, digest: str) -> str:
        return os.path.join(self.directory, f"{digest}.info")

    def _payload_file(self, digest: str) -> str:
        return os.path.join(self.directory, f"{digest}.arc.{COMPRESSION}")

    def query(self, path: StorePath) -> CacheEntry | None:
        info = self._info_file(path.digest)
        if not os.path.exists(info):
            return None
        with open(info, "rb") as f:
            return CacheEntry.parse_info(f.read())

    def put(self, entry: CacheEntry, payload: bytes) -> CacheEntry:
        got = archive.digest(payload)
        if got != entry.archive_digest:
            raise CorruptPayload(f"payload digest {got} does not match entry {entry.archive_digest}")
        path = StorePath.parse(entry.store_path)
        with self._lock:
            existing = self.query(path)
            if existing is not None:
                if existing.archive_digest != entry.archive_digest:
                    raise DigestConflict(
                        f"{entry.store_path}: cached archive {existing.archive_digest}, "
                        f"offered {entry.archive_digest}"
                    )
                return existing
            compressed = lzma.compress(payload, preset=1)
            final = CacheEntry(
                store_path=entry.store_path,
                archive_digest=entry.archive_digest,
                archive_size=len(payload),
                compressed_size=len(compressed),
                references=entry.references,
                deriver=entry.deriver,
            )
            fd, tmp = tempfile.mkstemp(dir=self.directory)
            with os.fdopen(fd, "wb") as f:
                f.write(compressed)
            os.rename(tmp, self._payload_file(path.digest))
            fd, tmp = tempfile.mkstemp(dir=self.directory)
            with os.fdopen(fd, "wb") as f:
                f.write(final.render_info())
            os.rename(tmp, self._info_file(path.digest))
        return final

    def fetch(self, path: StorePath) -> bytes:
        entry = self.query(path)
        if entry is None:
            raise SubstituteCorrupt(f"{path} not in cache")
        with open(self._payload_file(path.digest), "rb") as f:
            compressed = f.read()
        data = lzma.decompress(compressed)
        if archive.digest(data) != entry.archive_digest:
            raise SubstituteCorrupt(f"{path}: archive digest mismatch")
        return data

    def push_path(self, store, path: StorePath) -> CacheEntry:
        entry, payload = entry_for(store, path)
        return self.put(entry, payload)

    def push_closure(self, store, path: StorePath) -> int:
        pushed = 0
        for p in sorted(store.list_closure(path), key=lambda q: q.render()):
            if self.query(p) is None:
                self.push_path(store, p)
                pushed += 1
        return pushed


class HttpCacheClient:
    """Read-only client for a cache served over HTTP."""

    def __init__(self, base_url: str):
        self.base_url = base_url.rstrip("/")

    def _get(self, suffix: str) -> bytes | None:
        try:
            with urllib.request.urlopen(f"{self.base_url}/{suffix}") as response:
                return response.read()
        except urllib.error.HTTPError as e:
            if e.code == 404:
                return None
            raise SubstituteCorrupt(f"cache at {self.base_url}: HTTP {e.code}") from e
        except urllib.error.URLError as e:
            raise SubstituteCorrupt(f"cache at {self.base_url}: {e.reason}") from e

    def query(self, path: StorePath) -> CacheEntry | None:
        data = self._get(f"{path.digest}.info")
        return CacheEntry.parse_info(data) if data is not None else None

    def fetch(self, path: StorePath) -> bytes:
        entry = self.query(path)
        compressed = self._get(f"{path.digest}.arc")
        if entry is None or compressed is None:
            raise SubstituteCorrupt(f"{path} not in cache at {self.base_url}")
        data = lzma.decompress(compressed)
        if archive.digest(data) != entry.archive_digest:
            raise SubstituteCorrupt(f"{path}: archive digest mismatch")
        return data


def substituter_for(spec: str):
    if spec.startswith("http://") or spec.startswith("https://"):
        return HttpCacheClient(spec)
    return BinaryCache(spec)


_ROUTE_RE = re.compile(r"^/([a-z2-7]{32})\.(info|arc)$")


class _CacheHandler(BaseHTTPRequestHandler):
    cache_dir = ""

    def do_GET(self):  # noqa: N802 (http.server API)
        m = _ROUTE_RE.match(self.path)
        candidate = None
        if m:
            digest, kind = m.groups()
            suffix = ".info" if kind == "info" else f".arc.{COMPRESSION}"
            candidate = os.path.join(self.cache_dir, digest + suffix)
        if candidate and os.path.exists(candidate):
            with open(candidate, "rb") as f:
                body = f.read()
            self.send_response(200)
            self.send_header("Content-Type", "application/octet-stream")
            self.send_header("Content-Length", str(len(body)))
            self.end_headers()
            self.wfile.write(body)
        else:
            self.send_response(404)
            self.send_header("Content-Length", "0")
            self.end_headers()

    def log_message(self, fmt, *args):
        pass  # keep stdout machine-readable


def make_server(directory: str, host: str, port: int) -> ThreadingHTTPServer:
    handler = type("Handler", (_CacheHandler,), {"cache_dir": os.path.abspath(directory)})
    return ThreadingHTTPServer((host, port), handler)


def serve(directory: str, listen: str):
    host, _, port = listen.rpartition(":")
    server = make_server(directory, host or "127.0.0.1", int(port))
    server.serve_forever()
