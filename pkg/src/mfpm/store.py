"""Content-addressed object store.

Objects live physically under a configurable root while every recorded path
uses the logical ``/mfpm/store`` prefix.  Registration is write-to-temp then
rename, so concurrent writers of the same path race benignly: the first one
wins and later writers observe a fully registered object.

Reference edges between objects are declared at registration time (the
builder computes them by scanning outputs); `closure` follows the recorded
edges only.
"""

from __future__ import annotations

import json
import os
import shutil
import tempfile
import threading

from . import archive
from .archive import Node
from .errors import StoreWriteError, UnknownPath
from .paths import StorePath, truncated_sha256


class Store:
    def __init__(self, root: str):
        self.root = os.path.abspath(root)
        self._meta_dir = os.path.join(self.root, ".meta")
        self._tmp_dir = os.path.join(self.root, ".tmp")
        os.makedirs(self._meta_dir, exist_ok=True)
        os.makedirs(self._tmp_dir, exist_ok=True)
        self._lock = threading.Lock()

    # -- paths ---------------------------------------------------------

    def physical(self, path: StorePath) -> str:
        return os.path.join(self.root, f"{path.digest}-{path.name}")

    def _meta_file(self, path: StorePath) -> str:
        return os.path.join(self._meta_dir, f"{path.digest}.json")

    def has_path(self, path: StorePath) -> bool:
        return os.path.exists(self._meta_file(path))

    # -- registration ----------------------------------------------------

    def register(
        self,
        path: StorePath,
        node: Node,
        references: tuple[StorePath, ...] = (),
        deriver: StorePath | None = None,
    ) -> StorePath:
        """Install `node` at `path`. Idempotent: an existing object is kept."""
        if self.has_path(path):
            return path
        physical = self.physical(path)
        staging = tempfile.mkdtemp(dir=self._tmp_dir)
        staged = os.path.join(staging, "obj")
        try:
            archive.write_tree(node, staged)
            with self._lock:
                if not self.has_path(path):
                    if os.path.lexists(physical):
                        # Tree from an interrupted run; replace it whole.
                        _force_remove(physical)
                    os.rename(staged, physical)
                    meta = {
                        "name": path.name,
                        "references": sorted(p.render() for p in references),
                        "deriver": deriver.render() if deriver else "",
                    }
                    tmp_meta = os.path.join(staging, "meta.json")
                    with open(tmp_meta, "w", encoding="utf-8") as f:
                        json.dump(meta, f, sort_keys=True)
                    os.rename(tmp_meta, self._meta_file(path))
        except OSError as e:
            raise StoreWriteError(f"cannot register {path}: {e}") from e
        finally:
            shutil.rmtree(staging, ignore_errors=True)
        return path

    def add_tree(self, name: str, node: Node, references: tuple[StorePath, ...] = ()) -> StorePath:
        """Add a source tree; its path is derived from name and content."""
        payload = archive.encode(node)
        path = StorePath.for_content(f"source:{name}:", name, payload)
        return self.register(path, node, references=references)

    def add_file(self, name: str, data: bytes, executable: bool = False) -> StorePath:
        return self.add_tree(name, archive.FileNode(data, executable=executable))

    # -- lookups ---------------------------------------------------------

    def get_node(self, path: StorePath) -> Node:
        if not self.has_path(path):
            raise UnknownPath(path.render())
        return archive.read_tree(self.physical(path))

    def _meta(self, path: StorePath) -> dict:
        if not self.has_path(path):
            raise UnknownPath(path.render())
        with open(self._meta_file(path), "r", encoding="utf-8") as f:
            return json.load(f)

    def references(self, path: StorePath) -> tuple[StorePath, ...]:
        return tuple(StorePath.parse(p) for p in self._meta(path)["references"])

    def deriver(self, path: StorePath) -> StorePath | None:
        raw = self._meta(path)["deriver"]
        return StorePath.parse(raw) if raw else None

    def list_closure(self, path: StorePath) -> set[StorePath]:
        """Reflexive-transitive closure over recorded reference edges."""
        seen: set[StorePath] = set()
        queue = [path]
        while queue:
            p = queue.pop()
            if p in seen:
                continue
            seen.add(p)
            queue.extend(r for r in self.references(p) if r not in seen)
        return seen

    # -- archives ----------------------------------------------------------

    def export_archive(self, path: StorePath) -> bytes:
        return archive.encode(self.get_node(path))

    def import_archive(
        self,
        data: bytes,
        path: StorePath,
        references: tuple[StorePath, ...] = (),
        deriver: StorePath | None = None,
    ) -> StorePath:
        node = archive.decode(data)
        return self.register(path, node, references=references, deriver=deriver)

    def import_source_archive(self, data: bytes, name: str) -> StorePath:
        node = archive.decode(data)
        return self.add_tree(name, node)


def _force_remove(path: str):
    def onerror(func, p, exc_info):
        os.chmod(os.path.dirname(p), 0o755)
        os.chmod(p, 0o755)
        func(p)

    if os.path.isdir(path) and not os.path.islink(path):
        shutil.rmtree(path, onerror=onerror)
    else:
        os.remove(path)


def tree_digest(node: Node) -> str:
    """Truncated digest of a node's canonical archive, base32-rendered."""
    return truncated_sha256(archive.encode(node))
