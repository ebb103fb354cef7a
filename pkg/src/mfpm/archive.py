"""Canonical archive: a deterministic byte encoding of file trees.

The format (documented in docs/archive-format.md) captures regular files
with a single executable flag, directories, and symlinks.  Timestamps,
owners and other permission bits are deliberately absent, and directory
entries are encoded in byte-lexicographic name order, so the encoding is a
bijection with the tree: equal trees yield equal bytes and vice versa.

Layout: magic ``MFPMAR1\\n`` followed by one recursive frame for the root
(whose name is empty).  Frames:

    file     'F' len(name) name ('x'|'-') len(data) data
    dir      'D' len(name) name count, then `count` child frames
    symlink  'L' len(name) name len(target) target

All integers are 8-byte big-endian.
"""

from __future__ import annotations

import hashlib
import os
import stat
from dataclasses import dataclass, field

from .errors import CorruptArchive

MAGIC = b"MFPMAR1\n"


@dataclass(frozen=True)
class FileNode:
    data: bytes
    executable: bool = False


@dataclass(frozen=True)
class SymlinkNode:
    target: str


@dataclass(frozen=True)
class DirNode:
    entries: dict = field(default_factory=dict)  # name -> node


Node = FileNode | SymlinkNode | DirNode


def _u64(n: int) -> bytes:
    return n.to_bytes(8, "big")


def _frame(name: str, node: Node, out: list):
    name_b = name.encode("utf-8")
    if isinstance(node, FileNode):
        out.append(b"F" + _u64(len(name_b)) + name_b)
        out.append(b"x" if node.executable else b"-")
        out.append(_u64(len(node.data)))
        out.append(node.data)
    elif isinstance(node, DirNode):
        names = sorted(node.entries, key=lambda s: s.encode("utf-8"))
        out.append(b"D" + _u64(len(name_b)) + name_b + _u64(len(names)))
        for child in names:
            _frame(child, node.entries[child], out)
    elif isinstance(node, SymlinkNode):
        target_b = node.target.encode("utf-8")
        out.append(b"L" + _u64(len(name_b)) + name_b + _u64(len(target_b)) + target_b)
    else:
        raise TypeError(f"not an archive node: {node!r}")


def encode(root: Node) -> bytes:
    parts = [MAGIC]
    _frame("", root, parts)
    return b"".join(parts)


def digest(archive_bytes: bytes) -> str:
    """SHA-256 hex of the raw archive bytes (the substitution payload digest)."""
    return hashlib.sha256(archive_bytes).hexdigest()


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.data):
            raise CorruptArchive(self.pos, f"truncated while reading {what}")
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def u64(self, what: str) -> int:
        return int.from_bytes(self.take(8, what), "big")


def _read_frame(r: _Reader) -> tuple[str, Node]:
    at = r.pos
    tag = r.take(1, "frame tag")
    name = r.take(r.u64("name length"), "name").decode("utf-8")
    if tag == b"F":
        flag = r.take(1, "executable flag")
        if flag not in (b"x", b"-"):
            raise CorruptArchive(r.pos - 1, f"bad executable flag {flag!r}")
        data = r.take(r.u64("file size"), "file data")
        return name, FileNode(data, executable=flag == b"x")
    if tag == b"D":
        count = r.u64("entry count")
        entries = {}
        prev: bytes | None = None
        for _ in range(count):
            child_name, child = _read_frame(r)
            key = child_name.encode("utf-8")
            if prev is not None and key <= prev:
                raise CorruptArchive(r.pos, f"directory entries out of order near {child_name!r}")
            prev = key
            entries[child_name] = child
        return name, DirNode(entries)
    if tag == b"L":
        target = r.take(r.u64("target length"), "symlink target").decode("utf-8")
        return name, SymlinkNode(target)
    raise CorruptArchive(at, f"unknown frame tag {tag!r}")


def decode(data: bytes) -> Node:
    r = _Reader(data)
    if r.take(len(MAGIC), "magic") != MAGIC:
        raise CorruptArchive(0, "bad magic")
    name, node = _read_frame(r)
    if name != "":
        raise CorruptArchive(len(MAGIC), "root frame must be unnamed")
    if r.pos != len(data):
        raise CorruptArchive(r.pos, "trailing bytes after root frame")
    return node


def read_tree(path: str) -> Node:
    """Snapshot a filesystem path into an in-memory node."""
    st = os.lstat(path)
    if stat.S_ISLNK(st.st_mode):
        return SymlinkNode(os.readlink(path))
    if stat.S_ISREG(st.st_mode):
        with open(path, "rb") as f:
            return FileNode(f.read(), executable=bool(st.st_mode & stat.S_IXUSR))
    if stat.S_ISDIR(st.st_mode):
        entries = {}
        for entry in os.listdir(path):
            entries[entry] = read_tree(os.path.join(path, entry))
        return DirNode(entries)
    raise CorruptArchive(0, f"unsupported file type at {path}")


def write_tree(node: Node, path: str):
    """Materialize a node at `path`, which must not exist yet."""
    if isinstance(node, FileNode):
        with open(path, "wb") as f:
            f.write(node.data)
        os.chmod(path, 0o555 if node.executable else 0o444)
    elif isinstance(node, SymlinkNode):
        os.symlink(node.target, path)
    elif isinstance(node, DirNode):
        os.mkdir(path)
        for name, child in node.entries.items():
            write_tree(child, os.path.join(path, name))
        os.chmod(path, 0o555)
    else:
        raise TypeError(f"not an archive node: {node!r}")


def iter_file_data(node: Node):
    """Yield the byte content of every regular file and symlink target."""
    if isinstance(node, FileNode):
        yield node.data
    elif isinstance(node, SymlinkNode):
        yield node.target.encode("utf-8")
    elif isinstance(node, DirNode):
        for child in node.entries.values():
            yield from iter_file_data(child)
