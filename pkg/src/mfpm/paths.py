"""Store paths: content-addressed names under the fixed logical prefix.

Every object mfpm tracks (derivation files, sources, build outputs) lives at
``/mfpm/store/<digest32>-<name>`` where ``digest32`` is the first 20 bytes of
a SHA-256, rendered in lowercase RFC 4648 base32 without padding.  The prefix
is a logical constant: it never changes with the physical store location, so
rendered paths are machine-independent.
"""

from __future__ import annotations

import base64
import hashlib
import re
from dataclasses import dataclass

from .errors import StorePathError

STORE_PREFIX = "/mfpm/store"

DIGEST_BYTES = 20
DIGEST_CHARS = 32

_DIGEST_RE = re.compile(r"^[a-z2-7]{32}$")
# Leading dot excluded so names never hide as dotfiles on disk.
_NAME_RE = re.compile(r"^[A-Za-z0-9_+][A-Za-z0-9_+.-]*$")


def base32_digest(digest: bytes) -> str:
    if len(digest) != DIGEST_BYTES:
        raise StorePathError(f"digest must be {DIGEST_BYTES} bytes, got {len(digest)}")
    return base64.b32encode(digest).decode("ascii").lower()


def truncated_sha256(data: bytes) -> str:
    return base32_digest(hashlib.sha256(data).digest()[:DIGEST_BYTES])


def valid_name(name: str) -> bool:
    return bool(_NAME_RE.match(name))


@dataclass(frozen=True, order=True)
class StorePath:
    digest: str
    name: str

    def __post_init__(self):
        if not _DIGEST_RE.match(self.digest):
            raise StorePathError(f"bad digest {self.digest!r}")
        if not valid_name(self.name):
            raise StorePathError(f"bad store object name {self.name!r}")

    def render(self) -> str:
        return f"{STORE_PREFIX}/{self.digest}-{self.name}"

    @property
    def is_derivation(self) -> bool:
        return self.name.endswith(".drv")

    def __str__(self) -> str:
        return self.render()

    @classmethod
    def parse(cls, rendered: str) -> "StorePath":
        if not rendered.startswith(STORE_PREFIX + "/"):
            raise StorePathError(f"{rendered!r} is not under {STORE_PREFIX}")
        rest = rendered[len(STORE_PREFIX) + 1 :]
        if len(rest) < DIGEST_CHARS + 2 or rest[DIGEST_CHARS] != "-":
            raise StorePathError(f"{rendered!r} lacks a <digest32>-<name> tail")
        return cls(rest[:DIGEST_CHARS], rest[DIGEST_CHARS + 1 :])

    @classmethod
    def for_content(cls, prefix: str, name: str, payload: bytes) -> "StorePath":
        """Digest ``<prefix><payload>`` down to a store path named ``name``."""
        return cls(truncated_sha256(prefix.encode("utf-8") + payload), name)
