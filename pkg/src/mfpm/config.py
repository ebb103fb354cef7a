"""Global configuration: store root, state dir, source mirror."""

from __future__ import annotations

import os
from dataclasses import dataclass

from .errors import MfpmError


@dataclass(frozen=True)
class GlobalConfig:
    store_root: str
    state_dir: str
    source_mirror: str | None = None
    log_level: str = "warning"

    def __post_init__(self):
        if os.path.abspath(self.store_root) == os.path.abspath(self.state_dir):
            raise MfpmError("state dir must be distinct from the store root")

    @classmethod
    def resolve(
        cls,
        store_root: str | None = None,
        state_dir: str | None = None,
        source_mirror: str | None = None,
        log_level: str = "warning",
    ) -> "GlobalConfig":
        home = os.path.expanduser("~")
        root = store_root or os.environ.get("MFPM_STORE_ROOT") or os.path.join(home, ".mfpm", "store")
        state = state_dir or os.environ.get("MFPM_STATE_DIR") or os.path.join(home, ".mfpm", "state")
        config = cls(
            store_root=os.path.abspath(root),
            state_dir=os.path.abspath(state),
            source_mirror=os.path.abspath(source_mirror) if source_mirror else None,
            log_level=log_level,
        )
        os.makedirs(config.store_root, exist_ok=True)
        os.makedirs(config.state_dir, exist_ok=True)
        return config
