"""Build sandbox policies.

A policy pins down exactly what host information leaks into a build
environment.  v1 exposes the kernel version and OS name (the loose,
historical behaviour); v2 exposes nothing.  The values are snapshotted when
the policy is constructed, so a policy value fully determines the
environment a builder sees.

Network access is simulated through the source mirror and granted only to
fixed-output fetch derivations, never to ordinary builds.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

V1_EXPOSED_NAMES = ("KERNEL_VERSION", "OS_NAME")


@dataclass(frozen=True)
class SandboxPolicy:
    version: int
    exposed_host_info: tuple = ()  # sorted ((name, value), ...)
    allowed_env_passthrough: frozenset = field(default_factory=frozenset)

    def network_allowed(self, fixed_output: bool) -> bool:
        return fixed_output

    def host_info(self) -> dict[str, str]:
        return dict(self.exposed_host_info)

    @classmethod
    def v1(cls, kernel_version: str | None = None, os_name: str | None = None) -> "SandboxPolicy":
        uname = os.uname()
        info = (
            ("KERNEL_VERSION", kernel_version if kernel_version is not None else uname.release),
            ("OS_NAME", os_name if os_name is not None else uname.sysname),
        )
        return cls(version=1, exposed_host_info=info)

    @classmethod
    def v2(cls) -> "SandboxPolicy":
        return cls(version=2, exposed_host_info=())

    @classmethod
    def from_name(cls, name: str) -> "SandboxPolicy":
        if name == "v1":
            return cls.v1()
        if name == "v2":
            return cls.v2()
        raise ValueError(f"unknown sandbox policy {name!r}")
