"""Realize derivations: schedule, substitute, execute, verify, register.

Hermeticity is enforced by environment construction.  A builder subprocess
sees exactly: the derivation's env, one variable per output pointing at a
staging path, a PATH made of the inputs' ``<output>/bin`` directories, and
whatever the sandbox policy exposes.  Store paths in that environment are
always the logical ``/mfpm/store`` renderings, and staging and build
directories live under a fixed work root, so the environment is a pure
function of (derivation, policy) — independent of the physical store
location, the working directory and the user's temp settings.

Builders are plain executables (the test corpus uses ``#!/bin/sh`` scripts
restricted to shell builtins); OS-level isolation is out of scope.
"""

from __future__ import annotations

import hashlib
import os
import shutil
import subprocess
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

from . import archive
from .archive import FileNode, Node
from .drv import Derivation, Lookup
from .errors import CycleDetected, EvalError, MfpmError
from .paths import StorePath
from .sandbox import SandboxPolicy
from .store import Store

# Fixed location for build and staging trees.  Deliberately not derived from
# TMPDIR or any configuration: output variables must not vary with them.
WORK_ROOT = "/tmp/mfpm-work"

SEED_FILE = ".build-seed"


@dataclass(frozen=True)
class BuildResult:
    drv_path: StorePath
    status: str  # success | failure | substituted | reused
    output_paths: tuple = ()  # ((name, StorePath), ...)
    log: str = ""
    duration_ms: int = 0
    sandbox_version: int = 0

    @property
    def ok(self) -> bool:
        return self.status in ("success", "substituted", "reused")


@dataclass(frozen=True)
class RealizeOptions:
    substituters: tuple = ()
    force_rebuild: frozenset = frozenset()  # of StorePath (drv paths)
    sandbox: SandboxPolicy = field(default_factory=SandboxPolicy.v2)
    max_parallel: int = 1
    retries: int = 0
    source_mirror: str | None = None
    state_dir: str | None = None

    def __post_init__(self):
        if self.max_parallel < 1:
            raise ValueError("max_parallel must be >= 1")


def build_plan(targets: list[StorePath], lookup: Lookup) -> list[list[StorePath]]:
    """Topological waves over the input-derivation DAG (deepest first)."""
    deps: dict[StorePath, list[StorePath]] = {}
    stack = list(targets)
    on_path: set[StorePath] = set()

    def visit(path: StorePath, trail: tuple):
        if path in deps:
            if path in trail:
                raise CycleDetected(f"derivation cycle through {path}")
            return
        if path in trail:
            raise CycleDetected(f"derivation cycle through {path}")
        drv = lookup(path)
        inputs = [StorePath.parse(p) for p, _ in drv.input_drvs]
        deps[path] = inputs
        for inp in inputs:
            visit(inp, trail + (path,))

    for t in targets:
        visit(t, ())

    level: dict[StorePath, int] = {}

    def depth(path: StorePath) -> int:
        if path in level:
            return level[path]
        d = 1 + max((depth(i) for i in deps[path]), default=-1)
        level[path] = d
        return d

    for p in deps:
        depth(p)
    waves: list[list[StorePath]] = [[] for _ in range(max(level.values(), default=-1) + 1)]
    for p, d in level.items():
        waves[d].append(p)
    for wave in waves:
        wave.sort(key=lambda p: p.render())
    return waves


class Realizer:
    def __init__(self, store: Store, lookup: Lookup, options: RealizeOptions):
        self.store = store
        self.lookup = lookup
        self.options = options
        self.executed: list[StorePath] = []  # every builder invocation, in completion order
        self._lock = threading.Lock()

    # -- public ----------------------------------------------------------

    def realize(self, targets: list[StorePath]) -> dict[StorePath, BuildResult]:
        results: dict[StorePath, BuildResult] = {}
        for wave in build_plan(targets, self.lookup):
            pending = [p for p in wave if p not in results]
            if self.options.max_parallel > 1 and len(pending) > 1:
                with ThreadPoolExecutor(max_workers=self.options.max_parallel) as pool:
                    for path, result in zip(pending, pool.map(lambda p: self._one(p, results), pending)):
                        results[path] = result
            else:
                for path in pending:
                    results[path] = self._one(path, results)
        return results

    # -- per-derivation --------------------------------------------------

    def _one(self, path: StorePath, prior: dict[StorePath, BuildResult]) -> BuildResult:
        drv = self.lookup(path)
        outputs = tuple((n, StorePath.parse(p)) for n, p in drv.outputs)
        input_paths = [StorePath.parse(p) for p, _ in drv.input_drvs]
        failed_inputs = sorted(p.render() for p in input_paths if p in prior and not prior[p].ok)
        if failed_inputs:
            return BuildResult(
                path, "failure", outputs,
                log="dependency failed: " + " ".join(sorted(failed_inputs)),
                sandbox_version=self.options.sandbox.version,
            )
        forced = path in self.options.force_rebuild
        if not forced and all(self.store.has_path(p) for _, p in outputs):
            return BuildResult(path, "reused", outputs, sandbox_version=self.options.sandbox.version)
        if not forced:
            substituted = self._try_substitute(path, drv, outputs)
            if substituted is not None:
                return substituted
        return self._execute_with_retries(path, drv, outputs)

    def _try_substitute(self, path: StorePath, drv: Derivation, outputs) -> BuildResult | None:
        for substituter in self.options.substituters:
            entries = []
            for _, out_path in outputs:
                entry = substituter.query(out_path)
                if entry is None:
                    break
                entries.append((out_path, entry))
            else:
                try:
                    for out_path, entry in entries:
                        if not self.store.has_path(out_path):
                            data = substituter.fetch(out_path)
                            refs = tuple(StorePath.parse(r) for r in entry.references)
                            deriver = StorePath.parse(entry.deriver) if entry.deriver else None
                            self.store.import_archive(data, out_path, references=refs, deriver=deriver)
                except MfpmError as e:
                    return BuildResult(
                        path, "failure", outputs, log=f"substitution failed: {e}",
                        sandbox_version=self.options.sandbox.version,
                    )
                return BuildResult(
                    path, "substituted", outputs,
                    log="substituted " + " ".join(p.render() for _, p in outputs),
                    sandbox_version=self.options.sandbox.version,
                )
        return None

    def _execute_with_retries(self, path: StorePath, drv: Derivation, outputs) -> BuildResult:
        result = self._execute(path, drv, outputs)
        attempt = 0
        while not result.ok and attempt < self.options.retries:
            attempt += 1
            result = self._execute(path, drv, outputs)
        return result

    def _execute(self, path: StorePath, drv: Derivation, outputs) -> BuildResult:
        started = time.monotonic()
        serial = self._next_serial(path)
        build_dir = os.path.join(WORK_ROOT, "build", path.digest)
        _fresh_dir(build_dir)
        seed = hashlib.sha256(f"seed:{path.digest}:{serial}".encode("ascii")).digest()[0]
        with open(os.path.join(build_dir, SEED_FILE), "w", encoding="ascii") as f:
            f.write(f"{seed}\n")

        staging: dict[str, str] = {}
        for name, out_path in outputs:
            stage = os.path.join(WORK_ROOT, "stage", f"{out_path.digest}-{out_path.name}")
            if os.path.lexists(stage):
                _remove_any(stage)
            staging[name] = stage
        os.makedirs(os.path.join(WORK_ROOT, "stage"), exist_ok=True)

        env = self._environment(drv, staging)
        builder_physical = self._builder_physical(drv)
        if builder_physical is None:
            log = f"builder {drv.builder} is not present in the store"
            return self._finish_failure(path, drv, log, started)

        try:
            proc = subprocess.run(
                [builder_physical, *drv.args],
                env=env,
                cwd=build_dir,
                stdout=subprocess.PIPE,
                stderr=subprocess.STDOUT,
                timeout=120,
            )
            log = proc.stdout.decode("utf-8", "replace")
            exit_code = proc.returncode
        except (OSError, subprocess.TimeoutExpired) as e:
            return self._finish_failure(path, drv, f"builder could not run: {e}", started)

        with self._lock:
            self.executed.append(path)
        if exit_code != 0:
            self._write_log(path, log)
            return BuildResult(
                path, "failure", outputs, log=log, sandbox_version=self.options.sandbox.version,
                duration_ms=int((time.monotonic() - started) * 1000),
            )

        try:
            registered = self._register_outputs(drv, outputs, staging, path)
        except MfpmError as e:
            log += f"\n{type(e).__name__}: {e}\n"
            self._write_log(path, log)
            return BuildResult(
                path, "failure", outputs, log=log, sandbox_version=self.options.sandbox.version,
                duration_ms=int((time.monotonic() - started) * 1000),
            )
        self._write_log(path, log)
        return BuildResult(
            path, "success", registered, log=log,
            duration_ms=int((time.monotonic() - started) * 1000),
            sandbox_version=self.options.sandbox.version,
        )

    def _finish_failure(self, path: StorePath, drv: Derivation, log: str, started: float) -> BuildResult:
        self._write_log(path, log)
        return BuildResult(
            path, "failure", tuple((n, StorePath.parse(p)) for n, p in drv.outputs),
            log=log, sandbox_version=self.options.sandbox.version,
            duration_ms=int((time.monotonic() - started) * 1000),
        )

    # -- environment -------------------------------------------------------

    def _environment(self, drv: Derivation, staging: dict[str, str]) -> dict[str, str]:
        env = drv.env_dict()
        for name, stage in staging.items():
            env[name] = stage
        bin_dirs: list[str] = []
        for input_path, out_names in drv.input_drvs:
            input_drv = self.lookup(StorePath.parse(input_path))
            for out_name in out_names:
                rendered = dict(input_drv.outputs)[out_name]
                candidate = f"{rendered}/bin"
                if candidate not in bin_dirs:
                    bin_dirs.append(candidate)
        env["PATH"] = ":".join(bin_dirs)
        env.update(self.options.sandbox.host_info())
        if drv.fixed_output is not None and self.options.source_mirror:
            if self.options.sandbox.network_allowed(True):
                env["MFPM_SOURCE_MIRROR"] = os.path.abspath(self.options.source_mirror)
        return env

    def _builder_physical(self, drv: Derivation) -> str | None:
        builder = StorePath.parse(drv.builder)
        if self.store.has_path(builder):
            return self.store.physical(builder)
        # Builders that are outputs of input derivations live inside those
        # outputs' trees.
        for input_path, out_names in drv.input_drvs:
            input_drv = self.lookup(StorePath.parse(input_path))
            for out_name in out_names:
                rendered = dict(input_drv.outputs)[out_name]
                if drv.builder == rendered:
                    out = StorePath.parse(rendered)
                    if self.store.has_path(out):
                        return self.store.physical(out)
                if drv.builder.startswith(rendered + "/"):
                    out = StorePath.parse(rendered)
                    if self.store.has_path(out):
                        suffix = drv.builder[len(rendered) + 1 :]
                        return os.path.join(self.store.physical(out), suffix)
        return None

    # -- output registration ------------------------------------------------

    def _register_outputs(self, drv: Derivation, outputs, staging: dict[str, str], drv_path: StorePath):
        candidates = self._reference_candidates(drv, outputs)
        registered = []
        for name, out_path in outputs:
            stage = staging[name]
            if not os.path.lexists(stage):
                raise EvalError(f"builder did not produce output {name!r} at {stage}")
            node = archive.read_tree(stage)
            if drv.fixed_output is not None:
                node = self._check_fixed_output(drv, node)
            refs = _scan_references(node, candidates, exclude=out_path)
            self.store.register(out_path, node, references=refs, deriver=drv_path)
            _remove_any(stage)
            registered.append((name, out_path))
        return tuple(registered)

    def _check_fixed_output(self, drv: Derivation, node: Node) -> Node:
        from .errors import FixedOutputHashMismatch

        if not isinstance(node, FileNode):
            raise FixedOutputHashMismatch(drv.fixed_output[1], "<not a regular file>")
        got = hashlib.sha256(node.data).hexdigest()
        if got != drv.fixed_output[1]:
            raise FixedOutputHashMismatch(drv.fixed_output[1], got)
        return node

    def _reference_candidates(self, drv: Derivation, outputs) -> dict[str, StorePath]:
        candidates: dict[str, StorePath] = {}
        for input_path, out_names in drv.input_drvs:
            input_drv = self.lookup(StorePath.parse(input_path))
            for out_name in out_names:
                p = StorePath.parse(dict(input_drv.outputs)[out_name])
                candidates[p.digest] = p
        for src in drv.input_srcs:
            p = StorePath.parse(src)
            candidates[p.digest] = p
        for _, p in outputs:
            candidates[p.digest] = p
        return candidates

    # -- bookkeeping -------------------------------------------------------

    def _next_serial(self, path: StorePath) -> int:
        """Count of builder executions for this derivation, persisted so a
        later audit run continues the sequence instead of replaying it."""
        state = self.options.state_dir
        if state is None:
            return 0
        serial_dir = os.path.join(state, "serials")
        os.makedirs(serial_dir, exist_ok=True)
        serial_file = os.path.join(serial_dir, path.digest)
        with self._lock:
            current = 0
            if os.path.exists(serial_file):
                with open(serial_file, "r", encoding="ascii") as f:
                    current = int(f.read().strip() or "0")
            with open(serial_file, "w", encoding="ascii") as f:
                f.write(str(current + 1))
        return current

    def _write_log(self, path: StorePath, log: str):
        state = self.options.state_dir
        if state is None:
            return
        log_dir = os.path.join(state, "logs")
        os.makedirs(log_dir, exist_ok=True)
        with open(os.path.join(log_dir, f"{path.digest}.log"), "w", encoding="utf-8") as f:
            f.write(log)
        stamp = time.strftime("%Y-%m-%dT%H:%M:%S")
        with open(os.path.join(log_dir, f"{path.digest}.log.times"), "w", encoding="utf-8") as f:
            for i, _ in enumerate(log.splitlines()):
                f.write(f"{stamp} line {i + 1}\n")


def realize(targets, store: Store, lookup: Lookup, options: RealizeOptions) -> dict[StorePath, BuildResult]:
    return Realizer(store, lookup, options).realize(list(targets))


def spawn_env(drv_path: StorePath, store: Store, lookup: Lookup, options: RealizeOptions) -> str:
    """Realize a derivation's inputs, then emit a shell rc file exporting its
    build environment without running the builder."""
    drv = lookup(drv_path)
    realizer = Realizer(store, lookup, options)
    inputs = [StorePath.parse(p) for p, _ in drv.input_drvs]
    results = realizer.realize(inputs)
    failures = [r for r in results.values() if not r.ok]
    if failures:
        raise EvalError(f"cannot prepare environment: {failures[0].log}")
    env = realizer._environment(drv, staging={})
    lines = [f"export {k}={_sh_quote(v)}\n" for k, v in sorted(env.items())]
    rc_dir = os.path.join(options.state_dir or WORK_ROOT, "shellrc")
    os.makedirs(rc_dir, exist_ok=True)
    rc_path = os.path.join(rc_dir, f"{drv_path.digest}.rc")
    with open(rc_path, "w", encoding="utf-8") as f:
        f.writelines(lines)
    return rc_path


def _sh_quote(value: str) -> str:
    return "'" + value.replace("'", "'\\''") + "'"


def _scan_references(node: Node, candidates: dict[str, StorePath], exclude: StorePath) -> tuple:
    found: set[StorePath] = set()
    for blob in archive.iter_file_data(node):
        for digest, path in candidates.items():
            if path != exclude and digest.encode("ascii") in blob:
                found.add(path)
    return tuple(sorted(found))


def _fresh_dir(path: str):
    if os.path.lexists(path):
        _remove_any(path)
    os.makedirs(path)


def _remove_any(path: str):
    if os.path.isdir(path) and not os.path.islink(path):
        shutil.rmtree(path)
    else:
        os.remove(path)
