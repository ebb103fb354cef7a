"""Hydra-lite CI: evaluate revisions in order, build what the cache lacks,
push outputs, promote a channel, and persist the historical record.

Revisions are immutable directory snapshots listed in a tab-separated
manifest (``<timestamp>\\t<dirname>`` per line); each revision's identity is
the content digest of its canonical archive, so the record survives moving
or renaming the snapshot tree.
"""

from __future__ import annotations

import json
import os
import threading
from dataclasses import dataclass, field

from . import archive
from .build import RealizeOptions, Realizer
from .cache import BinaryCache
from .drv import store_lookup
from .errors import CorruptRecord, MfpmError
from .lang.eval import EvalConfig
from .lang.jobs import eval_job_set
from .paths import StorePath, truncated_sha256
from .sandbox import SandboxPolicy
from .store import Store

ROOT_FILE = "default.rcp"


@dataclass(frozen=True)
class Revision:
    id: str
    timestamp: int
    dirname: str
    path: str  # absolute snapshot directory
    root_file: str = ROOT_FILE


@dataclass(frozen=True)
class EvalRecord:
    revision_id: str
    jobs: tuple  # ((display_name, drv_path, ((out, path), ...)), ...) sorted
    eval_errors: tuple  # ((display_name, message), ...)
    impure_jobs: tuple  # sorted display names


@dataclass(frozen=True)
class BuildRecordRow:
    revision_id: str
    display_name: str
    status: str  # success | failure | cached
    output_paths: tuple  # ((out, path), ...)
    log_ref: str


def revision_id(snapshot_dir: str) -> str:
    return truncated_sha256(archive.encode(archive.read_tree(snapshot_dir)))


def load_manifest(revisions_root: str, manifest: str = "revisions.tsv") -> list[Revision]:
    manifest_path = os.path.join(revisions_root, manifest)
    revisions = []
    with open(manifest_path, "r", encoding="utf-8") as f:
        for line_no, line in enumerate(f, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            try:
                timestamp, dirname = line.split("\t")
            except ValueError as e:
                raise CorruptRecord(line_no, f"manifest line {line!r}") from e
            snapshot = os.path.join(revisions_root, dirname)
            revisions.append(
                Revision(
                    id=revision_id(snapshot),
                    timestamp=int(timestamp),
                    dirname=dirname,
                    path=os.path.abspath(snapshot),
                )
            )
    revisions.sort(key=lambda r: r.timestamp)
    return revisions


class RecordStore:
    """Append-only JSON-lines history, one file per revision."""

    def __init__(self, state_dir: str):
        self.directory = os.path.join(state_dir, "records")
        os.makedirs(self.directory, exist_ok=True)
        self._lock = threading.Lock()

    def _file(self, rev_id: str) -> str:
        return os.path.join(self.directory, f"{rev_id}.jsonl")

    def append_row(self, rev_id: str, row: dict):
        line = json.dumps(row, sort_keys=True, separators=(",", ":")) + "\n"
        with self._lock:
            with open(self._file(rev_id), "a", encoding="utf-8") as f:
                f.write(line)

    def rows(self, rev_id: str) -> list[dict]:
        path = self._file(rev_id)
        if not os.path.exists(path):
            return []
        rows = []
        with open(path, "r", encoding="utf-8") as f:
            for line_no, line in enumerate(f, 1):
                if not line.strip():
                    continue
                try:
                    rows.append(json.loads(line))
                except json.JSONDecodeError as e:
                    raise CorruptRecord(line_no, str(e)) from e
        return rows

    def record_eval(self, record: EvalRecord):
        self.append_row(
            record.revision_id,
            {
                "kind": "eval",
                "revision": record.revision_id,
                "jobs": [
                    {"name": n, "drv": d, "outputs": {o: p for o, p in outs}}
                    for n, d, outs in record.jobs
                ],
                "errors": [[n, m] for n, m in record.eval_errors],
                "impure": list(record.impure_jobs),
            },
        )

    def record_build(self, row: BuildRecordRow):
        self.append_row(
            row.revision_id,
            {
                "kind": "build",
                "revision": row.revision_id,
                "name": row.display_name,
                "status": row.status,
                "outputs": {o: p for o, p in row.output_paths},
                "log": row.log_ref,
            },
        )

    def load_revision(self, rev_id: str) -> tuple[EvalRecord | None, list[BuildRecordRow]]:
        record = None
        builds = []
        for row in self.rows(rev_id):
            if row.get("kind") == "eval":
                record = EvalRecord(
                    revision_id=row["revision"],
                    jobs=tuple(
                        (j["name"], j["drv"], tuple(sorted(j["outputs"].items())))
                        for j in row["jobs"]
                    ),
                    eval_errors=tuple((n, m) for n, m in row["errors"]),
                    impure_jobs=tuple(row["impure"]),
                )
            elif row.get("kind") == "build":
                builds.append(
                    BuildRecordRow(
                        revision_id=row["revision"],
                        display_name=row["name"],
                        status=row["status"],
                        output_paths=tuple(sorted(row["outputs"].items())),
                        log_ref=row["log"],
                    )
                )
        return record, builds


@dataclass
class CiRunSummary:
    revisions: list = field(default_factory=list)  # (revision_id, promoted)
    statuses: dict = field(default_factory=dict)  # revision_id -> {display: status}


def evaluate_revision(revision: Revision, store: Store, config: EvalConfig) -> tuple[EvalRecord, list]:
    root = os.path.join(revision.path, revision.root_file)
    jobs, trace = eval_job_set(root, config.platform, store, config)
    record = EvalRecord(
        revision_id=revision.id,
        jobs=tuple(
            (j.display_name, j.drv_path.render(), tuple((n, p.render()) for n, p in j.output_paths))
            for j in jobs
        ),
        eval_errors=tuple(
            (_display(e[0]), e[1]) for e in trace.errors
        ),
        impure_jobs=tuple(sorted(j.display_name for j in jobs if j.impure)),
    )
    return record, jobs


def _display(attr_path: tuple) -> str:
    from .lang.jobs import job_display_name

    return job_display_name(attr_path)


def ci_run(
    revisions: list[Revision],
    important_jobs: list[str],
    cache: BinaryCache,
    store: Store,
    state_dir: str,
    sandbox: SandboxPolicy,
    source_mirror: str | None = None,
    max_parallel: int = 1,
    eval_config: EvalConfig = EvalConfig(),
) -> CiRunSummary:
    records = RecordStore(state_dir)
    summary = CiRunSummary()
    for revision in sorted(revisions, key=lambda r: r.timestamp):
        try:
            record, jobs = evaluate_revision(revision, store, eval_config)
        except (OSError, MfpmError) as e:
            summary.revisions.append((revision.id, False))
            records.append_row(revision.id, {"kind": "revision-error", "revision": revision.id, "error": str(e)})
            continue
        records.record_eval(record)

        cached: dict[str, bool] = {}
        to_build = []
        for job in jobs:
            if all(cache.query(p) is not None for _, p in job.output_paths):
                cached[job.display_name] = True
            else:
                to_build.append(job)

        options = RealizeOptions(
            substituters=(cache,),
            sandbox=sandbox,
            max_parallel=max_parallel,
            source_mirror=source_mirror,
            state_dir=state_dir,
        )
        realizer = Realizer(store, store_lookup(store), options)
        results = realizer.realize([job.drv_path for job in to_build]) if to_build else {}

        statuses: dict[str, str] = {}
        for job in jobs:
            if cached.get(job.display_name):
                status, log_ref = "cached", ""
            else:
                result = results[job.drv_path]
                status = "success" if result.ok else "failure"
                log_ref = f"logs/{job.drv_path.digest}.log"
                if result.ok:
                    for _, out_path in job.output_paths:
                        cache.push_closure(store, out_path)
            statuses[job.display_name] = status
            records.record_build(
                BuildRecordRow(
                    revision_id=revision.id,
                    display_name=job.display_name,
                    status=status,
                    output_paths=tuple((n, p.render()) for n, p in job.output_paths),
                    log_ref=log_ref,
                )
            )

        promoted = all(statuses.get(name) in ("success", "cached") for name in important_jobs)
        records.append_row(revision.id, {"kind": "promotion", "revision": revision.id, "promoted": promoted})
        if promoted:
            with open(os.path.join(state_dir, "channel"), "w", encoding="utf-8") as f:
                f.write(revision.id + "\n")
        summary.revisions.append((revision.id, promoted))
        summary.statuses[revision.id] = statuses
    return summary
