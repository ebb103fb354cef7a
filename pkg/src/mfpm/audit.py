"""Reproducibility audit: re-evaluate recorded revisions, compare job sets
and output paths against CI history, rebuild historical jobs from cache,
and classify what still fails.

Failure classes are detected from structured builder-emitted markers
(`REJECT-HOST-INFO:`/`MISSING-ENV:`) plus a retry probe, with `unknown`
reserved for anything unmarked.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from concurrent.futures import ThreadPoolExecutor

from .build import RealizeOptions, Realizer
from .ci import RecordStore, Revision, evaluate_revision
from .drv import store_lookup
from .errors import MissingHistoricalRecord
from .lang.eval import EvalConfig
from .lang.jobs import parse_job_name
from .paths import StorePath
from .sandbox import V1_EXPOSED_NAMES, SandboxPolicy
from .store import Store

CURRENT_SANDBOX_LEAKAGE = "current-sandbox-leakage"
FLAKY_TEST = "flaky-test"
PAST_SANDBOX_LEAKAGE = "past-sandbox-leakage"
UNKNOWN = "unknown"

FAILURE_CLASSES = (CURRENT_SANDBOX_LEAKAGE, FLAKY_TEST, PAST_SANDBOX_LEAKAGE, UNKNOWN)

_REJECT_RE = re.compile(r"^REJECT-HOST-INFO:", re.MULTILINE)
_MISSING_RE = re.compile(r"^MISSING-ENV:(\S+)", re.MULTILINE)


# -- revision sampling -----------------------------------------------------


@dataclass(frozen=True)
class SamplePlan:
    requested: int
    chosen: tuple  # revision ids, strictly increasing in timestamp
    mean_spacing: float
    min_spacing: float
    max_spacing: float


def sample_revisions(available: list[tuple[str, int]], k: int) -> SamplePlan:
    """Pick up to k revisions with maximal spread and regular spacing.

    Always includes the earliest and latest; each index targets an evenly
    spaced instant and takes the nearest revision, ties going to the earlier
    one.  Duplicate picks collapse.
    """
    if not available:
        raise ValueError("no revisions to sample from")
    ordered = sorted(available, key=lambda item: item[1])
    k = max(1, min(k, len(ordered)))
    if k == 1 or len(ordered) == 1:
        chosen = [ordered[0]]
    else:
        t_min, t_max = ordered[0][1], ordered[-1][1]
        picks = []
        for i in range(k):
            target = t_min + i * (t_max - t_min) / (k - 1)
            best = min(ordered, key=lambda item: (abs(item[1] - target), item[1]))
            picks.append(best)
        seen = set()
        chosen = []
        for item in picks:
            if item[0] not in seen:
                seen.add(item[0])
                chosen.append(item)
        chosen.sort(key=lambda item: item[1])
    deltas = [b[1] - a[1] for a, b in zip(chosen, chosen[1:])]
    return SamplePlan(
        requested=k,
        chosen=tuple(item[0] for item in chosen),
        mean_spacing=(sum(deltas) / len(deltas)) if deltas else 0.0,
        min_spacing=float(min(deltas)) if deltas else 0.0,
        max_spacing=float(max(deltas)) if deltas else 0.0,
    )


# -- RQ1: evaluation comparison ---------------------------------------------


@dataclass(frozen=True)
class JobSetDiff:
    identical: bool
    missing_locally: tuple
    extra_locally: tuple
    known_bug_exclusions: tuple


@dataclass(frozen=True)
class PathDiffReport:
    total_jobs: int
    matching: int
    differing: tuple  # ((display, historical {out: path}, local {out: path}, impure), ...)

    @property
    def match_rate(self) -> float:
        return self.matching / self.total_jobs if self.total_jobs else 1.0


def _has_dotted_segment(display_name: str) -> bool:
    return any("." in seg for seg in parse_job_name(display_name))


def audit_evaluation(
    revision: Revision,
    records: RecordStore,
    store: Store,
    eval_config: EvalConfig = EvalConfig(),
    hydra_dot_bug: bool = False,
) -> tuple[JobSetDiff, PathDiffReport]:
    historical, _ = records.load_revision(revision.id)
    if historical is None:
        raise MissingHistoricalRecord(f"no CI record for revision {revision.id}")
    local_record, local_jobs = evaluate_revision(revision, store, eval_config)

    historical_names = {name for name, _, _ in historical.jobs}
    local_names = {j.display_name for j in local_jobs}

    exclusions: set[str] = set()
    if hydra_dot_bug:
        exclusions = {n for n in historical_names | local_names if _has_dotted_segment(n)}
        historical_names -= exclusions
        local_names -= exclusions

    missing = tuple(sorted(historical_names - local_names))
    extra = tuple(sorted(local_names - historical_names))
    diff = JobSetDiff(
        identical=not missing and not extra,
        missing_locally=missing,
        extra_locally=extra,
        known_bug_exclusions=tuple(sorted(exclusions)),
    )

    historical_paths = {name: dict(outs) for name, _, outs in historical.jobs}
    local_paths = {j.display_name: {n: p.render() for n, p in j.output_paths} for j in local_jobs}
    impure = {j.display_name: j.impure for j in local_jobs}
    common = sorted(set(historical_paths) & set(local_paths))
    differing = []
    matching = 0
    for name in common:
        if historical_paths[name] == local_paths[name]:
            matching += 1
        else:
            differing.append((name, historical_paths[name], local_paths[name], impure[name]))
    report = PathDiffReport(total_jobs=len(common), matching=matching, differing=tuple(differing))
    return diff, report


# -- RQ2: rebuilding ---------------------------------------------------------


@dataclass(frozen=True)
class RebuildReport:
    attempted: int
    succeeded: int
    failed: tuple  # ((display_name, failure_class, log_ref), ...)

    @property
    def success_rate(self) -> float:
        return self.succeeded / self.attempted if self.attempted else 1.0

    def class_counts(self) -> dict[str, int]:
        counts = {cls: 0 for cls in FAILURE_CLASSES}
        for _, cls, _ in self.failed:
            counts[cls] += 1
        return counts


def classify_failure(log: str, probe, retries: int) -> str:
    """Order matters: explicit rejection marker, then the flakiness probe,
    then missing v1-era variables; anything else stays unknown."""
    if _REJECT_RE.search(log):
        return CURRENT_SANDBOX_LEAKAGE
    for _ in range(retries):
        if probe():
            return FLAKY_TEST
    m = _MISSING_RE.search(log)
    if m and m.group(1) in V1_EXPOSED_NAMES:
        return PAST_SANDBOX_LEAKAGE
    return UNKNOWN


def audit_rebuild(
    revision: Revision,
    records: RecordStore,
    cache,
    sandbox: SandboxPolicy,
    retries: int,
    store: Store,
    state_dir: str,
    source_mirror: str | None = None,
    eval_config: EvalConfig = EvalConfig(),
    max_parallel: int = 1,
) -> RebuildReport:
    historical, rows = records.load_revision(revision.id)
    if historical is None:
        raise MissingHistoricalRecord(f"no CI record for revision {revision.id}")
    _, local_jobs = evaluate_revision(revision, store, eval_config)
    by_name = {j.display_name: j for j in local_jobs}
    attempted_names = sorted(
        row.display_name for row in rows if row.status == "success" and row.display_name in by_name
    )

    lookup = store_lookup(store)

    def attempt(drv_path: StorePath) -> tuple[bool, str]:
        options = RealizeOptions(
            substituters=(cache,),
            force_rebuild=frozenset({drv_path}),
            sandbox=sandbox,
            max_parallel=1,
            source_mirror=source_mirror,
            state_dir=state_dir,
        )
        realizer = Realizer(store, lookup, options)
        results = realizer.realize([drv_path])
        result = results[drv_path]
        return result.ok, result.log

    def rebuild_one(name: str) -> tuple[str, bool, str]:
        job = by_name[name]
        ok, log = attempt(job.drv_path)
        if ok:
            return name, True, ""
        failure_class = classify_failure(log, lambda: attempt(job.drv_path)[0], retries)
        return name, False, failure_class

    if max_parallel > 1 and len(attempted_names) > 1:
        with ThreadPoolExecutor(max_workers=max_parallel) as pool:
            outcomes = list(pool.map(rebuild_one, attempted_names))
    else:
        outcomes = [rebuild_one(name) for name in attempted_names]

    failed = tuple(
        (name, cls, f"logs/{by_name[name].drv_path.digest}.log")
        for name, ok, cls in outcomes
        if not ok
    )
    return RebuildReport(
        attempted=len(attempted_names),
        succeeded=sum(1 for _, ok, _ in outcomes if ok),
        failed=failed,
    )
