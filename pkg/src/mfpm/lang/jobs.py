"""Job-set evaluation: walk a revision's top-level attribute set.

An attribute is a job iff it evaluates to a derivation.  Nested sets are
entered only when they opt in with `recurseForDerivations = true`.  A throwing
attribute is recorded and skipped — one broken package never takes down the
whole evaluation.  Top-level attributes may be evaluated by several workers;
the result is sorted and identical for any worker count.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

from ..errors import EvalError, JobNameError, TopLevelNotAttrs
from .eval import EvalConfig, Evaluator, EvalTrace
from .parser import parse
from .values import VAttrs, VBool, VDrv

RECURSE_MARKER = "recurseForDerivations"


@dataclass(frozen=True)
class Job:
    attr_path: tuple
    display_name: str
    drv_path: object  # StorePath
    output_paths: tuple  # ((name, StorePath), ...)
    impure: bool


def job_display_name(attr_path) -> str:
    if not attr_path:
        raise JobNameError("empty attribute path")
    rendered = []
    for segment in attr_path:
        if "." in segment or '"' in segment:
            escaped = segment.replace("\\", "\\\\").replace('"', '\\"')
            rendered.append(f'"{escaped}"')
        else:
            rendered.append(segment)
    return ".".join(rendered)


def parse_job_name(name: str) -> tuple:
    segments: list[str] = []
    current: list[str] = []
    quoted_done = False
    i = 0
    while i < len(name):
        ch = name[i]
        if ch == ".":
            segments.append("".join(current))
            current = []
            quoted_done = False
            i += 1
            continue
        if quoted_done:
            raise JobNameError(f"{name!r}: text after closing quote at {i}")
        if ch == '"':
            if current:
                raise JobNameError(f"{name!r}: quote inside raw segment at {i}")
            i += 1
            while True:
                if i >= len(name):
                    raise JobNameError(f"{name!r}: unterminated quoted segment")
                ch = name[i]
                if ch == "\\":
                    if i + 1 >= len(name):
                        raise JobNameError(f"{name!r}: dangling escape")
                    current.append(name[i + 1])
                    i += 2
                    continue
                if ch == '"':
                    i += 1
                    break
                current.append(ch)
                i += 1
            quoted_done = True
            continue
        current.append(ch)
        i += 1
    segments.append("".join(current))
    return tuple(segments)


def eval_job_set(
    root_file: str,
    platform: str,
    store,
    config: EvalConfig = EvalConfig(),
) -> tuple[list[Job], EvalTrace]:
    with open(root_file, "r", encoding="utf-8") as f:
        source = f.read()
    trace = EvalTrace()
    evaluator = Evaluator(store, config, trace)
    top = evaluator.eval_source(source)
    if not isinstance(top, VAttrs):
        raise TopLevelNotAttrs(f"{root_file}: top level must evaluate to an attribute set")

    names = sorted(top.members)

    def walk_top(name: str) -> list[Job]:
        jobs: list[Job] = []
        _walk(evaluator, trace, (name,), top.members[name], platform, jobs)
        return jobs

    if config.max_workers > 1 and len(names) > 1:
        with ThreadPoolExecutor(max_workers=config.max_workers) as pool:
            collected = list(pool.map(walk_top, names))
    else:
        collected = [walk_top(name) for name in names]

    jobs = sorted((job for batch in collected for job in batch), key=lambda j: j.display_name)
    trace.errors.sort(key=lambda e: job_display_name(e[0]))
    return jobs, trace


def _walk(evaluator: Evaluator, trace: EvalTrace, attr_path: tuple, thunk, platform: str, jobs: list):
    try:
        value = evaluator.force(thunk)
    except EvalError as e:
        trace.record_error(attr_path, str(e))
        return
    except RecursionError:
        trace.record_error(attr_path, "recursion limit exceeded")
        return
    if isinstance(value, VDrv):
        if value.platforms is not None and platform not in value.platforms:
            return
        jobs.append(
            Job(
                attr_path=attr_path,
                display_name=job_display_name(attr_path),
                drv_path=value.drv_path,
                output_paths=value.outputs,
                impure=value.tainted,
            )
        )
        return
    if isinstance(value, VAttrs):
        marker = value.members.get(RECURSE_MARKER)
        if marker is None:
            return
        try:
            marker_v = evaluator.force(marker)
        except EvalError as e:
            trace.record_error(attr_path + (RECURSE_MARKER,), str(e))
            return
        if isinstance(marker_v, VBool) and marker_v.value:
            for name in sorted(value.members):
                if name != RECURSE_MARKER:
                    _walk(evaluator, trace, attr_path + (name,), value.members[name], platform, jobs)
