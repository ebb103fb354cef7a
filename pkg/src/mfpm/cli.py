"""Command-line entry point.

Machine-readable results go to stdout, diagnostics to stderr.  Exit codes:
0 success, 1 operational failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

from . import audit as auditmod
from . import build as buildmod
from . import cache as cachemod
from . import ci as cimod
from . import drv as drvmod
from . import report as reportmod
from .config import GlobalConfig
from .errors import MfpmError
from .lang.eval import EvalConfig
from .lang.jobs import eval_job_set, parse_job_name
from .paths import StorePath
from .sandbox import SandboxPolicy
from .store import Store

log = logging.getLogger("mfpm")


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=getattr(logging, args.log_level.upper(), logging.WARNING), stream=sys.stderr)
    try:
        return args.handler(args)
    except MfpmError as e:
        print(f"mfpm: error: {e}", file=sys.stderr)
        return 1
    except OSError as e:
        print(f"mfpm: error: {e}", file=sys.stderr)
        return 1


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mfpm", description="miniature functional package manager")
    parser.add_argument("--store-root", help="physical store directory (default: $MFPM_STORE_ROOT or ~/.mfpm/store)")
    parser.add_argument("--state-dir", help="state directory (default: $MFPM_STATE_DIR or ~/.mfpm/state)")
    parser.add_argument("--log-level", default="warning", choices=["debug", "info", "warning", "error"])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("eval", help="evaluate a recipe file into a sorted job list")
    p.add_argument("file")
    p.add_argument("--platform", default="x86_64-linux")
    p.add_argument("--impure-stub", action="append", default=[], metavar="NAME=VALUE")
    p.add_argument("--max-parallel", type=int, default=1)
    p.set_defaults(handler=_cmd_eval)

    p = sub.add_parser("build", help="realize jobs from a recipe file")
    p.add_argument("file")
    p.add_argument("attr", nargs="?", help="job to build (all jobs when omitted)")
    p.add_argument("--sandbox", default="v2", choices=["v1", "v2"])
    p.add_argument("--substituter", action="append", default=[], metavar="DIR_OR_URL")
    p.add_argument("--force-rebuild", action="append", default=[], metavar="ATTR")
    p.add_argument("--max-parallel", type=int, default=1)
    p.add_argument("--source-mirror")
    p.add_argument("--platform", default="x86_64-linux")
    p.add_argument("--impure-stub", action="append", default=[], metavar="NAME=VALUE")
    p.set_defaults(handler=_cmd_build)

    p = sub.add_parser("shell-env", help="emit a shell rc file with a job's build environment")
    p.add_argument("file")
    p.add_argument("attr")
    p.add_argument("--sandbox", default="v2", choices=["v1", "v2"])
    p.add_argument("--substituter", action="append", default=[], metavar="DIR_OR_URL")
    p.add_argument("--source-mirror")
    p.add_argument("--platform", default="x86_64-linux")
    p.add_argument("--impure-stub", action="append", default=[], metavar="NAME=VALUE")
    p.set_defaults(handler=_cmd_shell_env)

    p = sub.add_parser("show-drv", help="pretty-print a derivation file as JSON")
    p.add_argument("path", help="store path or file path of a .drv")
    p.set_defaults(handler=_cmd_show_drv)

    p = sub.add_parser("archive", help="canonical archive import/export")
    archive_sub = p.add_subparsers(dest="archive_command", required=True)
    pe = archive_sub.add_parser("export")
    pe.add_argument("store_path")
    pe.add_argument("-o", "--output", help="write to file instead of stdout")
    pe.set_defaults(handler=_cmd_archive_export)
    pi = archive_sub.add_parser("import")
    pi.add_argument("file")
    group = pi.add_mutually_exclusive_group(required=True)
    group.add_argument("--as", dest="as_path", help="register under this exact store path")
    group.add_argument("--name", help="register as a content-addressed source with this name")
    pi.set_defaults(handler=_cmd_archive_import)

    p = sub.add_parser("cache", help="binary cache operations")
    cache_sub = p.add_subparsers(dest="cache_command", required=True)
    ps = cache_sub.add_parser("serve")
    ps.add_argument("directory")
    ps.add_argument("--listen", default="127.0.0.1:8080", metavar="HOST:PORT")
    ps.set_defaults(handler=_cmd_cache_serve)

    p = sub.add_parser("ci", help="continuous integration over revision snapshots")
    ci_sub = p.add_subparsers(dest="ci_command", required=True)
    pr = ci_sub.add_parser("run")
    pr.add_argument("--revisions", required=True, help="directory of revision snapshots")
    pr.add_argument("--manifest", default="revisions.tsv")
    pr.add_argument("--cache", required=True)
    pr.add_argument("--important", default="", help="comma-separated job names gating promotion")
    pr.add_argument("--state", help="state directory (overrides --state-dir)")
    pr.add_argument("--sandbox", default="v1", choices=["v1", "v2"])
    pr.add_argument("--source-mirror")
    pr.add_argument("--max-parallel", type=int, default=1)
    pr.add_argument("--platform", default="x86_64-linux")
    pr.add_argument("--impure-stub", action="append", default=[], metavar="NAME=VALUE")
    pr.set_defaults(handler=_cmd_ci_run)

    p = sub.add_parser("audit", help="reproducibility audit against CI records")
    audit_sub = p.add_subparsers(dest="audit_command", required=True)

    pa = audit_sub.add_parser("sample")
    pa.add_argument("--manifest", required=True)
    pa.add_argument("-k", type=int, required=True)
    pa.set_defaults(handler=_cmd_audit_sample)

    pa = audit_sub.add_parser("eval")
    pa.add_argument("--revision", required=True, help="revision id (or unique prefix)")
    pa.add_argument("--state", help="state directory (overrides --state-dir)")
    pa.add_argument("--revisions", help="snapshot directory (default: recorded by ci run)")
    pa.add_argument("--manifest", default=None)
    pa.add_argument("--hydra-dot-bug", action="store_true",
                    help="exclude dotted-name jobs (the historical CI bug) from the comparison")
    pa.add_argument("--impure-stub", action="append", default=[], metavar="NAME=VALUE")
    pa.add_argument("--max-parallel", type=int, default=1)
    pa.add_argument("--platform", default="x86_64-linux")
    pa.add_argument("--require-identical-jobs", action="store_true")
    pa.add_argument("--min-match-rate", type=float)
    pa.add_argument("--no-figures", action="store_true")
    pa.set_defaults(handler=_cmd_audit_eval)

    pa = audit_sub.add_parser("rebuild")
    pa.add_argument("--revision", required=True)
    pa.add_argument("--state", help="state directory (overrides --state-dir)")
    pa.add_argument("--cache", required=True)
    pa.add_argument("--revisions", help="snapshot directory (default: recorded by ci run)")
    pa.add_argument("--manifest", default=None)
    pa.add_argument("--sandbox", default="v2", choices=["v1", "v2"])
    pa.add_argument("--retries", type=int, default=3)
    pa.add_argument("--source-mirror")
    pa.add_argument("--max-parallel", type=int, default=1)
    pa.add_argument("--platform", default="x86_64-linux")
    pa.add_argument("--impure-stub", action="append", default=[], metavar="NAME=VALUE")
    pa.add_argument("--min-success-rate", type=float)
    pa.add_argument("--no-figures", action="store_true")
    pa.set_defaults(handler=_cmd_audit_rebuild)

    return parser


# -- helpers -----------------------------------------------------------------


def _config(args, state_override: str | None = None) -> GlobalConfig:
    return GlobalConfig.resolve(
        store_root=args.store_root,
        state_dir=state_override or args.state_dir,
        source_mirror=getattr(args, "source_mirror", None),
        log_level=args.log_level,
    )


def _eval_config(args) -> EvalConfig:
    sys_version = "2.6"
    in_shell = False
    for stub in args.impure_stub:
        name, sep, value = stub.partition("=")
        if not sep:
            raise MfpmError(f"bad --impure-stub {stub!r}, expected NAME=VALUE")
        if name == "sysVersion":
            sys_version = value
        elif name == "inShell":
            in_shell = value.lower() in ("1", "true", "yes")
        else:
            raise MfpmError(f"unknown impure stub {name!r} (expected sysVersion or inShell)")
    return EvalConfig(
        sys_version=sys_version,
        in_shell=in_shell,
        platform=getattr(args, "platform", "x86_64-linux"),
        max_workers=getattr(args, "max_parallel", 1),
    )


def _print_job(job):
    outs = " ".join(p.render() for _, p in job.output_paths)
    print(f"{job.display_name} {job.drv_path.render()} {outs}")


def _resolve_revision(args, config: GlobalConfig) -> cimod.Revision:
    revisions_root = args.revisions
    manifest = args.manifest
    ci_config_path = os.path.join(config.state_dir, "ci-config.json")
    if (revisions_root is None or manifest is None) and os.path.exists(ci_config_path):
        with open(ci_config_path, "r", encoding="utf-8") as f:
            recorded = json.load(f)
        revisions_root = revisions_root or recorded.get("revisions_root")
        manifest = manifest or recorded.get("manifest")
    if revisions_root is None:
        raise MfpmError("no --revisions directory given and none recorded by a previous ci run")
    revisions = cimod.load_manifest(revisions_root, manifest or "revisions.tsv")
    matches = [r for r in revisions if r.id == args.revision or r.id.startswith(args.revision) or r.dirname == args.revision]
    if not matches:
        raise MfpmError(f"revision {args.revision!r} not found in {revisions_root}")
    if len(matches) > 1:
        raise MfpmError(f"revision {args.revision!r} is ambiguous")
    return matches[0]


# -- command handlers ---------------------------------------------------------


def _cmd_eval(args) -> int:
    config = _config(args)
    store = Store(config.store_root)
    jobs, trace = eval_job_set(args.file, args.platform, store, _eval_config(args))
    for job in jobs:
        _print_job(job)
    for attr_path, message in trace.errors:
        print(f"eval error: {'.'.join(attr_path)}: {message}", file=sys.stderr)
    return 0


def _select_targets(jobs, attr: str | None):
    if attr is None:
        return list(jobs)
    wanted = parse_job_name(attr)
    selected = [j for j in jobs if j.attr_path == wanted]
    if not selected:
        raise MfpmError(f"no job named {attr!r} in this recipe")
    return selected


def _cmd_build(args) -> int:
    config = _config(args)
    store = Store(config.store_root)
    eval_config = _eval_config(args)
    jobs, _ = eval_job_set(args.file, args.platform, store, eval_config)
    targets = _select_targets(jobs, args.attr)
    by_name = {j.display_name: j for j in jobs}
    forced = set()
    for attr in args.force_rebuild:
        job = by_name.get(attr)
        if job is None:
            raise MfpmError(f"--force-rebuild {attr!r}: no such job")
        forced.add(job.drv_path)
    options = buildmod.RealizeOptions(
        substituters=tuple(cachemod.substituter_for(s) for s in args.substituter),
        force_rebuild=frozenset(forced),
        sandbox=SandboxPolicy.from_name(args.sandbox),
        max_parallel=args.max_parallel,
        source_mirror=config.source_mirror,
        state_dir=config.state_dir,
    )
    results = buildmod.realize([j.drv_path for j in targets], store, drvmod.store_lookup(store), options)
    all_ok = True
    for job in targets:
        result = results[job.drv_path]
        all_ok &= result.ok
        outs = " ".join(p.render() for _, p in result.output_paths)
        print(f"{job.display_name} {result.status} {outs}")
        if not result.ok:
            print(f"--- log for {job.display_name} ---\n{result.log}", file=sys.stderr)
    return 0 if all_ok else 1


def _cmd_shell_env(args) -> int:
    config = _config(args)
    store = Store(config.store_root)
    jobs, _ = eval_job_set(args.file, args.platform, store, _eval_config(args))
    target = _select_targets(jobs, args.attr)[0]
    options = buildmod.RealizeOptions(
        substituters=tuple(cachemod.substituter_for(s) for s in args.substituter),
        sandbox=SandboxPolicy.from_name(args.sandbox),
        source_mirror=config.source_mirror,
        state_dir=config.state_dir,
    )
    rc_path = buildmod.spawn_env(target.drv_path, store, drvmod.store_lookup(store), options)
    print(rc_path)
    return 0


def _cmd_show_drv(args) -> int:
    if os.path.exists(args.path):
        with open(args.path, "rb") as f:
            data = f.read()
        derivation = drvmod.parse_drv(data)
    else:
        config = _config(args)
        store = Store(config.store_root)
        derivation = drvmod.load_drv(store, StorePath.parse(args.path))
    print(drvmod.pretty_json(derivation))
    return 0


def _cmd_archive_export(args) -> int:
    config = _config(args)
    store = Store(config.store_root)
    data = store.export_archive(StorePath.parse(args.store_path))
    if args.output:
        with open(args.output, "wb") as f:
            f.write(data)
    else:
        sys.stdout.buffer.write(data)
    return 0


def _cmd_archive_import(args) -> int:
    config = _config(args)
    store = Store(config.store_root)
    with open(args.file, "rb") as f:
        data = f.read()
    if args.as_path:
        path = store.import_archive(data, StorePath.parse(args.as_path))
    else:
        path = store.import_source_archive(data, args.name)
    print(path.render())
    return 0


def _cmd_cache_serve(args) -> int:
    print(f"serving {args.directory} on {args.listen}", file=sys.stderr)
    cachemod.serve(args.directory, args.listen)
    return 0


def _cmd_ci_run(args) -> int:
    config = _config(args, state_override=args.state)
    store = Store(config.store_root)
    revisions = cimod.load_manifest(args.revisions, args.manifest)
    cache = cachemod.BinaryCache(args.cache)
    important = [name for name in args.important.split(",") if name]
    summary = cimod.ci_run(
        revisions,
        important,
        cache,
        store,
        config.state_dir,
        sandbox=SandboxPolicy.from_name(args.sandbox),
        source_mirror=config.source_mirror,
        max_parallel=args.max_parallel,
        eval_config=_eval_config(args),
    )
    with open(os.path.join(config.state_dir, "ci-config.json"), "w", encoding="utf-8") as f:
        json.dump(
            {"revisions_root": os.path.abspath(args.revisions), "manifest": args.manifest},
            f, sort_keys=True,
        )
    for rev_id, promoted in summary.revisions:
        print(f"revision {rev_id}")
        for name, status in sorted(summary.statuses.get(rev_id, {}).items()):
            print(f"{status}\t{name}")
        print(f"promoted\t{'true' if promoted else 'false'}")
    failed = any(
        status == "failure" for statuses in summary.statuses.values() for status in statuses.values()
    )
    return 1 if failed else 0


def _cmd_audit_sample(args) -> int:
    available = []
    with open(args.manifest, "r", encoding="utf-8") as f:
        for line in f:
            line = line.rstrip("\n")
            if not line:
                continue
            timestamp, name = line.split("\t")
            available.append((name, int(timestamp)))
    plan = auditmod.sample_revisions(available, args.k)
    for name in plan.chosen:
        print(name)
    print(
        f"chosen {len(plan.chosen)} of {len(available)}; spacing mean {plan.mean_spacing:.1f}s "
        f"min {plan.min_spacing:.1f}s max {plan.max_spacing:.1f}s",
        file=sys.stderr,
    )
    return 0


def _cmd_audit_eval(args) -> int:
    config = _config(args, state_override=args.state)
    store = Store(config.store_root)
    revision = _resolve_revision(args, config)
    records = cimod.RecordStore(config.state_dir)
    diff, path_report = auditmod.audit_evaluation(
        revision, records, store, _eval_config(args), hydra_dot_bug=args.hydra_dot_bug
    )
    thresholds = reportmod.Thresholds(
        require_identical_jobs=args.require_identical_jobs,
        min_match_rate=args.min_match_rate,
    )
    passed, json_path = reportmod.emit_report(
        revision.id,
        os.path.join(config.state_dir, "reports"),
        jobset_diff=diff,
        path_report=path_report,
        thresholds=thresholds,
        figures=not args.no_figures,
    )
    print(json_path)
    return 0 if passed else 1


def _cmd_audit_rebuild(args) -> int:
    config = _config(args, state_override=args.state)
    store = Store(config.store_root)
    revision = _resolve_revision(args, config)
    records = cimod.RecordStore(config.state_dir)
    cache = cachemod.substituter_for(args.cache)
    rebuild = auditmod.audit_rebuild(
        revision,
        records,
        cache,
        sandbox=SandboxPolicy.from_name(args.sandbox),
        retries=args.retries,
        store=store,
        state_dir=config.state_dir,
        source_mirror=config.source_mirror,
        eval_config=_eval_config(args),
        max_parallel=args.max_parallel,
    )
    thresholds = reportmod.Thresholds(min_success_rate=args.min_success_rate)
    passed, json_path = reportmod.emit_report(
        revision.id,
        os.path.join(config.state_dir, "reports"),
        rebuild_report=rebuild,
        thresholds=thresholds,
        figures=not args.no_figures,
    )
    print(json_path)
    return 0 if passed else 1


if __name__ == "__main__":
    sys.exit(main())
