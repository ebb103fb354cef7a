"""Audit report emission: machine JSON, a plain-text table, and figures.

Rates are serialized as strings with exactly four decimal places so the
JSON stays byte-deterministic.  Figures are rendered with the Agg backend
into PNGs next to the JSON/text output; they are display artifacts and are
never read back.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402 (backend must be pinned first)

from .audit import FAILURE_CLASSES, JobSetDiff, PathDiffReport, RebuildReport  # noqa: E402


@dataclass(frozen=True)
class Thresholds:
    require_identical_jobs: bool = False
    min_match_rate: float | None = None
    min_success_rate: float | None = None


def rate_str(rate: float) -> str:
    return f"{rate:.4f}"


def _merge_existing(path: str) -> dict:
    if os.path.exists(path):
        with open(path, "r", encoding="utf-8") as f:
            return json.load(f)
    return {}


def emit_report(
    revision_id: str,
    out_dir: str,
    jobset_diff: JobSetDiff | None = None,
    path_report: PathDiffReport | None = None,
    rebuild_report: RebuildReport | None = None,
    thresholds: Thresholds = Thresholds(),
    figures: bool = True,
) -> tuple[bool, str]:
    """Write/update the per-revision report; returns (passed, json path)."""
    os.makedirs(out_dir, exist_ok=True)
    json_path = os.path.join(out_dir, f"{revision_id}.json")
    doc = _merge_existing(json_path)
    doc["revision"] = revision_id

    if jobset_diff is not None:
        doc["jobset"] = {
            "identical": jobset_diff.identical,
            "missingLocally": list(jobset_diff.missing_locally),
            "extraLocally": list(jobset_diff.extra_locally),
            "knownBugExclusions": list(jobset_diff.known_bug_exclusions),
        }
    if path_report is not None:
        doc["outputPaths"] = {
            "totalJobs": path_report.total_jobs,
            "matching": path_report.matching,
            "matchRate": rate_str(path_report.match_rate),
            "differing": [
                {"name": name, "historical": hist, "local": local, "impure": impure}
                for name, hist, local, impure in path_report.differing
            ],
        }
    if rebuild_report is not None:
        doc["rebuild"] = {
            "attempted": rebuild_report.attempted,
            "succeeded": rebuild_report.succeeded,
            "successRate": rate_str(rebuild_report.success_rate),
            "failures": [
                {"name": name, "class": cls, "log": log} for name, cls, log in rebuild_report.failed
            ],
            "classCounts": rebuild_report.class_counts(),
        }

    with open(json_path, "w", encoding="utf-8") as f:
        json.dump(doc, f, sort_keys=True, indent=1)
        f.write("\n")

    txt_path = os.path.join(out_dir, f"{revision_id}.txt")
    with open(txt_path, "w", encoding="utf-8") as f:
        f.write(_render_table(doc))

    if figures:
        _render_figures(doc, out_dir, revision_id)

    return _passes(doc, thresholds), json_path


def _render_table(doc: dict) -> str:
    lines = [f"revision\t{doc['revision']}"]
    jobset = doc.get("jobset")
    if jobset:
        lines.append(f"jobset.identical\t{'yes' if jobset['identical'] else 'no'}")
        lines.append(f"jobset.missing-locally\t{len(jobset['missingLocally'])}")
        lines.append(f"jobset.extra-locally\t{len(jobset['extraLocally'])}")
        lines.append(f"jobset.bug-exclusions\t{len(jobset['knownBugExclusions'])}")
    paths = doc.get("outputPaths")
    if paths:
        lines.append(f"paths.total\t{paths['totalJobs']}")
        lines.append(f"paths.matching\t{paths['matching']}")
        lines.append(f"paths.match-rate\t{paths['matchRate']}")
        for row in paths["differing"]:
            impure = "impure" if row["impure"] else "pure"
            lines.append(f"paths.differing\t{row['name']}\t{impure}")
    rebuild = doc.get("rebuild")
    if rebuild:
        lines.append(f"rebuild.attempted\t{rebuild['attempted']}")
        lines.append(f"rebuild.succeeded\t{rebuild['succeeded']}")
        lines.append(f"rebuild.success-rate\t{rebuild['successRate']}")
        for cls in FAILURE_CLASSES:
            lines.append(f"rebuild.class.{cls}\t{rebuild['classCounts'].get(cls, 0)}")
        for row in rebuild["failures"]:
            lines.append(f"rebuild.failure\t{row['name']}\t{row['class']}")
    return "".join(line + "\n" for line in lines)


def _render_figures(doc: dict, out_dir: str, revision_id: str):
    paths = doc.get("outputPaths")
    rebuild = doc.get("rebuild")
    if not paths and not rebuild:
        return
    panels = (1 if paths else 0) + (1 if rebuild else 0)
    fig, axes = plt.subplots(1, panels, figsize=(5 * panels, 3.2))
    if panels == 1:
        axes = [axes]
    idx = 0
    if paths:
        ax = axes[idx]
        idx += 1
        differing = paths["totalJobs"] - paths["matching"]
        ax.bar(["matching", "differing"], [paths["matching"], differing], color=["#4a7", "#c66"])
        ax.set_title(f"output paths (match rate {paths['matchRate']})")
        ax.set_ylabel("jobs")
    if rebuild:
        ax = axes[idx]
        counts = rebuild["classCounts"]
        labels = [cls for cls in FAILURE_CLASSES]
        ax.bar(labels, [counts.get(cls, 0) for cls in labels], color="#c66")
        ax.set_title(f"rebuild failures (success rate {rebuild['successRate']})")
        ax.set_ylabel("jobs")
        ax.tick_params(axis="x", rotation=20)
    fig.tight_layout()
    fig.savefig(os.path.join(out_dir, f"{revision_id}.png"), dpi=100)
    plt.close(fig)


def _passes(doc: dict, thresholds: Thresholds) -> bool:
    if thresholds.require_identical_jobs:
        jobset = doc.get("jobset")
        if not jobset or not jobset["identical"]:
            return False
    if thresholds.min_match_rate is not None:
        paths = doc.get("outputPaths")
        if not paths or float(paths["matchRate"]) < thresholds.min_match_rate:
            return False
    if thresholds.min_success_rate is not None:
        rebuild = doc.get("rebuild")
        if not rebuild or float(rebuild["successRate"]) < thresholds.min_success_rate:
            return False
    return True
