"""Selection, overlap/dilution ratios per chromosome arm, and figures.

For a single-set test S and the joint test J, restricted to one arm:

    overlap(S)       = |S & J| / |J|
    new_discovery(S) = |J - S| / |J|
    dilution(S)      = |S - J| / |S|
    joint_only       = |J - union(S)| / |J|

A ratio with an empty denominator is undefined (NaN, written as an empty
cell), never 0.
"""

from __future__ import annotations

from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from .pipeline import TestResult
from .simgen import RocCurve

DEFAULT_ALPHA = 0.001


@dataclass(frozen=True)
class SelectionResult:
    response_id: str
    arm: str
    p_joint: float
    p_set: dict[str, float]
    selected_joint: bool
    selected_set: dict[str, bool]


@dataclass
class ArmSummary:
    arm: str
    n_tests: int
    prop_selected: dict[str, float] = field(default_factory=dict)
    overlap_ratio: dict[str, float] = field(default_factory=dict)
    dilution_ratio: dict[str, float] = field(default_factory=dict)
    new_discovery_ratio: dict[str, float] = field(default_factory=dict)
    joint_only_ratio: float = float("nan")


def _selected(p: float, alpha: float) -> bool:
    return bool(np.isfinite(p) and p <= alpha)


def select(results: Iterable[TestResult], alpha: float = DEFAULT_ALPHA) -> list[SelectionResult]:
    """Apply ``p <= alpha`` to the joint and every single-set p-value (uncorrected)."""
    out = []
    for r in results:
        arm = f"{r.chromosome}{r.arm}" if r.chromosome else r.arm
        out.append(SelectionResult(
            r.response_id, arm, r.p_joint, dict(r.p_set), _selected(r.p_joint, alpha),
            {k: _selected(p, alpha) for k, p in r.p_set.items()},
        ))
    return out


def _ratio(num: int, den: int) -> float:
    return num / den if den else float("nan")


def _summarize(arm: str, group: Sequence[SelectionResult], labels: Sequence[str]) -> ArmSummary:
    joint = {s.response_id for s in group if s.selected_joint}
    chosen = {lab: {s.response_id for s in group if s.selected_set.get(lab, False)} for lab in labels}
    n = len(group)
    summary = ArmSummary(arm, n)
    summary.prop_selected["joint"] = _ratio(len(joint), n)
    for lab in labels:
        sel = chosen[lab]
        summary.prop_selected[lab] = _ratio(len(sel), n)
        summary.overlap_ratio[lab] = _ratio(len(sel & joint), len(joint))
        summary.new_discovery_ratio[lab] = _ratio(len(joint - sel), len(joint))
        summary.dilution_ratio[lab] = _ratio(len(sel - joint), len(sel))
    union = set().union(*chosen.values()) if chosen else set()
    summary.joint_only_ratio = _ratio(len(joint - union), len(joint))
    return summary


def arm_summary(selections: Sequence[SelectionResult], include_total: bool = False) -> list[ArmSummary]:
    """Per-arm ratios, arms in natural chromosome order.

    With ``include_total`` a final ``all`` row aggregates every response.
    """
    labels = sorted({lab for s in selections for lab in s.selected_set})
    groups: dict[str, list[SelectionResult]] = {}
    for s in selections:
        groups.setdefault(s.arm, []).append(s)
    out = [_summarize(arm, groups[arm], labels) for arm in sorted(groups, key=arm_sort_key)]
    if include_total and selections:
        out.append(_summarize("all", list(selections), labels))
    return out


def arm_sort_key(arm: str) -> tuple:
    chrom, part = (arm[:-1], arm[-1]) if arm[-1:] in ("p", "q") else (arm, "")
    chrom = chrom.removeprefix("chr")
    if chrom.isdigit():
        return (0, int(chrom), "", part)
    return (1, 0, chrom, part)


def summary_frame(summaries: Sequence[ArmSummary]) -> pd.DataFrame:
    rows = []
    for s in summaries:
        row: dict[str, object] = {"arm": s.arm, "n_tests": s.n_tests}
        for k, v in s.prop_selected.items():
            row[f"prop_selected_{k}"] = v
        for name in ("overlap_ratio", "new_discovery_ratio", "dilution_ratio"):
            for k, v in getattr(s, name).items():
                row[f"{name}_{k}"] = v
        row["joint_only_ratio"] = s.joint_only_ratio
        rows.append(row)
    return pd.DataFrame(rows)


def selection_frame(selections: Sequence[SelectionResult]) -> pd.DataFrame:
    rows = []
    for s in selections:
        row: dict[str, object] = {"response_id": s.response_id, "arm": s.arm, "p_joint": s.p_joint,
                                  "selected_joint": int(s.selected_joint)}
        for k in s.p_set:
            row[f"p_{k}"] = s.p_set[k]
            row[f"selected_{k}"] = int(s.selected_set[k])
        rows.append(row)
    return pd.DataFrame(rows)


def write_tsv(frame: pd.DataFrame, path: str | Path) -> None:
    frame.to_csv(path, sep="\t", index=False, na_rep="", float_format="%.10g", lineterminator="\n")


# ---------------------------------------------------------------- figures

def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    # fixed element ids so reruns produce identical SVG files
    matplotlib.rcParams["svg.hashsalt"] = "jointgt"

    return plt


def plot_arm_ratios(summaries: Sequence[ArmSummary], path: str | Path,
                    ratio: str = "overlap_ratio") -> Path:
    """Grouped bars of one ratio per arm, one bar per covariate set."""
    plt = _pyplot()
    rows = [s for s in summaries if s.arm != "all"]
    labels = sorted({k for s in rows for k in getattr(s, ratio)})
    arms = [s.arm for s in rows]
    fig, ax = plt.subplots(figsize=(max(6.0, 0.35 * len(arms) + 2), 3.5))
    width = 0.8 / max(1, len(labels))
    xs = np.arange(len(arms))
    for k, lab in enumerate(labels):
        vals = [getattr(s, ratio).get(lab, np.nan) for s in rows]
        ax.bar(xs + k * width - 0.4 + width / 2, vals, width, label=lab)
    ax.set_xticks(xs)
    ax.set_xticklabels(arms, rotation=90, fontsize=8)
    ax.set_ylim(0, 1)
    ax.set_ylabel(ratio.replace("_", " "))
    ax.legend(frameon=False, fontsize=8)
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, metadata={"Date": None} if path.suffix == ".svg" else None)
    plt.close(fig)
    return path


def plot_pvalue_scatter(selections: Sequence[SelectionResult], label: str, path: str | Path,
                        alpha: float = DEFAULT_ALPHA) -> Path:
    """-log10 p of a single-set test against the joint test."""
    plt = _pyplot()
    pj = np.array([s.p_joint for s in selections], dtype=float)
    ps = np.array([s.p_set.get(label, np.nan) for s in selections], dtype=float)
    ok = np.isfinite(pj) & np.isfinite(ps)
    fig, ax = plt.subplots(figsize=(4, 4))
    ax.scatter(-np.log10(ps[ok]), -np.log10(pj[ok]), s=6, alpha=0.6, lw=0)
    cut = -np.log10(alpha)
    ax.axhline(cut, color="grey", lw=0.8, ls="--")
    ax.axvline(cut, color="grey", lw=0.8, ls="--")
    ax.set_xlabel(f"-log10 p ({label})")
    ax.set_ylabel("-log10 p (joint)")
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, metadata={"Date": None} if path.suffix == ".svg" else None)
    plt.close(fig)
    return path


def plot_roc(curves: dict[str, RocCurve], path: str | Path, title: str = "") -> Path:
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(4, 4))
    for name, c in curves.items():
        ax.plot(c.fpr, c.tpr, lw=1.2, label=f"{name} (AUC {c.auc:.3f})")
    ax.plot([0, 1], [0, 1], color="grey", lw=0.8, ls=":")
    ax.set_xlabel("false positive rate")
    ax.set_ylabel("true positive rate")
    if title:
        ax.set_title(title, fontsize=10)
    ax.legend(frameon=False, fontsize=8, loc="lower right")
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, metadata={"Date": None} if path.suffix == ".svg" else None)
    plt.close(fig)
    return path
