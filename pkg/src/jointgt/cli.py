"""Command-line interface: ``jointgt {test,simulate,roc,power,report}``.

Scalar options can be preset through ``JOINTGT_<OPTION>`` environment
variables (e.g. ``JOINTGT_PERMUTATIONS=199``); explicit flags win.
Progress goes to stderr, data only to files in ``--out``.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import shutil
import sys
import tempfile
from collections.abc import Callable, Sequence
from pathlib import Path

import numpy as np
import pandas as pd

from . import __version__
from .genemap import (
    CovariateWindowSpec,
    IngestError,
    align_samples,
    build_window_sets,
    read_annotation,
    read_matrix,
    write_annotation,
    write_matrix,
)
from .permute import PermutationPlan
from .pipeline import read_results, run_tests, write_results
from .report import (
    DEFAULT_ALPHA,
    arm_summary,
    plot_arm_ratios,
    plot_pvalue_scatter,
    plot_roc,
    select,
    selection_frame,
    summary_frame,
    write_tsv,
)
from .simgen import (
    DEFAULT_EFFECT_SIZE,
    DEFAULT_FEATURES,
    FULL_SIZE_FEATURES,
    REGIMES,
    SIGNAL_REGIMES,
    RegionConfig,
    generate_correlated,
    generate_region,
    power_study,
    roc_from_pvalues,
    truth_frame,
)

logger = logging.getLogger("jointgt")

ENV_PREFIX = "JOINTGT_"
# options that do not change results and are left out of the config hash
NON_RESULT_KEYS = {"workers", "out", "verbose", "func", "no_figures"}


class CliError(Exception):
    pass


def _positive_int(text: str) -> int:
    value = int(text)
    if value <= 0:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return value


def _probability(text: str) -> float:
    value = float(text)
    if not 0 < value <= 1:
        raise argparse.ArgumentTypeError(f"expected a value in (0, 1], got {text}")
    return value


# ------------------------------------------------------------ output handling

class OutputDir:
    """Stage outputs in a scratch directory and publish them only on success."""

    def __init__(self, out: Path) -> None:
        self.out = out
        self.stage: Path | None = None
        self.files: list[str] = []

    def __enter__(self) -> "OutputDir":
        parent = self.out.resolve().parent
        parent.mkdir(parents=True, exist_ok=True)
        self.stage = Path(tempfile.mkdtemp(prefix=".jointgt-", dir=parent))
        return self

    def path(self, name: str) -> Path:
        self.files.append(name)
        return self.stage / name

    def __exit__(self, exc_type, exc, tb) -> None:
        try:
            if exc_type is None:
                self.out.mkdir(parents=True, exist_ok=True)
                for name in self.files:
                    os.replace(self.stage / name, self.out / name)
        finally:
            shutil.rmtree(self.stage, ignore_errors=True)


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _write_manifest(outdir: OutputDir, args: argparse.Namespace) -> None:
    config = {k: (str(v) if isinstance(v, Path) else v) for k, v in sorted(vars(args).items())
              if k not in ("func",)}
    config = json.loads(json.dumps(config, default=str))
    hashed = {k: v for k, v in config.items() if k not in NON_RESULT_KEYS}
    manifest = {
        "program": "jointgt",
        "version": __version__,
        "command": args.command,
        "config": config,
        "config_hash": hashlib.sha256(json.dumps(hashed, sort_keys=True).encode()).hexdigest(),
        "seed": config.get("seed"),
        "inputs": {str(p): _sha256(Path(p)) for p in _input_paths(args)},
        "outputs": {name: _sha256(outdir.stage / name) for name in outdir.files},
    }
    with open(outdir.path("manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _input_paths(args: argparse.Namespace) -> list[Path]:
    paths = []
    for key in ("responses", "response_annotation", "covariates", "annotation", "confounders",
                "results", "truth"):
        value = getattr(args, key, None)
        for p in value if isinstance(value, list) else [value]:
            if p is not None:
                paths.append(Path(p))
    return paths


def _require_files(paths: Sequence[Path | None]) -> None:
    missing = [str(p) for p in paths if p is not None and not Path(p).is_file()]
    if missing:
        raise CliError(f"input file(s) not found: {', '.join(missing)}")


# ------------------------------------------------------------------ commands

def cmd_test(args: argparse.Namespace) -> None:
    n_sets = len(args.covariates or [])
    _require_files([args.responses, args.response_annotation, *(args.covariates or []),
                    *(args.annotation or []), args.confounders])
    if n_sets < 2:
        raise CliError("the joint test needs at least two --covariates matrices")
    if len(args.annotation or []) != n_sets or len(args.window_halfwidth or []) != n_sets:
        raise CliError("each --covariates needs its own --annotation and --window-halfwidth")
    labels = args.set_label or [Path(p).stem for p in args.covariates]
    if len(labels) != n_sets or len(set(labels)) != n_sets:
        raise CliError("--set-label must be given once per covariate set, with distinct labels")

    responses = read_matrix(args.responses).with_annotation(read_annotation(args.response_annotation))
    windows = []
    for path, ann_path, half, label in zip(args.covariates, args.annotation, args.window_halfwidth, labels):
        cov = read_matrix(path).with_annotation(read_annotation(ann_path))
        w = build_window_sets(responses, cov, CovariateWindowSpec(label, half))
        logger.info("set %s: %d covariates, %d responses with a non-empty window",
                    label, cov.n_features, len(w))
        windows.append(w)
    confounders = None
    if args.confounders:
        confounders = align_samples(responses, read_matrix(args.confounders))[0]

    plan = PermutationPlan(args.permutations, args.seed)
    results = run_tests(responses, windows, plan, args.statistic, args.asymptotic,
                        confounders, args.scale, args.workers)
    logger.info("tested %d responses", len(results))
    selections = select([r for r in results if r.status == "ok"], args.alpha)
    with OutputDir(args.out) as out:
        write_results(results, out.path("results.tsv"))
        write_tsv(selection_frame(selections), out.path("selections.tsv"))
        write_tsv(summary_frame(arm_summary(selections, include_total=True)), out.path("arm_summary.tsv"))
        _write_manifest(out, args)


def cmd_simulate(args: argparse.Namespace) -> None:
    n_features = FULL_SIZE_FEATURES if args.full_size else args.n_features
    cfg = RegionConfig(args.regime, n_features, args.n_samples, args.effect_size, args.seed,
                       coupling_sd=args.coupling_sd)
    region = (generate_correlated if args.correlated else generate_region)(cfg)
    with OutputDir(args.out) as out:
        for name, m in (("responses", region.y), ("X", region.x), ("Z", region.z)):
            write_matrix(m, out.path(f"{name}.tsv"))
            write_annotation(m.annotation, out.path(f"{name}_annotation.tsv"))
        write_tsv(truth_frame(region), out.path("truth.tsv"))
        _write_manifest(out, args)


def cmd_roc(args: argparse.Namespace) -> None:
    _require_files([args.results, args.truth])
    results = pd.read_csv(args.results, sep="\t", na_values=["NA"], keep_default_na=False,
                          dtype={"response_id": str})
    truth = pd.read_csv(args.truth, sep="\t", dtype={"response_id": str})
    merged = results.merge(truth, on="response_id", how="inner")
    if merged.empty:
        raise CliError("no response ids in common between results and truth")
    columns = args.column or ["p_joint"]
    curves, rows, aucs = {}, [], []
    for col in columns:
        if col not in merged:
            raise CliError(f"column {col!r} not in {args.results}")
        ok = merged[col].notna()
        curve = roc_from_pvalues(merged.loc[ok, col].to_numpy(), merged.loc[ok, "truth"].to_numpy() != 0)
        curves[col] = curve
        aucs.append({"statistic": col, "auc": curve.auc, "n": int(ok.sum())})
        rows.extend({"statistic": col, "threshold": t, "fpr": f, "tpr": p}
                    for t, f, p in zip(curve.thresholds, curve.fpr, curve.tpr))
    with OutputDir(args.out) as out:
        write_tsv(pd.DataFrame(rows), out.path("roc.tsv"))
        write_tsv(pd.DataFrame(aucs), out.path("auc.tsv"))
        if not args.no_figures:
            plot_roc(curves, out.path("roc.svg"))
        _write_manifest(out, args)


def cmd_power(args: argparse.Namespace) -> None:
    n_features = FULL_SIZE_FEATURES if args.full_size else args.n_features
    plan = PermutationPlan(args.permutations, args.seed)
    rows = []
    with OutputDir(args.out) as out:
        for regime in args.regime or SIGNAL_REGIMES:
            for n in args.n_samples:
                logger.info("power study: %s, N=%d, %d seeds", regime, n, args.seeds)
                res = power_study(regime, n, range(args.seed, args.seed + args.seeds), args.correlated,
                                  n_features, args.effect_size, plan)
                for stat, values in res.auc.items():
                    rows.append({"regime": regime, "n_samples": n, "statistic": stat,
                                 "mean_auc": float(np.mean(values)), "sd_auc": float(np.std(values, ddof=1))
                                 if len(values) > 1 else float("nan"), "n_seeds": len(values)})
                if not args.no_figures:
                    curves = {s: res.pooled_roc(s) for s in res.auc}
                    plot_roc(curves, out.path(f"roc_{regime}_N{n}.svg"), f"{regime}, N = {n}")
        write_tsv(pd.DataFrame(rows), out.path("power.tsv"))
        _write_manifest(out, args)


def cmd_report(args: argparse.Namespace) -> None:
    _require_files([args.results])
    results = [r for r in read_results(args.results) if r.status == "ok"]
    selections = select(results, args.alpha)
    summaries = arm_summary(selections, include_total=True)
    with OutputDir(args.out) as out:
        write_tsv(selection_frame(selections), out.path("selections.tsv"))
        write_tsv(summary_frame(summaries), out.path("arm_summary.tsv"))
        if not args.no_figures and summaries:
            for ratio in ("overlap_ratio", "new_discovery_ratio", "dilution_ratio"):
                plot_arm_ratios(summaries, out.path(f"{ratio}.svg"), ratio)
            for label in sorted({k for s in selections for k in s.p_set}):
                plot_pvalue_scatter(selections, label, out.path(f"scatter_{label}.svg"), args.alpha)
        _write_manifest(out, args)


# -------------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="jointgt", description="Joint score tests of responses against several covariate sets.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser, seed: bool = True) -> None:
        p.add_argument("--out", type=Path, required=True, help="output directory")
        if seed:
            p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("test", help="joint and single-set tests for every response")
    p.add_argument("--responses", type=Path, required=True, help="response matrix TSV")
    p.add_argument("--response-annotation", type=Path, required=True)
    p.add_argument("--covariates", type=Path, action="append", help="covariate matrix TSV (repeatable)")
    p.add_argument("--annotation", type=Path, action="append", help="annotation of the matching --covariates")
    p.add_argument("--window-halfwidth", type=_positive_int, action="append",
                   help="window half-width in bp for the matching --covariates")
    p.add_argument("--set-label", action="append", help="label of the matching --covariates")
    p.add_argument("--confounders", type=Path, help="confounder matrix TSV (rows = confounders)")
    p.add_argument("--permutations", type=int, default=1000)
    p.add_argument("--statistic", choices=("sum", "with-corr"), default="sum")
    p.add_argument("--alpha", type=_probability, default=DEFAULT_ALPHA, help="selection threshold")
    p.add_argument("--asymptotic", action="store_true", help="finite-sample null instead of permutations")
    p.add_argument("--scale", action="store_true", help="scale covariate columns to unit variance")
    p.add_argument("--workers", type=_positive_int, default=1)
    common(p)
    p.set_defaults(func=cmd_test)

    p = sub.add_parser("simulate", help="write one simulated region as TSV files")
    p.add_argument("--regime", choices=REGIMES, default="additive")
    p.add_argument("--n-samples", type=_positive_int, default=100)
    p.add_argument("--n-features", type=_positive_int, default=DEFAULT_FEATURES)
    p.add_argument("--full-size", action="store_true", help=f"use {FULL_SIZE_FEATURES} features per block")
    p.add_argument("--effect-size", type=float, default=DEFAULT_EFFECT_SIZE)
    p.add_argument("--correlated", action="store_true", help="Z = X + U")
    p.add_argument("--coupling-sd", type=float, default=1.0)
    common(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("roc", help="ROC curves of result p-values against truth labels")
    p.add_argument("--results", type=Path, required=True)
    p.add_argument("--truth", type=Path, required=True)
    p.add_argument("--column", action="append", help="p-value column (default p_joint; repeatable)")
    p.add_argument("--no-figures", action="store_true")
    common(p, seed=False)
    p.set_defaults(func=cmd_roc)

    p = sub.add_parser("power", help="simulated power comparison of the joint statistics")
    p.add_argument("--regime", choices=SIGNAL_REGIMES, action="append")
    p.add_argument("--n-samples", type=_positive_int, nargs="+", default=[100])
    p.add_argument("--seeds", type=_positive_int, default=10)
    p.add_argument("--n-features", type=_positive_int, default=DEFAULT_FEATURES)
    p.add_argument("--full-size", action="store_true")
    p.add_argument("--effect-size", type=float, default=DEFAULT_EFFECT_SIZE)
    p.add_argument("--correlated", action="store_true")
    p.add_argument("--permutations", type=int, default=1000)
    p.add_argument("--no-figures", action="store_true")
    common(p)
    p.set_defaults(func=cmd_power)

    p = sub.add_parser("report", help="selection and per-arm overlap/dilution summary")
    p.add_argument("--results", type=Path, required=True)
    p.add_argument("--alpha", type=_probability, default=DEFAULT_ALPHA)
    p.add_argument("--no-figures", action="store_true")
    common(p, seed=False)
    p.set_defaults(func=cmd_report)

    for sp in sub.choices.values():
        _apply_env_defaults(sp)
    return parser


def _apply_env_defaults(parser: argparse.ArgumentParser) -> None:
    for action in parser._actions:
        if not action.option_strings or action.dest in ("help",) or isinstance(action, argparse._AppendAction):
            continue
        raw = os.environ.get(ENV_PREFIX + action.dest.upper())
        if raw is None:
            continue
        if isinstance(action, argparse._StoreTrueAction):
            value: object = raw.strip().lower() in ("1", "true", "yes", "on")
        else:
            convert: Callable = action.type or str
            value = convert(raw)
            if action.nargs in ("+", "*"):
                value = [convert(v) for v in raw.split()]
        action.default = value
        action.required = False


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s",
                        level=logging.DEBUG if args.verbose > 1 else logging.INFO if args.verbose else logging.WARNING)
    try:
        args.func(args)
    except (CliError, IngestError, ValueError, NotImplementedError) as exc:
        print(f"jointgt {args.command}: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
