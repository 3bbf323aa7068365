"""Command-line interface.

Subcommands mirror the pipeline stages: ingest the CSVs, build graph
variants, run an experiment grid, run the declared comparisons, emit the
report CSVs, and audit a checkpoint for protocol violations.

Exit codes: 0 success, 1 configuration or input error, 2 unexpected failure.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .errors import ConfigError, IntegrityError, ParseError
from .ingest import (ScalerStats, load_dataset, standardize, dataset_summary,
                     resolve_data_paths, save_dataset_cache, load_dataset_cache)
from .graphs import (build_original, build_similarity, build_knn, build_temporal,
                     build_augmented_union, shuffle_edges, empty_edges,
                     graph_stats, export_edgelist, leakage_audit)
from .models import load_checkpoint
from .runner import (build_paper_spec, load_spec, save_spec, load_bundle, run,
                     load_records, run_comparisons, emit_tables, spec_from_dict)

_USAGE_ERRORS = (ConfigError, ParseError, IntegrityError, FileNotFoundError)


def _parse_seed_list(text: str) -> tuple[int, ...]:
    """Accept '0,1,2' or a '0..9' inclusive range."""
    text = text.strip()
    if ".." in text:
        lo, _, hi = text.partition("..")
        try:
            a, b = int(lo), int(hi)
        except ValueError:
            raise ConfigError(f"bad seed range {text!r}")
        if b < a:
            raise ConfigError(f"empty seed range {text!r}")
        return tuple(range(a, b + 1))
    try:
        return tuple(int(s) for s in text.split(",") if s.strip())
    except ValueError:
        raise ConfigError(f"bad seed list {text!r}")


def _cmd_ingest(args: argparse.Namespace) -> int:
    paths = resolve_data_paths(args.data_root)
    dataset = load_dataset(*paths)
    if args.fit_scope:
        dataset, stats = standardize(dataset, args.fit_scope)
    else:
        stats = ScalerStats(mean=np.zeros(dataset.n_features),
                            std=np.ones(dataset.n_features), fit_scope="identity")
    if args.cache:
        save_dataset_cache(args.cache, dataset, stats)
    summary = dataset_summary(dataset)
    print(json.dumps(summary.to_dict(), indent=2))
    return 0


_BUILDERS = {
    "original": lambda ds, g: build_original(ds),
    "similarity": lambda ds, g: build_similarity(ds),
    "knn": lambda ds, g: build_knn(ds),
    "temporal": lambda ds, g: build_temporal(ds),
    "augmented_union": lambda ds, g: build_augmented_union(
        g["original"], g["similarity"]),
    "shuffled": lambda ds, g: shuffle_edges(g["original"], np.random.default_rng(0)),
    "empty": lambda ds, g: empty_edges(g["original"]),
}


def _cmd_build_graphs(args: argparse.Namespace) -> int:
    if args.cache:
        dataset, _ = load_dataset_cache(args.cache)
    else:
        dataset = load_dataset(*resolve_data_paths(args.data_root))
    wanted = args.variants.split(",") if args.variants else ["original"]
    unknown = set(wanted) - set(_BUILDERS)
    if unknown:
        raise ConfigError(f"unknown graph variants: {sorted(unknown)}")
    # Dependency order: derived variants need their parents built first.
    needs_original = {"augmented_union", "shuffled", "empty"} & set(wanted)
    order = [v for v in _BUILDERS if v in wanted or
             (v == "original" and needs_original) or
             (v == "similarity" and "augmented_union" in wanted)]
    built = {}
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    for variant in order:
        built[variant] = _BUILDERS[variant](dataset, built)
    for variant in wanted:
        graph = built[variant]
        export_edgelist(graph, outdir / f"{variant}.edges.csv")
        print(json.dumps(graph_stats(graph).to_dict()))
    return 0


def _resolve_spec(args: argparse.Namespace):
    if args.spec == "paper":
        spec = build_paper_spec()
    else:
        spec = load_spec(args.spec)
    if getattr(args, "output_dir", None):
        spec.output_dir = args.output_dir
    if getattr(args, "data_root", None):
        spec.data_root = args.data_root
    if getattr(args, "seed_list", None):
        spec.seeds = _parse_seed_list(args.seed_list)
    if getattr(args, "protocol", None):
        spec.conditions = [c.__class__(**{**c.to_dict(), "protocol": args.protocol})
                           for c in spec.conditions if c.uses_graph()] + \
                          [c for c in spec.conditions if not c.uses_graph()]
    if getattr(args, "fit_scope", None):
        spec.conditions = [c.__class__(**{**c.to_dict(), "fit_scope": args.fit_scope})
                           for c in spec.conditions]
    spec.validate()
    return spec


def _cmd_run(args: argparse.Namespace) -> int:
    spec = _resolve_spec(args)
    outdir = Path(spec.output_dir)
    outdir.mkdir(parents=True, exist_ok=True)
    save_spec(spec, outdir / "spec.json")
    records = run(spec, jobs=args.jobs)
    n_ok = sum(1 for r in records if r["status"] == "ok")
    n_failed = len(records) - n_ok
    for rec in records:
        line = f"{rec['condition']} seed={rec['seed']} status={rec['status']}"
        if rec["status"] == "ok" and rec.get("metrics"):
            line += f" f1={rec['metrics']['f1']:.4f}"
        elif rec.get("error"):
            line += f" error={rec['error']}"
        print(line)
    print(f"{n_ok}/{len(records)} cells ok, {n_failed} failed -> {outdir}")
    return 0 if n_failed == 0 else 2


def _cmd_compare(args: argparse.Namespace) -> int:
    spec = _resolve_spec(args)
    records = load_records(spec.output_dir)
    reports = run_comparisons(spec, records)
    for entry in reports:
        name = entry["comparison"]["name"]
        if entry["report"] is None:
            print(f"{name}: ERROR {entry['error']}")
        else:
            rep = entry["report"]
            print(f"{name}: delta={rep['delta']:+.4f} t={rep['t']:.3f} "
                  f"p={rep['p']:.3g} d={rep['cohens_d']:.3f}")
    return 0


def _cmd_report(args: argparse.Namespace) -> int:
    outdir = Path(args.run_dir)
    records = load_records(outdir)
    comparisons_path = outdir / "comparisons.json"
    reports = (json.loads(comparisons_path.read_text())
               if comparisons_path.exists() else [])
    tables_dir = Path(args.out) if args.out else outdir / "tables"
    manifest = emit_tables(records, reports, tables_dir,
                           drift_csv=outdir / "drift_series.csv")
    for name in sorted(manifest["files"]):
        print(f"{name}: {manifest['files'][name]['paper_anchor']}")
    print(f"wrote {len(manifest['files'])} files -> {tables_dir}")
    return 0


def _cmd_audit(args: argparse.Namespace) -> int:
    trained = load_checkpoint(args.checkpoint)
    if trained.audit is None:
        print("checkpoint carries no audit report")
        return 0
    report = trained.audit
    print(f"passed: {report.passed}")
    for violation in report.violations:
        print(f"  {violation.kind}: {violation.subject} {violation.detail}")
    if report.passed:
        print("no protocol violations")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="inductive-bench",
        description="Leakage-controlled benchmark harness for the Elliptic "
                    "Bitcoin dataset.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="load and validate the dataset CSVs")
    p.add_argument("--data-root", default=None,
                   help="directory with the three dataset CSVs "
                        "(default: $INDUCTIVE_BENCH_DATA)")
    p.add_argument("--fit-scope", choices=["train_only", "full_population"],
                   default=None, help="standardize features before caching")
    p.add_argument("--cache", default=None, help="write an .npz dataset cache")
    p.set_defaults(func=_cmd_ingest)

    p = sub.add_parser("build-graphs", help="construct and export graph variants")
    p.add_argument("--data-root", default=None)
    p.add_argument("--cache", default=None, help="read a dataset cache instead")
    p.add_argument("--variants", default="original",
                   help="comma list: original,similarity,knn,temporal,"
                        "augmented_union,shuffled,empty")
    p.add_argument("--out", default="graphs", help="output directory")
    p.set_defaults(func=_cmd_build_graphs)

    p = sub.add_parser("run", help="run an experiment grid")
    p.add_argument("spec", help="spec JSON path, or 'paper' for the full grid")
    p.add_argument("--output-dir", default=None)
    p.add_argument("--data-root", default=None)
    p.add_argument("--seed-list", default=None, help="'0,1,2' or '0..9'")
    p.add_argument("--protocol", choices=["strict_inductive", "transductive"],
                   default=None, help="override protocol on all graph conditions")
    p.add_argument("--fit-scope", choices=["train_only", "full_population"],
                   default=None, help="override scaler scope on all conditions")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("compare", help="run the spec's statistical comparisons")
    p.add_argument("spec", help="spec JSON path, or 'paper'")
    p.add_argument("--output-dir", default=None,
                   help="run directory holding the records")
    p.set_defaults(func=_cmd_compare)

    p = sub.add_parser("report", help="emit the report CSVs from a run directory")
    p.add_argument("run_dir")
    p.add_argument("--out", default=None, help="tables directory (default: run_dir/tables)")
    p.set_defaults(func=_cmd_report)

    p = sub.add_parser("audit", help="print a checkpoint's leakage audit")
    p.add_argument("checkpoint")
    p.set_defaults(func=_cmd_audit)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except _USAGE_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"unexpected failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
