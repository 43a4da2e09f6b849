"""Batch command-line front end.

Subcommands wire the pipeline end to end: extract-symbols, ingest, align,
build-index, query, eval, patch-proxy, synth, report.  All constants come
from an optional JSON config file with flags overriding; every random
choice flows from an explicit --seed (absent means 0, never entropy).
Commands are idempotent on unchanged inputs and never mutate them.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from . import __version__
from .align import AlignConfig, MatchAnchor, anchors_from_csv, anchors_to_csv, bidirectional_align
from .config import PipelineConfig
from .corpus import (
    Arch,
    elf_section_stats,
    filter_analysis_functions,
    load_feature_export,
    parse_elf_symbols,
    serialize_feature_export,
    serialize_symbol_table,
    version_key,
    version_lt,
)
from .errors import EvoFindError, InvalidConfig, MissingBucket
from .evaluate import run_task1
from .index import CorpusDir, IndexData, alignment_inputs, bucket_stem, build_index, load_index
from .patchproxy import LabeledBinary, binary_metrics, folds_to_csv, holdout_eval
from .retrieve import SCORER_NAMES, FunctionFeatures, ScoreWeights, evo_components
from .shape import ShapeScale, shape_descriptors
from .synth import SynthConfig, default_arch_noise, generate_corpus


def _load_config(args) -> PipelineConfig:
    cfg = PipelineConfig()
    if getattr(args, "config", None):
        cfg = PipelineConfig.from_json(
            Path(args.config).read_text(encoding="utf-8"))
    return cfg.override(
        window=getattr(args, "window", None),
        threshold=getattr(args, "threshold", None),
        neighborhood=getattr(args, "neighborhood", None),
        weight_shape=getattr(args, "weight_shape", None),
        weight_fusion=getattr(args, "weight_fusion", None),
        weight_prototype=getattr(args, "weight_prototype", None),
        min_query_size=getattr(args, "min_query_size", None),
        min_query_instructions=getattr(args, "min_query_instructions", None),
    )


def _error_record(exc: Exception, context: str | None = None) -> str:
    record = {"error": type(exc).__name__, "message": str(exc)}
    if context:
        record["context"] = context
    return json.dumps(record)


# --- subcommands ---------------------------------------------------------------

def cmd_extract_symbols(args) -> int:
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    if args.name and len(args.elf) > 1:
        raise InvalidConfig("--name only works with a single input file")
    for path in args.elf:
        data = Path(path).read_bytes()
        symbols = parse_elf_symbols(data)
        symbols.sort(key=lambda s: (s.address, s.name))
        name = args.name or Path(path).stem
        target = out_dir / f"{name}.sym"
        target.write_text(serialize_symbol_table(symbols), encoding="utf-8")
        n_sec, n_debug = elf_section_stats(data)
        meta = {"file_size_bytes": len(data), "n_sections": n_sec,
                "n_debug_sections": n_debug}
        (out_dir / f"{name}.meta.json").write_text(
            json.dumps(meta, indent=2) + "\n", encoding="utf-8")
        analysis = len(filter_analysis_functions(symbols))
        print(f"{path}: {len(symbols)} function symbols "
              f"({analysis} analysis) -> {target}")
    return 0


def cmd_ingest(args) -> int:
    corpus = Path(args.corpus)
    (corpus / "exports").mkdir(parents=True, exist_ok=True)
    for path in args.export:
        binary, records = load_feature_export(
            Path(path).read_text(encoding="utf-8"))
        stem = bucket_stem(binary.version, binary.arch.tag)
        target = corpus / "exports" / f"{stem}.json"
        target.write_text(serialize_feature_export(binary, records),
                          encoding="utf-8")
        print(f"{path}: {len(records)} functions -> {target}")
    return 0


def _align_bucket(corpus, bucket, config, align_config):
    labeled_binary, labeled, stripped_binary, stripped = alignment_inputs(
        corpus, bucket, config)
    return bidirectional_align(
        labeled_binary, labeled, stripped_binary, stripped,
        config=align_config, scale=ShapeScale(alpha=tuple(config.shape_scale)))


def cmd_align(args) -> int:
    config = _load_config(args)
    corpus = CorpusDir.scan(args.corpus)
    align_config = AlignConfig(window=config.window,
                               threshold=config.threshold)
    buckets = sorted((b for b in corpus.exports if b in corpus.symbols),
                     key=lambda b: (version_key(b[0]), b[1]))
    if not buckets:
        raise MissingBucket("no bucket has both an export and a symbol table")
    workers = args.workers or os.cpu_count() or 1
    anchors: list[MatchAnchor] = []
    with ThreadPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(_align_bucket, corpus, b, config, align_config)
                   for b in buckets]
        for bucket, fut in zip(buckets, futures):
            found = fut.result()
            anchors.extend(found)
            print(f"{bucket_stem(*bucket)}: {len(found)} anchors")
    Path(args.out).write_text(anchors_to_csv(anchors), encoding="utf-8")
    print(f"total anchors: {len(anchors)} -> {args.out}")
    return 0


def cmd_build_index(args) -> int:
    config = _load_config(args)
    corpus = CorpusDir.scan(args.corpus)
    anchors = anchors_from_csv(Path(args.anchors).read_text(encoding="utf-8"))
    manifest = build_index(corpus, anchors, args.cutoff, config, args.out)
    counts = manifest["counts"]
    print(f"index at {args.out}: {counts['binaries']} binaries, "
          f"{counts['functions']} functions, "
          f"{counts['training_anchors']} training anchors, "
          f"{counts['prototypes']} prototypes (cutoff {manifest['cutoff']})")
    return 0


def cmd_eval(args) -> int:
    corpus = CorpusDir.scan(args.corpus)
    index = load_index(args.index)
    scorers = tuple(s.strip() for s in args.scorers.split(","))
    for s in scorers:
        if s not in SCORER_NAMES:
            raise InvalidConfig(f"unknown scorer {s!r}; pick from {SCORER_NAMES}")
    results = run_task1(corpus, index, scorers=scorers)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    from .evaluate import reports_to_csv

    summary_doc = {
        "cutoff": index.cutoff,
        "config_sha256": index.manifest["config_sha256"],
        "scorers": {},
    }
    for name, result in results.items():
        (out / f"pairs_{name}.csv").write_text(
            reports_to_csv(list(result.reports)), encoding="utf-8")
        doc = dataclasses.asdict(result.summary)
        doc["skipped_pairs"] = [list(p) for p in result.summary.skipped_pairs]
        summary_doc["scorers"][name] = doc
        s = result.summary
        print(f"{name}: pairs={s.pair_count} queries={s.query_count} "
              f"hit@1={s.hit_at_1:.4f} hit@5={s.hit_at_5:.4f} "
              f"hit@10={s.hit_at_10:.4f} mrr@10={s.mrr_at_10:.4f} "
              f"inspected@10={s.mean_inspected_at_10:.4f} "
              f"reduction={s.inspection_reduction_value:.4f}")
    (out / "summary.json").write_text(
        json.dumps(summary_doc, indent=2, ensure_ascii=False) + "\n",
        encoding="utf-8")
    return 0


def _resolve_reference(args, index: IndexData):
    """Locate the query function's features and identity."""
    from .corpus import Identity

    identity = Identity(args.identity) if args.identity else None
    if args.reference_export:
        if not args.reference_address:
            raise InvalidConfig("--reference-address required with "
                                "--reference-export")
        binary, records = load_feature_export(
            Path(args.reference_export).read_text(encoding="utf-8"))
        kept = [r for r in records if r.size > 0]
        shapes = shape_descriptors(kept, index.config.neighborhood)
        addr = int(args.reference_address, 16)
        for rec, sv in zip(kept, shapes):
            if rec.address == addr:
                return binary, rec, sv, identity
        raise MissingBucket(
            f"address 0x{addr:x} not in {args.reference_export}")

    if identity is None:
        raise InvalidConfig("need --identity and/or --reference-export")
    if not args.corpus:
        raise InvalidConfig("identity-only queries need --corpus to locate "
                            "the reference function")
    corpus = CorpusDir.scan(args.corpus)
    matches = [a for a in index.anchors
               if a.identity == identity
               and version_lt(a.version, index.cutoff)
               and (not args.source_arch or a.arch.tag == args.source_arch)]
    if not matches:
        raise MissingBucket(
            f"no training anchor for identity {identity.name!r}")
    matches.sort(key=lambda a: (version_key(a.version), a.arch.tag,
                                a.stripped_ref[1]))
    chosen = matches[-1]   # newest eligible version
    bucket = (chosen.version, chosen.arch.tag)
    binary, records = corpus.load_export(bucket)
    kept = [r for r in records if r.size > 0]
    shapes = shape_descriptors(kept, index.config.neighborhood)
    for rec, sv in zip(kept, shapes):
        if rec.address == chosen.stripped_ref[1]:
            return binary, rec, sv, identity
    raise MissingBucket(f"anchor address missing from export {bucket}")


def cmd_query(args) -> int:
    from .embed import fuse

    index = load_index(args.index)
    cfg = index.config
    ref_binary, ref_record, ref_shape, identity = _resolve_reference(args, index)
    weights = ScoreWeights(shape=cfg.weight_shape, fusion=cfg.weight_fusion,
                           prototype=cfg.weight_prototype)
    scale = ShapeScale(alpha=tuple(cfg.shape_scale))

    target_binary, target_records = load_feature_export(
        Path(args.target).read_text(encoding="utf-8"))
    kept = [r for r in target_records if r.size > 0]
    shapes = shape_descriptors(kept, cfg.neighborhood)

    q = FunctionFeatures(
        address=ref_record.address, size=ref_record.size, shape=ref_shape,
        embedding=fuse(ref_record, ref_shape, ref_binary.arch, index.idf,
                       index.moments))
    scored = []
    for rec, sv in zip(kept, shapes):
        c = FunctionFeatures(
            address=rec.address, size=rec.size, shape=sv,
            embedding=fuse(rec, sv, target_binary.arch, index.idf,
                           index.moments))
        parts = evo_components(q, c, index.bank, identity, weights, scale)
        scored.append((rec.address, parts))
    scored.sort(key=lambda t: (-t[1].total, t[0]))
    top = scored[:args.top] if args.top else scored

    doc = {
        "query": {
            "version": ref_binary.version,
            "arch": ref_binary.arch.tag,
            "address": f"0x{ref_record.address:x}",
            "identity": identity.name if identity else None,
            "prototype_available": bool(
                identity and index.bank.lookup(identity) is not None),
        },
        "pool": {
            "version": target_binary.version,
            "arch": target_binary.arch.tag,
            "size": len(kept),
        },
        "candidates": [
            {
                "rank": i + 1,
                "address": f"0x{addr:x}",
                "score": parts.total,
                "geometry": parts.geometry,
                "fusion": parts.fusion,
                "prototype": parts.prototype,
            }
            for i, (addr, parts) in enumerate(top)
        ],
    }
    text = json.dumps(doc, indent=2, ensure_ascii=False) + "\n"
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
        print(f"evidence for {len(top)} candidates -> {args.out}")
    else:
        print(text, end="")
    return 0


def _bucket_section_meta(corpus: CorpusDir, bucket) -> tuple[int, int, int | None]:
    """(n_sections, n_debug, file size) from a .meta.json sidecar, if any.

    extract-symbols writes the sidecar for real ELF input; synthetic corpora
    have none and default to zero sections.
    """
    sym_path = corpus.symbols.get(bucket)
    if sym_path is not None:
        meta_path = sym_path.with_suffix(".meta.json")
        if meta_path.exists():
            meta = json.loads(meta_path.read_text(encoding="utf-8"))
            return (int(meta.get("n_sections", 0)),
                    int(meta.get("n_debug_sections", 0)),
                    int(meta["file_size_bytes"])
                    if "file_size_bytes" in meta else None)
    return 0, 0, None


def cmd_patch_proxy(args) -> int:
    corpus = CorpusDir.scan(args.corpus)
    binaries = []
    missing_sym = []
    for bucket in sorted(set(corpus.exports) | set(corpus.symbols),
                         key=lambda b: (version_key(b[0]), b[1])):
        version, arch = bucket
        n_sec, n_debug, file_size = _bucket_section_meta(corpus, bucket)
        if bucket in corpus.symbols:
            symbols = corpus.load_symbols(bucket)
            analysis = filter_analysis_functions(symbols)
            sizes = [s.size for s in analysis if s.size > 0]
            metrics = binary_metrics(
                file_size_bytes=file_size if file_size is not None
                else sum(s.size for s in symbols),
                n_sym=len(symbols), n_ana=len(analysis),
                function_sizes=sizes, n_sec=n_sec, n_debug=n_debug)
            flag = False
        else:
            _, records = corpus.load_export(bucket)
            sizes = [r.size for r in records if r.size > 0]
            metrics = binary_metrics(
                file_size_bytes=sum(sizes),
                n_sym=0, n_ana=len(records), function_sizes=sizes)
            missing_sym.append(bucket_stem(*bucket))
            flag = True
        binaries.append(LabeledBinary(arch=arch, version=version,
                                      metrics=metrics, n_sym_missing=flag))
    if missing_sym:
        print("warning: no unstripped twin, n_sym set to 0 for: "
              + ", ".join(missing_sym), file=sys.stderr)
    reports, means = holdout_eval(binaries, cve_boundary=args.boundary)
    text = folds_to_csv(reports, means)
    Path(args.out).write_text(text, encoding="utf-8")
    for r in reports:
        print(f"{r.held_out_arch}: acc={r.accuracy:.4f} prec={r.precision:.4f} "
              f"rec={r.recall:.4f} f1={r.f1:.4f}")
    print(f"mean: acc={means['accuracy']:.4f} prec={means['precision']:.4f} "
          f"rec={means['recall']:.4f} f1={means['f1']:.4f} -> {args.out}")
    return 0


def cmd_synth(args) -> int:
    arches = tuple(a.strip() for a in args.arches.split(","))
    config = SynthConfig(
        seed=args.seed,
        n_identities=args.identities,
        n_versions=args.versions,
        arches=arches,
        drift_rate=args.drift_rate,
        arch_noise=default_arch_noise(arches, args.arch_noise),
        changed_magnitude=args.changed_magnitude,
        layout_jitter=args.layout_jitter,
    )
    stats = generate_corpus(config, args.out)
    print(f"corpus at {args.out}: {stats['buckets']} buckets, "
          f"{stats['manifest_rows']} manifest rows")
    return 0


def cmd_report(args) -> int:
    eval_dir = Path(args.eval)
    summary = json.loads((eval_dir / "summary.json").read_text(encoding="utf-8"))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    metric_cols = ("hit_at_1", "hit_at_5", "hit_at_10", "mrr_at_10",
                   "mean_inspected_at_10", "mean_pool_size",
                   "inspection_reduction_value")
    lines = ["scorer,pairs,queries," + ",".join(metric_cols)]
    for name in sorted(summary["scorers"]):
        s = summary["scorers"][name]
        lines.append(",".join(
            [name, str(s["pair_count"]), str(s["query_count"])]
            + [repr(s[c]) for c in metric_cols]))
    (out / "summary.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")

    from .evaluate import reports_from_csv

    trend: dict[str, dict[str, tuple[float, int]]] = {}
    for name in sorted(summary["scorers"]):
        pair_file = eval_dir / f"pairs_{name}.csv"
        if not pair_file.exists():
            continue
        per_version: dict[str, list] = {}
        for r in reports_from_csv(pair_file.read_text(encoding="utf-8")):
            per_version.setdefault(r.version, []).append(r)
        trend[name] = {
            v: (sum(r.hit_at_10 * r.query_count for r in rs)
                / max(1, sum(r.query_count for r in rs)),
                sum(r.query_count for r in rs))
            for v, rs in per_version.items()
        }
    versions = sorted({v for t in trend.values() for v in t}, key=version_key)
    rows = ["version," + ",".join(sorted(trend))]
    for v in versions:
        rows.append(",".join(
            [v] + [repr(trend[n][v][0]) if v in trend[n] else ""
                   for n in sorted(trend)]))
    (out / "version_trend.csv").write_text("\n".join(rows) + "\n",
                                           encoding="utf-8")

    if not args.no_plot and versions:
        try:
            import matplotlib
            matplotlib.use("Agg")
            import matplotlib.pyplot as plt
        except ImportError as exc:
            raise InvalidConfig(
                "plot output needs matplotlib (pip install evofind[plots]); "
                "re-run with --no-plot to skip") from exc
        fig, ax = plt.subplots(figsize=(7, 4))
        for name in sorted(trend):
            ys = [trend[name].get(v, (float("nan"),))[0] for v in versions]
            ax.plot(versions, ys, marker="o", label=name)
        ax.set_xlabel("version")
        ax.set_ylabel("weighted Hit@10")
        ax.set_ylim(0, 1.05)
        ax.legend()
        ax.grid(True, alpha=0.3)
        fig.tight_layout()
        fig.savefig(out / "version_trend.png", dpi=120,
                    metadata={"Software": "evofind"})
        plt.close(fig)

    for line in lines:
        print(line)
    return 0


# --- argument parsing ------------------------------------------------------------

def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file with pipeline constants")
    p.add_argument("--window", type=int, help="alignment search window")
    p.add_argument("--threshold", type=float, help="alignment distance threshold")
    p.add_argument("--neighborhood", type=int, help="shape neighborhood half-width")
    p.add_argument("--weight-shape", type=float, dest="weight_shape")
    p.add_argument("--weight-fusion", type=float, dest="weight_fusion")
    p.add_argument("--weight-prototype", type=float, dest="weight_prototype")
    p.add_argument("--min-query-size", type=int, dest="min_query_size")
    p.add_argument("--min-query-instructions", type=int,
                   dest="min_query_instructions")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="evofind",
        description="Function retrieval and patch-state triage for stripped "
                    "firmware binaries")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("extract-symbols",
                       help="extract function symbols from unstripped ELF files")
    p.add_argument("elf", nargs="+", help="ELF file paths")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--name", help="output stem (single input only)")
    p.set_defaults(func=cmd_extract_symbols)

    p = sub.add_parser("ingest", help="validate feature exports into a corpus")
    p.add_argument("export", nargs="+", help="feature-export JSON files")
    p.add_argument("--corpus", required=True, help="corpus directory")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("align", help="build mutual anchors for every bucket")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True, help="anchor dump CSV path")
    p.add_argument("--workers", type=int, help="parallel buckets (default: cores)")
    _add_config_flags(p)
    p.set_defaults(func=cmd_align)

    p = sub.add_parser("build-index",
                       help="fit statistics, fuse vectors, build prototypes")
    p.add_argument("--corpus", required=True)
    p.add_argument("--anchors", required=True, help="anchor dump CSV")
    p.add_argument("--cutoff", required=True,
                   help="training uses versions strictly older than this")
    p.add_argument("--out", required=True, help="index directory")
    _add_config_flags(p)
    p.set_defaults(func=cmd_build_index)

    p = sub.add_parser("query", help="rank a target export for one reference")
    p.add_argument("--index", required=True)
    p.add_argument("--target", required=True, help="target feature export")
    p.add_argument("--identity", help="normalized identity being hunted")
    p.add_argument("--corpus", help="corpus directory (identity-only queries)")
    p.add_argument("--source-arch", dest="source_arch",
                   help="prefer reference functions from this arch")
    p.add_argument("--reference-export", dest="reference_export",
                   help="export holding the reference function")
    p.add_argument("--reference-address", dest="reference_address",
                   help="reference function address (hex)")
    p.add_argument("--top", type=int, default=25,
                   help="candidates to emit (0 = all)")
    p.add_argument("--out", help="evidence JSON path (default: stdout)")
    p.set_defaults(func=cmd_query)

    p = sub.add_parser("eval", help="run the directed cross-arch protocol")
    p.add_argument("--corpus", required=True)
    p.add_argument("--index", required=True)
    p.add_argument("--out", required=True, help="report directory")
    p.add_argument("--scorers", default="evo,shape,size")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("patch-proxy",
                       help="hold-one-arch-out patch-state evaluation")
    p.add_argument("--corpus", required=True)
    p.add_argument("--boundary", required=True,
                   help="first patched version (label = version >= boundary)")
    p.add_argument("--out", required=True, help="per-fold CSV path")
    p.set_defaults(func=cmd_patch_proxy)

    p = sub.add_parser("synth", help="generate a seeded synthetic corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--identities", type=int, default=100)
    p.add_argument("--versions", type=int, default=4)
    p.add_argument("--arches", default="aarch64,arm,mips,mipsel,x86_64")
    p.add_argument("--drift-rate", type=float, default=0.05, dest="drift_rate")
    p.add_argument("--arch-noise", type=float, default=0.35, dest="arch_noise")
    p.add_argument("--changed-magnitude", type=float, default=0.30,
                   dest="changed_magnitude")
    p.add_argument("--layout-jitter", type=float, default=0.25,
                   dest="layout_jitter")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("report", help="render summary tables and trend plots")
    p.add_argument("--eval", required=True, help="eval output directory")
    p.add_argument("--out", required=True, help="report directory")
    p.add_argument("--no-plot", action="store_true")
    p.set_defaults(func=cmd_report)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except EvoFindError as exc:
        print(_error_record(exc), file=sys.stderr)
        return 1
    except OSError as exc:
        print(_error_record(exc, context=getattr(exc, "filename", None)),
              file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
