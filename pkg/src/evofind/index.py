"""Corpus and index directory handling.

A corpus directory holds one feature export and (optionally) one symbol
table per (version, arch) bucket::

    corpus/
      exports/<version>__<arch>.json
      symbols/<version>__<arch>.sym
      manifest.csv            # synthetic ground truth, when generated

An index directory is the immutable product of ``build-index``: IDF tables,
architecture moments, fused-vector stores per binary, the prototype bank,
the anchor dump, and a manifest whose config hash must match on load.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .align import MatchAnchor, anchors_from_csv, anchors_to_csv
from .config import PipelineConfig
from .corpus import (
    Arch,
    BinaryId,
    FunctionRecord,
    SymbolRecord,
    filter_analysis_functions,
    load_feature_export,
    load_symbol_table,
    version_key,
    version_lt,
)
from .embed import (
    ArchMoments,
    IdfTable,
    IdfTables,
    CONTEXT_SPACE,
    TOKEN_SPACE,
    fit_arch_moments,
    fit_idf,
    fuse_all,
    graph_vector,
)
from .errors import ConfigHashMismatch, EmptyCorpus, MissingBucket, SchemaViolation
from .prototype import PrototypeBank, build_prototypes, deserialize_bank, serialize_bank
from .shape import ShapeVector, shape_descriptors
from .vecstore import read_vectors, write_vectors

Bucket = tuple[str, str]   # (version, arch tag)

INDEX_SCHEMA_VERSION = "1"


def bucket_stem(version: str, arch_tag: str) -> str:
    return f"{version}__{arch_tag}"


def _parse_stem(stem: str) -> Bucket:
    if "__" not in stem:
        raise SchemaViolation(f"bucket file name {stem!r} lacks version__arch")
    version, arch = stem.split("__", 1)
    return version, arch


@dataclass(frozen=True)
class CorpusDir:
    path: Path
    exports: dict[Bucket, Path]
    symbols: dict[Bucket, Path]

    @classmethod
    def scan(cls, path: str | Path) -> "CorpusDir":
        root = Path(path)
        exports = {}
        for p in sorted((root / "exports").glob("*.json")):
            exports[_parse_stem(p.stem)] = p
        symbols = {}
        sym_dir = root / "symbols"
        if sym_dir.is_dir():
            for p in sorted(sym_dir.glob("*.sym")):
                symbols[_parse_stem(p.stem)] = p
        if not exports:
            raise EmptyCorpus(f"no feature exports under {root}")
        return cls(path=root, exports=exports, symbols=symbols)

    def versions(self) -> list[str]:
        return sorted({v for v, _ in self.exports}, key=version_key)

    def arches(self) -> list[str]:
        return sorted({a for _, a in self.exports})

    def load_export(self, bucket: Bucket) -> tuple[BinaryId, list[FunctionRecord]]:
        if bucket not in self.exports:
            raise MissingBucket(f"no export for bucket {bucket}")
        binary, records = load_feature_export(
            self.exports[bucket].read_text(encoding="utf-8"))
        if (binary.version, binary.arch.tag) != bucket:
            raise SchemaViolation(
                f"export {self.exports[bucket]} declares "
                f"{(binary.version, binary.arch.tag)}, file name says {bucket}")
        return binary, records

    def load_symbols(self, bucket: Bucket) -> list[SymbolRecord]:
        if bucket not in self.symbols:
            raise MissingBucket(f"no symbol table for bucket {bucket}")
        return load_symbol_table(self.symbols[bucket].read_text(encoding="utf-8"))


def alignment_inputs(
    corpus: CorpusDir, bucket: Bucket, config: PipelineConfig,
) -> tuple[
    BinaryId, list[tuple[SymbolRecord, ShapeVector]],
    BinaryId, list[tuple[FunctionRecord, ShapeVector]],
]:
    """Shape-decorated labeled and stripped sides of one bucket.

    The labeled side keeps analysis functions with positive size; the
    stripped side keeps positive-size functions.  Shapes are computed over
    exactly the kept, address-sorted lists.
    """
    version, arch_tag = bucket
    binary, records = corpus.load_export(bucket)
    stripped = [r for r in records if r.size > 0]
    symbols = corpus.load_symbols(bucket)
    labeled = [s for s in filter_analysis_functions(
        symbols,
        frozenset(config.analysis_exclude_names),
        tuple(config.analysis_exclude_prefixes)) if s.size > 0]
    labeled.sort(key=lambda s: s.address)
    labeled_binary = BinaryId(version=version, arch=Arch.parse(arch_tag),
                              branch="unstripped", label=str(corpus.symbols[bucket]))
    strip_shapes = shape_descriptors(stripped, config.neighborhood)
    label_shapes = shape_descriptors(labeled, config.neighborhood)
    return (labeled_binary, list(zip(labeled, label_shapes)),
            binary, list(zip(stripped, strip_shapes)))


# --- index build --------------------------------------------------------------


@dataclass
class IndexData:
    """Loaded, read-only view of an index directory."""

    path: Path
    config: PipelineConfig
    cutoff: str
    idf: IdfTables
    moments: ArchMoments
    bank: PrototypeBank
    anchors: list[MatchAnchor]
    manifest: dict
    _vector_cache: dict[Bucket, tuple[list[int], np.ndarray]] = field(
        default_factory=dict)

    def embeddings(self, bucket: Bucket) -> tuple[list[int], np.ndarray]:
        """(addresses, fused matrix) for one binary, row-aligned."""
        if bucket not in self._vector_cache:
            stem = bucket_stem(*bucket)
            store = (self.path / "vectors" / f"{stem}.evpx").read_bytes()
            addr_text = (self.path / "vectors" / f"{stem}.addrs").read_text(
                encoding="utf-8")
            addrs = [int(line, 16) for line in addr_text.split()]
            vectors = read_vectors(store)
            if len(addrs) != vectors.shape[0]:
                raise SchemaViolation(f"vector store row mismatch for {stem}")
            self._vector_cache[bucket] = (addrs, vectors)
        return self._vector_cache[bucket]

    def anchor_identity_map(self) -> dict[Bucket, dict[int, str]]:
        """Bucket -> stripped address -> identity name."""
        out: dict[Bucket, dict[int, str]] = {}
        for a in self.anchors:
            bucket = (a.version, a.arch.tag)
            out.setdefault(bucket, {})[a.stripped_ref[1]] = a.identity.name
        return out


def build_index(
    corpus: CorpusDir,
    anchors: list[MatchAnchor],
    cutoff: str,
    config: PipelineConfig,
    out_dir: str | Path,
) -> dict:
    """Fit IDF and moments on training anchors, fuse every binary, build
    the prototype bank, and write everything under ``out_dir``.

    Training = anchors from versions strictly older than the cutoff; the
    evaluated versions contribute vectors but never statistics.
    """
    out = Path(out_dir)
    (out / "vectors").mkdir(parents=True, exist_ok=True)

    training = [a for a in anchors if version_lt(a.version, cutoff)]
    if not training:
        raise EmptyCorpus(
            f"no training anchors strictly older than cutoff {cutoff}")
    anchored_by_bucket: dict[Bucket, dict[int, MatchAnchor]] = {}
    for a in training:
        bucket = (a.version, a.arch.tag)
        anchored_by_bucket.setdefault(bucket, {})[a.stripped_ref[1]] = a

    # pass A: fit idf and moments on anchored training functions only
    token_df: dict[str, int] = {}
    context_df: dict[str, int] = {}
    doc_count = 0
    moment_rows: list[tuple[Arch, np.ndarray, ShapeVector]] = []
    for bucket in sorted(anchored_by_bucket, key=lambda b: (version_key(b[0]), b[1])):
        binary, records = corpus.load_export(bucket)
        kept = [r for r in records if r.size > 0]
        shapes = shape_descriptors(kept, config.neighborhood)
        by_addr = anchored_by_bucket[bucket]
        for rec, sv in zip(kept, shapes):
            if rec.address not in by_addr:
                continue
            doc_count += 1
            for term in set(rec.tokens):
                token_df[term] = token_df.get(term, 0) + 1
            for term in set(rec.contexts):
                context_df[term] = context_df.get(term, 0) + 1
            moment_rows.append((binary.arch, graph_vector(rec), sv))
    if doc_count == 0:
        raise EmptyCorpus("training anchors reference no exported functions")
    idf = IdfTables(
        tokens=IdfTable(space=TOKEN_SPACE, doc_count=doc_count, df=token_df),
        contexts=IdfTable(space=CONTEXT_SPACE, doc_count=doc_count,
                          df=context_df),
    )
    moments = fit_arch_moments(moment_rows, epsilon=config.epsilon)

    # pass B: fuse every binary; collect training-anchor vectors for the bank
    proto_rows: list[tuple[str, object, np.ndarray]] = []
    n_functions = 0
    for bucket in sorted(corpus.exports, key=lambda b: (version_key(b[0]), b[1])):
        binary, records = corpus.load_export(bucket)
        kept = [r for r in records if r.size > 0]
        shapes = shape_descriptors(kept, config.neighborhood)
        matrix = fuse_all(kept, shapes, binary.arch, idf, moments)
        n_functions += len(kept)
        stem = bucket_stem(*bucket)
        (out / "vectors" / f"{stem}.evpx").write_bytes(write_vectors(matrix))
        (out / "vectors" / f"{stem}.addrs").write_text(
            "".join(f"0x{r.address:x}\n" for r in kept), encoding="utf-8")
        by_addr = anchored_by_bucket.get(bucket, {})
        for row, rec in enumerate(kept):
            anchor = by_addr.get(rec.address)
            if anchor is not None:
                proto_rows.append((anchor.version, anchor.identity, matrix[row]))

    bank = build_prototypes(proto_rows, cutoff_version=cutoff)
    manifest_bank, store = serialize_bank(bank)
    (out / "prototypes.tsv").write_text(manifest_bank, encoding="utf-8")
    (out / "prototypes.evpx").write_bytes(store)
    (out / "idf_tokens.json").write_text(idf.tokens.to_json(), encoding="utf-8")
    (out / "idf_contexts.json").write_text(idf.contexts.to_json(), encoding="utf-8")
    (out / "arch_moments.json").write_text(moments.to_json(), encoding="utf-8")
    (out / "anchors.csv").write_text(anchors_to_csv(anchors), encoding="utf-8")

    manifest = {
        "schema_version": INDEX_SCHEMA_VERSION,
        "cutoff": cutoff,
        "versions": corpus.versions(),
        "arches": corpus.arches(),
        "counts": {
            "binaries": len(corpus.exports),
            "functions": n_functions,
            "anchors": len(anchors),
            "training_anchors": len(training),
            "prototypes": len(bank),
        },
        "config": config.to_dict(),
        "config_sha256": config.sha256(),
    }
    (out / "manifest.json").write_text(
        json.dumps(manifest, indent=2, ensure_ascii=False) + "\n",
        encoding="utf-8")
    return manifest


def load_index(path: str | Path) -> IndexData:
    """Load an index directory, failing closed on any config-hash mismatch."""
    root = Path(path)
    manifest = json.loads((root / "manifest.json").read_text(encoding="utf-8"))
    if manifest.get("schema_version") != INDEX_SCHEMA_VERSION:
        raise SchemaViolation("unsupported index schema_version")
    config = PipelineConfig.from_dict(manifest["config"])
    if config.sha256() != manifest["config_sha256"]:
        raise ConfigHashMismatch(
            "index manifest hash does not match its configuration")
    idf = IdfTables(
        tokens=IdfTable.from_json(
            (root / "idf_tokens.json").read_text(encoding="utf-8")),
        contexts=IdfTable.from_json(
            (root / "idf_contexts.json").read_text(encoding="utf-8")),
    )
    moments = ArchMoments.from_json(
        (root / "arch_moments.json").read_text(encoding="utf-8"))
    bank = deserialize_bank(
        (root / "prototypes.tsv").read_text(encoding="utf-8"),
        (root / "prototypes.evpx").read_bytes())
    anchors = anchors_from_csv(
        (root / "anchors.csv").read_text(encoding="utf-8"))
    return IndexData(path=root, config=config, cutoff=manifest["cutoff"],
                     idf=idf, moments=moments, bank=bank, anchors=anchors,
                     manifest=manifest)
