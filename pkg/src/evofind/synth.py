"""Seeded synthetic corpus generator.

Produces multi-version, multi-architecture stripped feature exports plus
unstripped symbol tables with controlled drift, so the full pipeline can be
verified end to end at desk scale.  Per identity a base profile (size, token
distribution, graph rates) is sampled once; per version a drift_rate
fraction of identities is perturbed; per architecture tokens pass through a
bijective remap, sizes are scaled, and addresses are laid out in base order
with bounded adjacent transpositions.  The stripped and unstripped branch of
a bucket share sizes but draw their layout jitter independently, which is
the only recovery noise between them: with layout_jitter = 0 the two
branches are geometrically identical.

All randomness flows from the config seed through per-purpose substreams,
so output is byte-identical across runs and platforms.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

import numpy as np

from .corpus import (
    Arch,
    BinaryId,
    FunctionRecord,
    N_EDGE_TYPES,
    N_OP_CLASSES,
    STRIPPED,
    SymbolRecord,
    serialize_feature_export,
    serialize_symbol_table,
)
from .errors import InvalidConfig

TOKEN_VOCAB = 256
CONTEXT_VOCAB = 48

DEFAULT_ARCHES = ("aarch64", "arm", "mips", "mipsel", "x86_64")

# bytes per instruction analog per architecture position (cycled)
_BYTES_PER_INSTR = (4.0, 4.0, 4.0, 4.0, 3.5)

# runtime symbols injected into every unstripped table; excluded by the
# analysis filter downstream
_RUNTIME_SYMBOLS = (
    ("_start", 0x400, 48),
    ("__libc_csu_init", 0x440, 92),
    ("frame_dummy", 0x4a0, 20),
    ("__aeabi_unwind", 0x4c0, 0),
)


@dataclass(frozen=True)
class ArchNoise:
    token_remap_fraction: float = 0.0
    size_scale: float = 1.0


def default_arch_noise(arches: tuple[str, ...], level: float) -> tuple[tuple[str, ArchNoise], ...]:
    """Spread remap fractions and size scales across arches from one knob."""
    n = len(arches)
    out = []
    for i, arch in enumerate(arches):
        offset = 0.0 if n == 1 else 2.0 * i / (n - 1) - 1.0
        out.append((arch, ArchNoise(
            token_remap_fraction=min(1.0, 0.6 * level),
            size_scale=1.0 + 0.25 * level * offset,
        )))
    return tuple(out)


@dataclass(frozen=True)
class SynthConfig:
    seed: int = 0
    n_identities: int = 100
    n_versions: int = 4
    arches: tuple[str, ...] = DEFAULT_ARCHES
    drift_rate: float = 0.05
    arch_noise: tuple[tuple[str, ArchNoise], ...] = ()
    changed_magnitude: float = 0.30
    layout_jitter: float = 0.25

    def __post_init__(self):
        if self.n_identities < 1 or self.n_versions < 1:
            raise InvalidConfig("need at least one identity and one version")
        if not self.arches or len(set(self.arches)) != len(self.arches):
            raise InvalidConfig("arch list must be non-empty and unique")
        for name, value in (("drift_rate", self.drift_rate),
                            ("changed_magnitude", self.changed_magnitude),
                            ("layout_jitter", self.layout_jitter)):
            if not 0.0 <= value <= 1.0:
                raise InvalidConfig(f"{name} must lie in [0, 1]")
        for arch, noise in self.arch_noise:
            if not 0.0 <= noise.token_remap_fraction <= 1.0:
                raise InvalidConfig("token_remap_fraction must lie in [0, 1]")
            if noise.size_scale <= 0:
                raise InvalidConfig("size_scale must be > 0")
        if not 0 <= self.seed < 2 ** 64:
            raise InvalidConfig("seed must be an unsigned 64-bit integer")

    def versions(self) -> tuple[str, ...]:
        return tuple(f"1.{k}.0" for k in range(self.n_versions))

    def noise_for(self, arch: str) -> ArchNoise:
        for name, noise in self.arch_noise:
            if name == arch:
                return noise
        return ArchNoise()


@dataclass
class _IdentityProfile:
    size: float
    tok_ids: np.ndarray
    tok_w: np.ndarray
    ctx_ids: np.ndarray
    ctx_w: np.ndarray
    op_dist: np.ndarray
    edge_dist: np.ndarray
    call_rate: float
    branch_rate: float
    ret_rate: float
    str_rate: float
    const_rate: float
    block_rate: float
    edges_per_block: float


@dataclass(frozen=True)
class ManifestRow:
    version: str
    arch: str
    identity: str
    stripped_addr: int
    labeled_addr: int
    size: int
    changed: bool


@dataclass(frozen=True)
class SynthBucket:
    version: str
    arch: str
    stripped: list[FunctionRecord]
    symbols: list[SymbolRecord]
    rows: list[ManifestRow]


def _rng(config: SynthConfig, *stream: int) -> np.random.Generator:
    return np.random.default_rng([config.seed & (2 ** 64 - 1), *stream])


def _base_profiles(config: SynthConfig) -> list[_IdentityProfile]:
    rng = _rng(config, 1)
    profiles = []
    for _ in range(config.n_identities):
        size = float(np.exp(rng.uniform(np.log(8.0), np.log(6000.0))))
        k_tok = int(rng.integers(8, 25))
        tok_ids = rng.choice(TOKEN_VOCAB, size=k_tok, replace=False)
        tok_w = rng.dirichlet(np.full(k_tok, 0.6))
        k_ctx = int(rng.integers(4, 11))
        ctx_ids = rng.choice(CONTEXT_VOCAB, size=k_ctx, replace=False)
        ctx_w = rng.dirichlet(np.full(k_ctx, 0.7))
        profiles.append(_IdentityProfile(
            size=size,
            tok_ids=tok_ids, tok_w=tok_w,
            ctx_ids=ctx_ids, ctx_w=ctx_w,
            op_dist=rng.dirichlet(np.full(N_OP_CLASSES, 0.5)),
            edge_dist=rng.dirichlet(np.full(N_EDGE_TYPES, 0.5)),
            # spreads keep every density's training sigma well clear of the
            # normalization epsilon, so standardized variances stay at 1
            call_rate=float(rng.uniform(0.01, 0.15)),
            branch_rate=float(rng.uniform(0.05, 0.35)),
            ret_rate=float(rng.uniform(0.002, 0.10)),
            str_rate=float(rng.uniform(0.0, 0.12)),
            const_rate=float(rng.uniform(0.01, 0.15)),
            block_rate=float(rng.uniform(0.08, 0.22)),
            edges_per_block=float(rng.uniform(1.2, 1.8)),
        ))
    return profiles


def _apply_drift(config: SynthConfig, profiles: list[_IdentityProfile],
                 version_index: int) -> np.ndarray:
    """Perturb a drift_rate fraction of identities in place; returns the mask."""
    rng = _rng(config, 2, version_index)
    changed = rng.random(config.n_identities) < config.drift_rate
    for i in np.flatnonzero(changed):
        p = profiles[i]
        u = float(rng.uniform(0.5, 1.0))
        sign = 1.0 if rng.random() < 0.5 else -1.0
        p.size = max(8.0, p.size * (1.0 + sign * config.changed_magnitude * u))
        # small token-profile churn: one active token swapped out
        slot = int(rng.integers(0, len(p.tok_ids)))
        p.tok_ids = p.tok_ids.copy()
        p.tok_ids[slot] = int(rng.integers(0, TOKEN_VOCAB))
        p.call_rate = min(0.5, p.call_rate * float(rng.uniform(0.8, 1.25)))
    return changed


def _token_remap(config: SynthConfig, arch_index: int, arch: str) -> np.ndarray:
    """Bijective vocabulary permutation; identity outside the remapped subset."""
    noise = config.noise_for(arch)
    mapping = np.arange(TOKEN_VOCAB)
    k = int(round(noise.token_remap_fraction * TOKEN_VOCAB))
    if k >= 2:
        rng = _rng(config, 4, arch_index)
        subset = rng.choice(TOKEN_VOCAB, size=k, replace=False)
        mapping[np.sort(subset)] = np.sort(subset)[rng.permutation(k)]
    return mapping


def _jittered_order(config: SynthConfig, version_index: int, arch_index: int,
                    branch_code: int) -> np.ndarray:
    """Base identity order with bounded adjacent transpositions."""
    n = config.n_identities
    order = np.arange(n)
    n_swaps = int(round(config.layout_jitter * n * 2))
    if n_swaps and n > 1:
        rng = _rng(config, 6, version_index, arch_index, branch_code)
        positions = rng.integers(0, n - 1, size=n_swaps)
        for pos in positions:
            order[pos], order[pos + 1] = order[pos + 1], order[pos]
    return order


def _layout(order: np.ndarray, sizes: np.ndarray) -> np.ndarray:
    """Assign 16-byte-aligned addresses following the given order."""
    addrs = np.zeros(len(order), dtype=np.int64)
    cursor = 0x1000
    for idx in order:
        addrs[idx] = cursor
        cursor += (int(sizes[idx]) + 15) & ~15 or 16
    return addrs


def _clone_suffix(identity_index: int, version_index: int, arch_index: int) -> str:
    # sprinkle compiler clone suffixes over the unstripped names so the
    # normalization path is exercised by every synthetic corpus
    if (identity_index + 7 * version_index + 3 * arch_index) % 23 == 0:
        return ".isra.0"
    return ""


def iter_buckets(config: SynthConfig) -> Iterator[SynthBucket]:
    """Generate one bucket per (version, arch), version-major order."""
    profiles = _base_profiles(config)
    names = [f"fn_{i:05d}" for i in range(config.n_identities)]
    remaps = {a: _token_remap(config, ai, a)
              for ai, a in enumerate(config.arches)}
    # per-(identity, arch) codegen wiggle, constant across versions
    wiggles = {
        a: _rng(config, 5, ai).uniform(0.98, 1.02, size=config.n_identities)
        for ai, a in enumerate(config.arches)
    }

    for k, version in enumerate(config.versions()):
        changed = (_apply_drift(config, profiles, k) if k > 0
                   else np.zeros(config.n_identities, dtype=bool))
        for ai, arch in enumerate(config.arches):
            noise = config.noise_for(arch)
            bpi = _BYTES_PER_INSTR[ai % len(_BYTES_PER_INSTR)]
            rng = _rng(config, 7, k, ai)

            sizes = np.array([
                max(4, int(round(p.size * noise.size_scale * wiggles[arch][i])))
                for i, p in enumerate(profiles)
            ])
            strip_addrs = _layout(
                _jittered_order(config, k, ai, 0), sizes)
            label_addrs = _layout(
                _jittered_order(config, k, ai, 1), sizes)

            records = []
            for i, p in enumerate(profiles):
                s = int(sizes[i])
                instr = max(1, int(round(s / bpi)))
                blocks = max(1, int(round(instr * p.block_rate)))
                edges = min(2 * blocks, int(round(blocks * p.edges_per_block)))
                op_counts = rng.multinomial(instr, p.op_dist)
                edge_counts = rng.multinomial(edges, p.edge_dist)
                n_tok = min(120, max(6, instr // 2))
                tok_counts = rng.multinomial(n_tok, p.tok_w)
                remap = remaps[arch]
                tokens = []
                for tid, cnt in zip(p.tok_ids, tok_counts):
                    if cnt:
                        tokens.extend([f"t{remap[tid]:03d}"] * int(cnt))
                n_ctx = min(40, max(3, int(round(4 + instr * 0.05))))
                ctx_counts = rng.multinomial(n_ctx, p.ctx_w)
                contexts = []
                for cid, cnt in zip(p.ctx_ids, ctx_counts):
                    if cnt:
                        contexts.extend([f"c{cid:02d}"] * int(cnt))
                records.append(FunctionRecord(
                    address=int(strip_addrs[i]),
                    size=s,
                    instruction_count=instr,
                    block_count=blocks,
                    edge_count=edges,
                    call_count=min(instr, int(round(instr * p.call_rate))),
                    branch_count=min(instr, int(round(instr * p.branch_rate))),
                    ret_count=max(1, min(instr, int(round(instr * p.ret_rate)))),
                    string_ref_count=min(instr, int(round(instr * p.str_rate))),
                    const_ref_count=min(instr, int(round(instr * p.const_rate))),
                    op_class_counts=tuple(int(c) for c in op_counts),
                    edge_type_counts=tuple(int(c) for c in edge_counts),
                    tokens=tuple(sorted(tokens)),
                    contexts=tuple(sorted(contexts)),
                ))

            symbols = [
                SymbolRecord(name=name, address=addr, size=size,
                             is_analysis=False)
                for name, addr, size in _RUNTIME_SYMBOLS
            ]
            rows = []
            for i in range(config.n_identities):
                sym_name = names[i] + _clone_suffix(i, k, ai)
                symbols.append(SymbolRecord(
                    name=sym_name, address=int(label_addrs[i]),
                    size=int(sizes[i])))
                rows.append(ManifestRow(
                    version=version, arch=arch, identity=names[i],
                    stripped_addr=int(strip_addrs[i]),
                    labeled_addr=int(label_addrs[i]),
                    size=int(sizes[i]), changed=bool(changed[i])))

            records.sort(key=lambda r: r.address)
            symbols.sort(key=lambda s: s.address)
            yield SynthBucket(version=version, arch=arch, stripped=records,
                              symbols=symbols, rows=rows)


MANIFEST_COLUMNS = ("version", "arch", "identity", "stripped_addr",
                    "labeled_addr", "size", "changed")


def manifest_to_csv(rows: list[ManifestRow]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(MANIFEST_COLUMNS)
    for r in rows:
        writer.writerow([r.version, r.arch, r.identity,
                         f"0x{r.stripped_addr:x}", f"0x{r.labeled_addr:x}",
                         r.size, int(r.changed)])
    return buf.getvalue()


def manifest_from_csv(text: str) -> list[ManifestRow]:
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if header != list(MANIFEST_COLUMNS):
        raise ValueError(f"bad manifest header: {header}")
    return [ManifestRow(version=row[0], arch=row[1], identity=row[2],
                        stripped_addr=int(row[3], 16),
                        labeled_addr=int(row[4], 16),
                        size=int(row[5]), changed=bool(int(row[6])))
            for row in reader]


def generate_corpus(config: SynthConfig, out_dir: str | Path) -> dict:
    """Write exports, symbol tables and the ground-truth manifest to disk."""
    out = Path(out_dir)
    (out / "exports").mkdir(parents=True, exist_ok=True)
    (out / "symbols").mkdir(parents=True, exist_ok=True)
    all_rows: list[ManifestRow] = []
    n_buckets = 0
    for bucket in iter_buckets(config):
        stem = f"{bucket.version}__{bucket.arch}"
        binary = BinaryId(version=bucket.version, arch=Arch.parse(bucket.arch),
                          branch=STRIPPED, label=stem)
        (out / "exports" / f"{stem}.json").write_text(
            serialize_feature_export(binary, bucket.stripped), encoding="utf-8")
        (out / "symbols" / f"{stem}.sym").write_text(
            serialize_symbol_table(bucket.symbols), encoding="utf-8")
        all_rows.extend(bucket.rows)
        n_buckets += 1
    (out / "manifest.csv").write_text(manifest_to_csv(all_rows),
                                      encoding="utf-8")
    return {
        "buckets": n_buckets,
        "exports": n_buckets,
        "symbol_tables": n_buckets,
        "manifest_rows": len(all_rows),
    }
