"""Domain model and corpus ingestion.

Covers the unstripped branch (ELF symbol extraction, analysis-function
filtering, identity normalization) and the stripped branch (feature-export
ingestion and validation).  All types here are immutable and safe to share
across workers.
"""
from __future__ import annotations

import json
import re
import struct
from dataclasses import dataclass, field

from .errors import (
    DuplicateAddress,
    EmptyName,
    InvariantViolation,
    NotElf,
    SchemaViolation,
    TruncatedFile,
    UnsupportedClass,
)

STRIPPED = "stripped"
UNSTRIPPED = "unstripped"

KNOWN_ARCHES = ("aarch64", "arm", "mips", "mipsel", "x86_64")

OP_CLASS_BINS = (
    "arith", "logic", "shift", "muldiv", "load", "store", "stack",
    "cond-branch", "uncond-branch", "call", "ret", "compare", "move",
    "float", "vector", "other",
)
EDGE_TYPE_BINS = (
    "fallthrough", "cond-true", "cond-false", "uncond-jump", "call",
    "return", "switch", "computed", "other",
)

N_OP_CLASSES = len(OP_CLASS_BINS)
N_EDGE_TYPES = len(EDGE_TYPE_BINS)

FEATURE_EXPORT_SCHEMA_VERSION = "1"

# Runtime / compiler-generated routines excluded from analysis functions.
# The list targets common toolchain runtimes across the five supported ISAs;
# callers may override both sets.
ANALYSIS_EXCLUDE_NAMES = frozenset({
    "_start",
    "_init",
    "_fini",
    "frame_dummy",
    "register_tm_clones",
    "deregister_tm_clones",
    "__do_global_dtors_aux",
    "call_weak_fn",
    "abort",
})
ANALYSIS_EXCLUDE_PREFIXES = ("__libc", "__gcc", "__aeabi", "_dl_")

# Trailing compiler clone suffixes, stripped innermost-out.
_CLONE_SUFFIXES = (
    re.compile(r"\.isra\.\d+$"),
    re.compile(r"\.part\.\d+$"),
    re.compile(r"\.constprop\.\d+$"),
    re.compile(r"\.cold$"),
    re.compile(r"\.plt$"),
)


@dataclass(frozen=True)
class Arch:
    """Instruction-set tag; unknown labels round-trip unchanged."""

    tag: str

    KNOWN = KNOWN_ARCHES

    @classmethod
    def parse(cls, label: str) -> "Arch":
        canon = label.strip().lower()
        if canon in KNOWN_ARCHES:
            return cls(canon)
        return cls(label)

    @property
    def is_known(self) -> bool:
        return self.tag in KNOWN_ARCHES

    def __str__(self) -> str:
        return self.tag


def version_key(version: str) -> tuple[int, ...]:
    """Numeric dotted-segment ordering key; non-numeric segments sort as 0.

    Missing segments compare as 0, so "1.34" == "1.34.0".
    """
    parts = []
    for seg in version.split("."):
        try:
            parts.append(int(seg))
        except ValueError:
            parts.append(0)
    while parts and parts[-1] == 0:
        parts.pop()
    return tuple(parts)


def version_lt(a: str, b: str) -> bool:
    return version_key(a) < version_key(b)


@dataclass(frozen=True)
class BinaryId:
    """One binary inside a corpus, unique by (version, arch, branch)."""

    version: str
    arch: Arch
    branch: str          # STRIPPED or UNSTRIPPED
    label: str = ""      # opaque path-or-label

    def __post_init__(self):
        if self.branch not in (STRIPPED, UNSTRIPPED):
            raise ValueError(f"bad branch {self.branch!r}")

    @property
    def bucket(self) -> tuple[str, str]:
        return (self.version, self.arch.tag)


@dataclass(frozen=True)
class SymbolRecord:
    """One function symbol from an unstripped binary."""

    name: str
    address: int
    size: int
    is_analysis: bool = True


@dataclass(frozen=True)
class FunctionRecord:
    """One recovered function from a stripped feature export.

    ``tokens`` and ``contexts`` are multisets kept in document order;
    embedding code only ever consumes their counts.
    """

    address: int
    size: int
    instruction_count: int
    block_count: int
    edge_count: int
    call_count: int
    branch_count: int
    ret_count: int
    string_ref_count: int
    const_ref_count: int
    op_class_counts: tuple[int, ...]
    edge_type_counts: tuple[int, ...]
    tokens: tuple[str, ...] = field(default=())
    contexts: tuple[str, ...] = field(default=())

    def validate(self) -> None:
        counts = (
            self.address, self.size, self.instruction_count,
            self.block_count, self.edge_count, self.call_count,
            self.branch_count, self.ret_count, self.string_ref_count,
            self.const_ref_count, *self.op_class_counts,
            *self.edge_type_counts,
        )
        if any(c < 0 for c in counts):
            raise InvariantViolation(
                f"negative count in function at {self.address:#x}")
        if len(self.op_class_counts) != N_OP_CLASSES:
            raise InvariantViolation(
                f"op_class_counts must have {N_OP_CLASSES} bins")
        if len(self.edge_type_counts) != N_EDGE_TYPES:
            raise InvariantViolation(
                f"edge_type_counts must have {N_EDGE_TYPES} bins")
        if sum(self.op_class_counts) != self.instruction_count:
            raise InvariantViolation(
                f"op_class_counts sum {sum(self.op_class_counts)} != "
                f"instruction_count {self.instruction_count} "
                f"at {self.address:#x}")
        if sum(self.edge_type_counts) != self.edge_count:
            raise InvariantViolation(
                f"edge_type_counts sum {sum(self.edge_type_counts)} != "
                f"edge_count {self.edge_count} at {self.address:#x}")


@dataclass(frozen=True)
class Identity:
    """Normalized function identity shared across versions/architectures."""

    name: str

    def __str__(self) -> str:
        return self.name


def normalize_identity(name: str) -> Identity:
    """Strip trailing compiler clone suffixes, innermost-out.

    Stops rather than produce an empty identity (".plt" stays ".plt").
    Idempotent: normalize(normalize(x)) == normalize(x).
    """
    if not name:
        raise EmptyName("cannot normalize an empty symbol name")
    out = name
    while True:
        for pat in _CLONE_SUFFIXES:
            stripped = pat.sub("", out)
            if stripped != out:
                if not stripped:
                    return Identity(out)
                out = stripped
                break
        else:
            return Identity(out)


def is_analysis_name(
    name: str,
    exclude_names: frozenset[str] = ANALYSIS_EXCLUDE_NAMES,
    exclude_prefixes: tuple[str, ...] = ANALYSIS_EXCLUDE_PREFIXES,
) -> bool:
    if name in exclude_names:
        return False
    return not name.startswith(exclude_prefixes)


def filter_analysis_functions(
    symbols: list[SymbolRecord],
    exclude_names: frozenset[str] = ANALYSIS_EXCLUDE_NAMES,
    exclude_prefixes: tuple[str, ...] = ANALYSIS_EXCLUDE_PREFIXES,
) -> list[SymbolRecord]:
    """Keep analysis functions only; pure subset filter, order preserved."""
    return [s for s in symbols
            if is_analysis_name(s.name, exclude_names, exclude_prefixes)]


# --- ELF symbol extraction --------------------------------------------------

_ELF_MAGIC = b"\x7fELF"
_SHT_SYMTAB = 2
_SHT_DYNSYM = 11
_STT_FUNC = 2


def _read(buf: bytes, offset: int, size: int) -> bytes:
    if offset < 0 or offset + size > len(buf):
        raise TruncatedFile(
            f"need {size} bytes at offset {offset:#x}, have {len(buf)}")
    return buf[offset:offset + size]


def _elf_layout(elf_bytes: bytes) -> tuple[bool, str, list[dict], int]:
    """Shared header/section parsing: (is64, endian prefix, sections,
    shstrndx)."""
    if len(elf_bytes) < 4 or elf_bytes[:4] != _ELF_MAGIC:
        raise NotElf("missing ELF magic")
    ident = _read(elf_bytes, 0, 16)
    ei_class, ei_data = ident[4], ident[5]
    if ei_class not in (1, 2):
        raise UnsupportedClass(f"EI_CLASS {ei_class} not 1 or 2")
    if ei_data not in (1, 2):
        raise UnsupportedClass(f"EI_DATA {ei_data} not 1 or 2")
    is64 = ei_class == 2
    end = "<" if ei_data == 1 else ">"

    if is64:
        hdr = struct.unpack(end + "16sHHIQQQIHHHHHH", _read(elf_bytes, 0, 64))
    else:
        hdr = struct.unpack(end + "16sHHIIIIIHHHHHH", _read(elf_bytes, 0, 52))
    (_, _, _, _, _, _, e_shoff, _, _, _, _,
     e_shentsize, e_shnum, e_shstrndx) = hdr

    sections = []
    for i in range(e_shnum):
        raw = _read(elf_bytes, e_shoff + i * e_shentsize,
                    64 if is64 else 40)
        if is64:
            (sh_name, sh_type, sh_flags, sh_addr, sh_offset, sh_size,
             sh_link, sh_info, sh_align, sh_entsize) = struct.unpack(
                end + "IIQQQQIIQQ", raw)
        else:
            (sh_name, sh_type, sh_flags, sh_addr, sh_offset, sh_size,
             sh_link, sh_info, sh_align, sh_entsize) = struct.unpack(
                end + "IIIIIIIIII", raw)
        sections.append({
            "name": sh_name, "type": sh_type, "offset": sh_offset,
            "size": sh_size, "link": sh_link, "entsize": sh_entsize,
        })
    return is64, end, sections, e_shstrndx


def parse_elf_symbols(elf_bytes: bytes) -> list[SymbolRecord]:
    """Extract function symbols from both symbol tables of an ELF image.

    Handles 32/64-bit and little/big-endian files, deduplicates by
    (name, address), and flags analysis functions per the documented
    exclusion lists.  Matches the function listing of ``readelf -s``.
    """
    is64, end, sections, _ = _elf_layout(elf_bytes)

    def strtab_name(strtab: dict, index: int) -> str:
        start = strtab["offset"] + index
        if start >= len(elf_bytes):
            raise TruncatedFile(f"string offset {start:#x} out of bounds")
        nul = elf_bytes.find(b"\x00", start)
        if nul < 0:
            raise TruncatedFile("unterminated string table entry")
        return elf_bytes[start:nul].decode("utf-8", errors="replace")

    seen: set[tuple[str, int]] = set()
    out: list[SymbolRecord] = []
    for sec in sections:
        if sec["type"] not in (_SHT_SYMTAB, _SHT_DYNSYM):
            continue
        entsize = sec["entsize"] or (24 if is64 else 16)
        if sec["link"] >= len(sections):
            raise TruncatedFile("symbol table string link out of range")
        strtab = sections[sec["link"]]
        count = sec["size"] // entsize
        for i in range(count):
            raw = _read(elf_bytes, sec["offset"] + i * entsize,
                        24 if is64 else 16)
            if is64:
                st_name, st_info, _, _, st_value, st_size = struct.unpack(
                    end + "IBBHQQ", raw)
            else:
                st_name, st_value, st_size, st_info, _, _ = struct.unpack(
                    end + "IIIBBH", raw)
            if st_info & 0xF != _STT_FUNC:
                continue
            name = strtab_name(strtab, st_name)
            if not name:
                continue
            key = (name, st_value)
            if key in seen:
                continue
            seen.add(key)
            out.append(SymbolRecord(
                name=name, address=st_value, size=st_size,
                is_analysis=is_analysis_name(name)))
    return out


def elf_section_stats(elf_bytes: bytes) -> tuple[int, int]:
    """(section count, debug-section count) of an ELF image.

    Debug sections are those whose names start with ".debug"; the null
    section 0 is not counted.
    """
    _, _, sections, shstrndx = _elf_layout(elf_bytes)
    if not sections:
        return 0, 0
    n_debug = 0
    if shstrndx < len(sections):
        shstrtab = sections[shstrndx]
        for sec in sections[1:]:
            start = shstrtab["offset"] + sec["name"]
            if start >= len(elf_bytes):
                raise TruncatedFile("section name offset out of bounds")
            nul = elf_bytes.find(b"\x00", start)
            name = elf_bytes[start:nul].decode("utf-8", errors="replace")
            if name.startswith(".debug"):
                n_debug += 1
    return len(sections) - 1, n_debug


# --- feature-export documents ----------------------------------------------

_FUNCTION_FIELDS = (
    "address", "size", "instruction_count", "block_count", "edge_count",
    "call_count", "branch_count", "ret_count", "string_ref_count",
    "const_ref_count", "op_class_counts", "edge_type_counts",
    "tokens", "contexts",
)
_TOP_FIELDS = ("schema_version", "version", "arch", "functions")

_ADDR_RE = re.compile(r"^0x[0-9a-f]+$")


def _require_fields(obj: dict, fields: tuple[str, ...], where: str) -> None:
    missing = [f for f in fields if f not in obj]
    extra = [k for k in obj if k not in fields]
    if missing:
        raise SchemaViolation(f"{where}: missing fields {missing}")
    if extra:
        raise SchemaViolation(f"{where}: unexpected fields {extra}")


def _int_field(obj: dict, key: str, where: str) -> int:
    v = obj[key]
    if isinstance(v, bool) or not isinstance(v, int):
        raise SchemaViolation(f"{where}: field {key!r} must be an integer")
    return v


def _str_list(obj: dict, key: str, where: str) -> tuple[str, ...]:
    v = obj[key]
    if not isinstance(v, list) or any(not isinstance(s, str) for s in v):
        raise SchemaViolation(f"{where}: field {key!r} must be a string list")
    return tuple(v)


def _int_list(obj: dict, key: str, width: int, where: str) -> tuple[int, ...]:
    v = obj[key]
    if (not isinstance(v, list) or len(v) != width
            or any(isinstance(x, bool) or not isinstance(x, int) for x in v)):
        raise SchemaViolation(
            f"{where}: field {key!r} must be a length-{width} integer array")
    return tuple(v)


def load_feature_export(document: str | bytes) -> tuple[BinaryId, list[FunctionRecord]]:
    """Parse and validate one stripped feature export.

    Returns records sorted by address ascending.  Rejects schema deviations,
    count-sum violations, and duplicate addresses.
    """
    if isinstance(document, bytes):
        document = document.decode("utf-8")
    try:
        doc = json.loads(document)
    except json.JSONDecodeError as exc:
        raise SchemaViolation(f"not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise SchemaViolation("top level must be an object")
    _require_fields(doc, _TOP_FIELDS, "top level")
    if doc["schema_version"] != FEATURE_EXPORT_SCHEMA_VERSION:
        raise SchemaViolation(
            f"unsupported schema_version {doc['schema_version']!r}")
    if not isinstance(doc["version"], str) or not isinstance(doc["arch"], str):
        raise SchemaViolation("version and arch must be strings")
    if not isinstance(doc["functions"], list):
        raise SchemaViolation("functions must be a list")

    records = []
    seen_addrs: set[int] = set()
    for i, fn in enumerate(doc["functions"]):
        where = f"functions[{i}]"
        if not isinstance(fn, dict):
            raise SchemaViolation(f"{where}: must be an object")
        _require_fields(fn, _FUNCTION_FIELDS, where)
        addr_str = fn["address"]
        if not isinstance(addr_str, str) or not _ADDR_RE.match(addr_str):
            raise SchemaViolation(
                f"{where}: address must be lowercase 0x-hex, got {addr_str!r}")
        address = int(addr_str, 16)
        rec = FunctionRecord(
            address=address,
            size=_int_field(fn, "size", where),
            instruction_count=_int_field(fn, "instruction_count", where),
            block_count=_int_field(fn, "block_count", where),
            edge_count=_int_field(fn, "edge_count", where),
            call_count=_int_field(fn, "call_count", where),
            branch_count=_int_field(fn, "branch_count", where),
            ret_count=_int_field(fn, "ret_count", where),
            string_ref_count=_int_field(fn, "string_ref_count", where),
            const_ref_count=_int_field(fn, "const_ref_count", where),
            op_class_counts=_int_list(fn, "op_class_counts", N_OP_CLASSES, where),
            edge_type_counts=_int_list(fn, "edge_type_counts", N_EDGE_TYPES, where),
            tokens=_str_list(fn, "tokens", where),
            contexts=_str_list(fn, "contexts", where),
        )
        rec.validate()
        if rec.address in seen_addrs:
            raise DuplicateAddress(f"duplicate address {rec.address:#x}")
        seen_addrs.add(rec.address)
        records.append(rec)

    records.sort(key=lambda r: r.address)
    binary = BinaryId(version=doc["version"], arch=Arch.parse(doc["arch"]),
                      branch=STRIPPED, label=doc["arch"])
    return binary, records


def serialize_feature_export(binary: BinaryId, functions: list[FunctionRecord]) -> str:
    """Canonical serialization; ``load_feature_export`` inverts it exactly."""
    doc = {
        "schema_version": FEATURE_EXPORT_SCHEMA_VERSION,
        "version": binary.version,
        "arch": binary.arch.tag,
        "functions": [
            {
                "address": f"0x{fn.address:x}",
                "size": fn.size,
                "instruction_count": fn.instruction_count,
                "block_count": fn.block_count,
                "edge_count": fn.edge_count,
                "call_count": fn.call_count,
                "branch_count": fn.branch_count,
                "ret_count": fn.ret_count,
                "string_ref_count": fn.string_ref_count,
                "const_ref_count": fn.const_ref_count,
                "op_class_counts": list(fn.op_class_counts),
                "edge_type_counts": list(fn.edge_type_counts),
                "tokens": list(fn.tokens),
                "contexts": list(fn.contexts),
            }
            for fn in sorted(functions, key=lambda r: r.address)
        ],
    }
    return json.dumps(doc, indent=2, ensure_ascii=False) + "\n"


# --- simplified symbol-table text format ------------------------------------

def serialize_symbol_table(symbols: list[SymbolRecord]) -> str:
    """One ``name<TAB>0xaddr<TAB>size`` line per symbol."""
    lines = [f"{s.name}\t0x{s.address:x}\t{s.size}" for s in symbols]
    return "\n".join(lines) + ("\n" if lines else "")


def load_symbol_table(text: str) -> list[SymbolRecord]:
    out = []
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise SchemaViolation(f"symbol table line {lineno}: expected 3 fields")
        name, addr, size = parts
        try:
            out.append(SymbolRecord(
                name=name, address=int(addr, 16), size=int(size),
                is_analysis=is_analysis_name(name)))
        except ValueError as exc:
            raise SchemaViolation(f"symbol table line {lineno}: {exc}") from exc
    return out
