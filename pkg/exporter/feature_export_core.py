"""Decompiler-independent core of the anonymous feature exporter.

Turns abstract per-function analysis rows (mnemonic + operand kinds,
block edges, referenced strings and constants) into the feature-export
document consumed by the retrieval pipeline.  Nothing in this module
touches a decompiler API, so the tokenization, bucketing, and the canonical
serialization are testable against hand-assembled fixtures.

Anonymity contract: emitted documents carry no symbol names, no source
paths, and no version strings recovered from the binary.  String contents
are reduced to coarse category tokens and never emitted verbatim.
"""
from __future__ import annotations

import json
import re
from dataclasses import dataclass, field

SCHEMA_VERSION = "1"

# must mirror the ingestion schema's documented bin vocabularies
OP_CLASSES = (
    "arith", "logic", "shift", "muldiv", "load", "store", "stack",
    "cond-branch", "uncond-branch", "call", "ret", "compare", "move",
    "float", "vector", "other",
)
EDGE_TYPES = (
    "fallthrough", "cond-true", "cond-false", "uncond-jump", "call",
    "return", "switch", "computed", "other",
)

_OP_INDEX = {name: i for i, name in enumerate(OP_CLASSES)}
_EDGE_INDEX = {name: i for i, name in enumerate(EDGE_TYPES)}

# exact mnemonic table first, then prefix heuristics, then "other"
_MNEMONIC_TABLE = {
    "arith": (
        "add", "adds", "addi", "addiu", "addu", "adc", "adcs", "sub", "subs",
        "subu", "sbc", "sbcs", "rsb", "neg", "negs", "inc", "dec", "lea",
        "daddu", "daddiu", "dsub", "adrp", "adr",
    ),
    "logic": (
        "and", "ands", "andi", "or", "orr", "ori", "xor", "eor", "xori",
        "not", "mvn", "orn", "bic", "bics", "nor",
    ),
    "shift": (
        "shl", "shr", "sar", "sal", "lsl", "lsr", "asr", "ror", "rol",
        "rrx", "sll", "srl", "sra", "sllv", "srlv", "srav", "dsll", "dsrl",
        "extr", "ubfm", "sbfm", "ubfx", "sbfx", "ubfiz", "sbfiz",
    ),
    "muldiv": (
        "mul", "imul", "mulu", "umul", "smul", "div", "idiv", "udiv",
        "sdiv", "mult", "multu", "divu", "madd", "maddu", "msub", "msubu",
        "smull", "umull", "smulh", "umulh", "mla", "mls", "mneg",
    ),
    "load": (
        "ldr", "ldrb", "ldrh", "ldrsb", "ldrsh", "ldrsw", "ldp", "ldur",
        "ldm", "ldmia", "ldmfd", "lb", "lbu", "lh", "lhu", "lw", "lwu",
        "lwl", "lwr", "ld", "ldc1", "lwc1", "ldxr", "ldar", "pld",
    ),
    "store": (
        "str", "strb", "strh", "stp", "stur", "stm", "stmia", "stmfd",
        "sb", "sh", "sw", "swl", "swr", "sd", "sdc1", "swc1", "stxr",
        "stlr",
    ),
    "stack": ("push", "pop", "pusha", "popa", "pushf", "popf", "enter",
              "leave"),
    "cond-branch": (
        "je", "jne", "jz", "jnz", "jg", "jge", "jl", "jle", "ja", "jae",
        "jb", "jbe", "js", "jns", "jo", "jno", "jp", "jnp", "jcxz",
        "loop", "loope", "loopne",
        "beq", "bne", "bgez", "bgtz", "blez", "bltz", "bgezal", "bltzal",
        "beqz", "bnez", "beql", "bnel",
        "cbz", "cbnz", "tbz", "tbnz",
        "bcc", "bcs", "bmi", "bpl", "bvs", "bvc", "bhi", "bls",
    ),
    "uncond-branch": ("jmp", "b", "br", "j", "bx"),
    "call": ("call", "bl", "blx", "blr", "jal", "jalr", "bal"),
    "ret": ("ret", "rets", "iret", "eret", "jr"),
    "compare": ("cmp", "cmn", "test", "tst", "teq", "slt", "slti", "sltu",
                "sltiu", "cmpsb", "ccmp", "ccmn"),
    "move": ("mov", "movz", "movn", "movk", "movw", "movt", "movsx",
             "movzx", "movabs", "li", "lui", "la", "move", "mfhi", "mflo",
             "mthi", "mtlo", "cmov", "csel", "cset", "csinc", "sxtb",
             "sxth", "sxtw", "uxtb", "uxth"),
    "float": ("fadd", "fsub", "fmul", "fdiv", "fsqrt", "fabs", "fneg",
              "fmov", "fcmp", "fcmpe", "fcvt", "fcvtzs", "fcvtzu", "scvtf",
              "ucvtf", "fld", "fst", "fmadd", "fmsub", "frintm", "frintp"),
    "vector": ("dup", "ins", "tbl", "zip1", "zip2", "uzp1", "uzp2",
               "movaps", "movups", "movdqa", "movdqu", "paddd", "paddw",
               "psubd", "pxor", "pand", "por", "punpcklbw", "pshufd",
               "vadd", "vsub", "vmul", "vld1", "vst1", "vmov"),
    "other": ("nop", "hlt", "int", "int3", "syscall", "sysenter", "svc",
              "swi", "brk", "break", "cpuid", "rdtsc", "fence", "sync",
              "dmb", "dsb", "isb", "wfi", "wfe", "ud2", "mfence", "lfence",
              "sfence", "endbr64", "endbr32"),
}

_EXACT_CLASS = {}
for _cls, _mnemonics in _MNEMONIC_TABLE.items():
    for _m in _mnemonics:
        _EXACT_CLASS.setdefault(_m, _cls)

_COND_SUFFIXES = ("eq", "ne", "cs", "cc", "mi", "pl", "vs", "vc", "hi",
                  "ls", "ge", "lt", "gt", "le", "hs", "lo")


_FLOAT_FMTS = ("s", "d", "w", "l", "ps")


def classify_mnemonic(mnemonic: str) -> str:
    """Map one mnemonic to its operation class; unknown forms go to other."""
    base = mnemonic.lower().strip()
    if base in _EXACT_CLASS:
        return _EXACT_CLASS[base]
    # aarch64 conditional branches: b.eq, b.ne, ...
    if base.startswith("b.") and base[2:] in _COND_SUFFIXES:
        return "cond-branch"
    if "." in base:
        stem, _, fmt = base.partition(".")
        # mips float forms: add.s, mul.d, cvt.s.w, c.lt.s ...
        if fmt.split(".")[0] in _FLOAT_FMTS or stem in ("cvt", "c", "trunc"):
            return "float"
        if stem in _EXACT_CLASS:
            return _EXACT_CLASS[stem]
    # arm condition-suffixed branches: bne, bgt, bhs ...
    if len(base) == 3 and base[0] == "b" and base[1:] in _COND_SUFFIXES:
        return "cond-branch"
    # remaining x86 j* forms are conditional jumps
    if base.startswith("j") and len(base) <= 5:
        return "cond-branch"
    if base.startswith("v") and len(base) > 1:
        return "vector"
    if base.startswith("f"):
        return "float"
    if base.startswith("ld"):
        return "load"
    if base.startswith("st"):
        return "store"
    return "other"


def bucket_constant(value: int) -> str:
    """Magnitude bucket for immediates and referenced constants."""
    v = abs(int(value))
    if v == 0:
        return "0"
    if v < 16:
        return "small"
    if v < 4096:
        return "med"
    return "large"


def anonymize_operand(kind: str, value: int | None = None) -> str:
    """Registers collapse to R, memory to M, immediates to their bucket."""
    if kind == "reg":
        return "R"
    if kind == "mem":
        return "M"
    if kind == "imm":
        return bucket_constant(value or 0)
    return "?"


_URL_RE = re.compile(r"^[a-z][a-z0-9+.-]*://", re.IGNORECASE)
_NUM_RE = re.compile(r"^[\s0-9.,:+-]+$")


def categorize_string(content: str) -> str:
    """Coarse category of a referenced string; the content is never emitted."""
    if not content:
        return "empty"
    if _URL_RE.match(content):
        return "url"
    if "%" in content:
        return "fmt"
    if "/" in content or "\\" in content:
        return "path"
    if _NUM_RE.match(content):
        return "num"
    return "word"


@dataclass(frozen=True)
class InstructionRow:
    mnemonic: str
    operands: tuple[tuple[str, int | None], ...] = ()   # (kind, value)


@dataclass(frozen=True)
class FunctionView:
    """Everything the exporter may know about one recovered function.

    The ``name`` field exists because analysis sessions know one; it is
    used for nothing and must never reach the output document.
    """

    address: int
    size: int
    instructions: tuple[InstructionRow, ...]
    block_count: int
    edges: tuple[str, ...] = ()          # edge-type names per CFG edge
    strings: tuple[str, ...] = ()        # referenced string contents
    constants: tuple[int, ...] = ()      # referenced constant values
    name: str = ""


@dataclass(frozen=True)
class ExportRow:
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
    tokens: tuple[str, ...]
    contexts: tuple[str, ...]


def build_row(fn: FunctionView) -> ExportRow:
    """Tokenize and summarize one function; count sums hold by construction."""
    op_counts = [0] * len(OP_CLASSES)
    tokens = []
    contexts = []
    calls = branches = rets = 0
    for instr in fn.instructions:
        cls = classify_mnemonic(instr.mnemonic)
        op_counts[_OP_INDEX[cls]] += 1
        kinds = ",".join(anonymize_operand(k, v) for k, v in instr.operands)
        tokens.append(f"{cls}:{kinds}" if kinds else cls)
        if cls == "call":
            calls += 1
            contexts.append(f"call:{min(len(instr.operands), 6)}")
        elif cls in ("cond-branch", "uncond-branch"):
            branches += 1
        elif cls == "ret":
            rets += 1
    edge_counts = [0] * len(EDGE_TYPES)
    for edge in fn.edges:
        edge_counts[_EDGE_INDEX.get(edge, _EDGE_INDEX["other"])] += 1
    for content in fn.strings:
        contexts.append(f"str:{categorize_string(content)}")
    for value in fn.constants:
        contexts.append(f"const:{bucket_constant(value)}")
    return ExportRow(
        address=fn.address,
        size=fn.size,
        instruction_count=len(fn.instructions),
        block_count=fn.block_count,
        edge_count=len(fn.edges),
        call_count=calls,
        branch_count=branches,
        ret_count=rets,
        string_ref_count=len(fn.strings),
        const_ref_count=len(fn.constants),
        op_class_counts=tuple(op_counts),
        edge_type_counts=tuple(edge_counts),
        tokens=tuple(sorted(tokens)),
        contexts=tuple(sorted(contexts)),
    )


def build_export_document(functions: list[FunctionView], arch: str,
                          version_label: str = "unknown") -> str:
    """Canonical feature-export JSON for one stripped binary.

    ``version_label`` is operator-supplied; the binary itself is never asked
    for a version.  Byte-compatible with the ingestion side's canonical
    serialization.
    """
    rows = sorted((build_row(fn) for fn in functions), key=lambda r: r.address)
    doc = {
        "schema_version": SCHEMA_VERSION,
        "version": version_label,
        "arch": arch,
        "functions": [
            {
                "address": f"0x{r.address:x}",
                "size": r.size,
                "instruction_count": r.instruction_count,
                "block_count": r.block_count,
                "edge_count": r.edge_count,
                "call_count": r.call_count,
                "branch_count": r.branch_count,
                "ret_count": r.ret_count,
                "string_ref_count": r.string_ref_count,
                "const_ref_count": r.const_ref_count,
                "op_class_counts": list(r.op_class_counts),
                "edge_type_counts": list(r.edge_type_counts),
                "tokens": list(r.tokens),
                "contexts": list(r.contexts),
            }
            for r in rows
        ],
    }
    return json.dumps(doc, indent=2, ensure_ascii=False) + "\n"
