# Export anonymous per-function features from the current program as a
# feature-export JSON document (schema v1). Emits no symbol names, no
# source paths, and no version strings taken from the binary.
#
# Headless usage:
#   analyzeHeadless <proj_dir> <proj> -import <binary> \
#       -postScript export_features.py <output.json> [version-label]
#
# @category Analysis
# @runtime PyGhidra
from __future__ import annotations

import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent))

from feature_export_core import (
    FunctionView,
    InstructionRow,
    build_export_document,
)


class AnalysisIncomplete(Exception):
    """The program has no recovered functions to export."""


class WriteFailure(Exception):
    """The output document could not be written."""


_ARCH_BY_PROCESSOR = {
    "aarch64": "aarch64",
    "arm": "arm",
    "mips": "mips",
    "x86": "x86_64",
}


def _arch_label(program) -> str:
    lang = program.getLanguage().getLanguageID().getIdAsString().lower()
    processor = lang.split(":")[0]
    endian = lang.split(":")[1] if ":" in lang else "le"
    if processor == "mips" and endian == "le":
        return "mipsel"
    if processor == "x86" and "64" not in lang:
        return "x86"
    return _ARCH_BY_PROCESSOR.get(processor, processor)


def _operand_rows(program, instruction):
    """(kind, value) per operand: registers R, code/data refs M, immediates
    bucketed by the core."""
    from ghidra.program.model.lang import OperandType

    rows = []
    for i in range(instruction.getNumOperands()):
        op_type = instruction.getOperandType(i)
        if OperandType.isRegister(op_type):
            rows.append(("reg", None))
        elif OperandType.isAddress(op_type) or OperandType.isDynamic(op_type):
            rows.append(("mem", None))
        elif OperandType.isScalar(op_type):
            scalar = instruction.getScalar(i)
            rows.append(("imm", int(scalar.getValue()) if scalar else 0))
        else:
            rows.append(("other", None))
    return tuple(rows)


def _edge_kind(flow_type, came_from_conditional: bool) -> str:
    if flow_type.isFallthrough():
        return "cond-false" if came_from_conditional else "fallthrough"
    if flow_type.isConditional():
        return "cond-true"
    if flow_type.isCall():
        return "call"
    if flow_type.isTerminal():
        return "return"
    if flow_type.isComputed():
        return "computed"
    if flow_type.isJump():
        return "uncond-jump"
    return "other"


def _function_view(program, function, monitor) -> FunctionView:
    from ghidra.program.model.block import BasicBlockModel

    listing = program.getListing()
    body = function.getBody()

    instructions = []
    for instr in listing.getInstructions(body, True):
        instructions.append(InstructionRow(
            mnemonic=str(instr.getMnemonicString()),
            operands=_operand_rows(program, instr)))

    model = BasicBlockModel(program)
    blocks = model.getCodeBlocksContaining(body, monitor)
    block_count = 0
    edges = []
    while blocks.hasNext():
        block = blocks.next()
        block_count += 1
        conditional_source = False
        dest_rows = []
        dests = block.getDestinations(monitor)
        while dests.hasNext():
            ref = dests.next()
            ft = ref.getFlowType()
            if ft.isConditional():
                conditional_source = True
            dest_rows.append((ft, ref.getDestinationAddress()))
        for ft, dest_addr in dest_rows:
            if not body.contains(dest_addr):
                continue
            edges.append(_edge_kind(ft, conditional_source))

    strings = []
    constants = []
    for instr in listing.getInstructions(body, True):
        for ref in program.getReferenceManager().getReferencesFrom(
                instr.getAddress()):
            if not ref.getReferenceType().isData():
                continue
            data = listing.getDataAt(ref.getToAddress())
            if data is None:
                continue
            value = data.getValue()
            if isinstance(value, str):
                strings.append(value)
            elif value is not None and hasattr(value, "longValue"):
                constants.append(int(value.longValue()))

    return FunctionView(
        address=int(function.getEntryPoint().getOffset()),
        size=int(body.getNumAddresses()),
        instructions=tuple(instructions),
        block_count=block_count,
        edges=tuple(edges),
        strings=tuple(strings),
        constants=tuple(constants),
        name=str(function.getName()),
    )


def export_features(program, monitor, out_path: str,
                    version_label: str = "unknown") -> int:
    """Walk every recovered function and write the export document."""
    manager = program.getFunctionManager()
    views = []
    for function in manager.getFunctions(True):
        if function.isExternal() or function.isThunk():
            continue
        views.append(_function_view(program, function, monitor))
    if not views:
        raise AnalysisIncomplete("no recovered functions in the program")
    text = build_export_document(views, arch=_arch_label(program),
                                 version_label=version_label)
    try:
        Path(out_path).write_text(text, encoding="utf-8")
    except OSError as exc:
        raise WriteFailure(str(exc)) from exc
    return len(views)


def main() -> None:
    args = list(getScriptArgs())   # noqa: F821  (Ghidra script binding)
    if not args:
        raise WriteFailure("usage: export_features.py <output.json> "
                           "[version-label]")
    label = args[1] if len(args) > 1 else "unknown"
    count = export_features(currentProgram, monitor,   # noqa: F821
                            args[0], label)
    print(f"exported {count} functions -> {args[0]}")


if __name__ == "__main__":
    main()
