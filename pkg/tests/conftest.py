from __future__ import annotations

import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

from evofind.corpus import FunctionRecord, SymbolRecord


def make_function(address=0x1000, size=100, instr=10, blocks=2, edges=1,
                  calls=1, branches=0, rets=1, strrefs=0, constrefs=0,
                  tokens=(), contexts=(), op_class=0, edge_type=0) -> FunctionRecord:
    op = [0] * 16
    op[op_class] = instr
    edge = [0] * 9
    edge[edge_type] = edges
    return FunctionRecord(
        address=address, size=size, instruction_count=instr,
        block_count=blocks, edge_count=edges, call_count=calls,
        branch_count=branches, ret_count=rets, string_ref_count=strrefs,
        const_ref_count=constrefs, op_class_counts=tuple(op),
        edge_type_counts=tuple(edge), tokens=tuple(tokens),
        contexts=tuple(contexts))


def make_symbol(name="fn", address=0x1000, size=100) -> SymbolRecord:
    return SymbolRecord(name=name, address=address, size=size)
