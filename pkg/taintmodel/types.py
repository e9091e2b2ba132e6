"""
Labels for clarity.
"""

from typing import Literal, Tuple

ParamName = str
LabelSet = frozenset[str]  # set of parameter names attached to a value
CallPath = Tuple[int, ...]  # call-site node ids from the entry function down
LoopKey = Tuple[int, CallPath]  # (loop node id, call path)

ParamKind = Literal["explicit", "implicit"]
SinkKind = Literal["loop_exit", "branch"]
Arm = Literal["then", "else"]
ModelMode = Literal["guided", "blackbox", "both"]
FunctionClass = Literal[
    "statically_pruned", "dynamically_pruned", "kernel", "comm_routine", "extern"
]
NoiseModel = Literal["multiplicative-gaussian"]
ContaminationShape = Literal["log2^2", "linear"]

EMPTY: LabelSet = frozenset()


def format_call_path(call_path: CallPath) -> str:
    """Call paths travel through CSV files as '/'-joined ids ('' = entry body)."""
    return "/".join(str(node_id) for node_id in call_path)


def parse_call_path(text: str) -> CallPath:
    text = text.strip()
    if not text:
        return ()
    return tuple(int(part) for part in text.split("/"))
