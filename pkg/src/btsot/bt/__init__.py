from .core import (BehaviorTree, BTNode, Status, TickContext, TickTrace, NOT_TICKED,
                   sequence_semantics, fallback_semantics, parallel_semantics,
                   repeat_decorator, sot_control_finalize)
from .dsl import parse, print_tree, validate, ParseDiagnostic, DslError

__all__ = [
    "BehaviorTree", "BTNode", "Status", "TickContext", "TickTrace", "NOT_TICKED",
    "sequence_semantics", "fallback_semantics", "parallel_semantics", "repeat_decorator",
    "sot_control_finalize", "parse", "print_tree", "validate", "ParseDiagnostic", "DslError",
]
