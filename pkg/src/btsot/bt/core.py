"""Behavior tree engine with reactive (memoryless) tick semantics.

Every tick restarts at the root.  A node is *activated* when it is ticked
after having been not ticked, successful or failed on the previous tick; the
activation lasts until it returns a final status.  SoT action nodes register
one task per activation, SoT control nodes remove every task registered in
their subtree during their activation right before returning Success or
Failure.
"""

from __future__ import annotations

import enum
import json
import logging
from dataclasses import dataclass, field
from typing import Callable, Iterator, Mapping, Optional

from ..errors import ConfigurationError

log = logging.getLogger(__name__)


class Status(enum.Enum):
    SUCCESS = "S"
    RUNNING = "R"
    FAILURE = "F"

    @property
    def final(self) -> bool:
        return self is not Status.RUNNING


NOT_TICKED = "N"

SEQUENCE = "sequence"
FALLBACK = "fallback"
PARALLEL = "parallel"
DECORATOR = "decorator"
CONDITION = "condition"
ACTION = "action"
SOT_ACTION = "sot_action"
SOT_CONTROL = "sot_control"

COMPOSITES = (SEQUENCE, FALLBACK, PARALLEL)
LEAVES = (CONDITION, ACTION, SOT_ACTION)
KINDS = COMPOSITES + (DECORATOR, SOT_CONTROL) + LEAVES
DECORATOR_POLICIES = ("repeat",)


@dataclass(eq=True)
class BTNode:
    """A tree node.

    ``ref`` is the predicate, command or task id for leaves, the policy for
    decorators and the wrapped composite kind for SoT control nodes.
    ``threshold`` is the success count M of (SoT) parallel nodes.
    """

    id: str
    kind: str
    children: list = field(default_factory=list)
    ref: Optional[str] = None
    threshold: Optional[int] = None
    pos: Optional[tuple] = field(default=None, compare=False, repr=False)

    @property
    def flow(self) -> str:
        """Composite behavior, unwrapping SoT control nodes."""
        return self.ref if self.kind == SOT_CONTROL else self.kind

    def walk(self) -> Iterator["BTNode"]:
        yield self
        for c in self.children:
            yield from c.walk()


def structure_errors(root: BTNode) -> list[tuple[BTNode, str]]:
    """Arity, threshold and id-uniqueness problems of a tree."""
    errors = []
    seen = set()
    for node in root.walk():
        if node.id in seen:
            errors.append((node, f"duplicate node id {node.id!r}"))
        seen.add(node.id)
        if node.kind not in KINDS:
            errors.append((node, f"unknown node kind {node.kind!r}"))
            continue
        k = len(node.children)
        if node.kind in LEAVES and k:
            errors.append((node, f"{node.kind} node {node.id!r} cannot have children"))
        if node.kind in LEAVES and not node.ref:
            errors.append((node, f"{node.kind} node {node.id!r} needs a reference id"))
        if node.kind == DECORATOR:
            if k != 1:
                errors.append((node, f"decorator {node.id!r} requires exactly one child"))
            if node.ref not in DECORATOR_POLICIES:
                errors.append((node, f"unknown decorator policy {node.ref!r}"))
        if node.kind in COMPOSITES + (SOT_CONTROL,) and k < 1:
            errors.append((node, "composite requires >=1 child"))
        if node.kind == SOT_CONTROL and node.ref not in COMPOSITES:
            errors.append((node, f"SoT control node cannot wrap {node.ref!r}"))
        if node.flow == PARALLEL:
            m = node.threshold
            if k and (not isinstance(m, int) or not 1 <= m <= k):
                errors.append((node, f"parallel threshold m={m} must satisfy 1 <= m <= {k}"))
    return errors


# -- pure composition rules --------------------------------------------------------

def sequence_semantics(statuses) -> tuple[Status, int]:
    """Result of a Sequence given its children's answers in tick order."""
    count = 0
    for s in statuses:
        count += 1
        if s is not Status.SUCCESS:
            return s, count
    return Status.SUCCESS, count


def fallback_semantics(statuses) -> tuple[Status, int]:
    count = 0
    for s in statuses:
        count += 1
        if s is not Status.FAILURE:
            return s, count
    return Status.FAILURE, count


def parallel_semantics(statuses, m: int) -> Status:
    statuses = list(statuses)
    n = len(statuses)
    ok = sum(s is Status.SUCCESS for s in statuses)
    bad = sum(s is Status.FAILURE for s in statuses)
    if ok >= m:
        return Status.SUCCESS
    if bad > n - m:
        return Status.FAILURE
    return Status.RUNNING


def repeat_decorator(child_status: Status) -> Status:
    """Endless repetition: the child is re-activated after each final outcome."""
    return Status.RUNNING


# -- tick machinery ----------------------------------------------------------------

@dataclass
class TickContext:
    """Everything a tick may read or write.

    ``commands`` collects controller commands issued during the tick and
    ``activation`` maps node ids to the task ids registered since the node's
    current activation began.
    """

    registry: object = None
    world: object = None
    state: object = None
    model: object = None
    controllers: object = None
    time: float = 0.0
    tick: int = 0
    commands: list = field(default_factory=list)
    activation: dict = field(default_factory=dict)


@dataclass
class TickTrace:
    tick: int
    statuses: dict  # node id -> "S" | "R" | "F" | "N", tree preorder
    removals: list = field(default_factory=list)  # (node id, status, removed ids)
    active_after: tuple = ()

    def to_json(self) -> str:
        return json.dumps({
            "tick": self.tick,
            "nodes": [[k, v] for k, v in self.statuses.items()],
            "removals": [[n, s, list(ids)] for n, s, ids in self.removals],
            "active": list(self.active_after),
        }, separators=(",", ":"))


ConditionFn = Callable[[TickContext], bool]
ActionFn = Callable[[TickContext, bool], Status]


class BehaviorTree:
    """Ticks a validated tree against condition, action and task catalogs.

    Args:
        root: tree root.
        conditions: predicate id -> ``fn(ctx) -> bool``.
        actions: command id -> ``fn(ctx, activated) -> Status``.
        tasks: task spec id -> ``Task`` (or zero-argument factory).
    """

    def __init__(self, root: BTNode, conditions: Mapping[str, ConditionFn] = None,
                 actions: Mapping[str, ActionFn] = None, tasks: Mapping = None):
        problems = structure_errors(root)
        if problems:
            raise ConfigurationError("; ".join(msg for _, msg in problems))
        self.root = root
        self.conditions = dict(conditions or {})
        self.actions = dict(actions or {})
        self.tasks = dict(tasks or {})
        self.order = [n.id for n in root.walk()]
        self.prev: dict[str, str] = {}
        self.started: dict[str, float] = {}
        self.activations: dict[str, int] = {}
        self.traces: list[TickTrace] = []
        self.tick_count = 0
        self.activation: dict[str, set] = {}
        self._current: dict[str, str] = {}
        self._removals: list = []

    # public -------------------------------------------------------------------
    def tick(self, ctx: TickContext) -> Status:
        """One reactive pass from the root.

        The activation map lives with the tree, so callers may hand in a
        fresh context every tick; it is bound to ``ctx.activation``.
        """
        ctx.tick = self.tick_count
        ctx.activation = self.activation
        self._current: dict[str, str] = {}
        self._removals: list = []
        status = self._tick(self.root, ctx, ())
        statuses = {nid: self._current.get(nid, NOT_TICKED) for nid in self.order}
        for nid in list(ctx.activation):
            if statuses.get(nid) != Status.RUNNING.value:
                del ctx.activation[nid]
        active = ctx.registry.ids() if ctx.registry is not None else ()
        self.traces.append(TickTrace(self.tick_count, statuses, self._removals, active))
        self.prev = statuses
        self.tick_count += 1
        return status

    def statuses(self) -> dict:
        return dict(self.prev)

    # internals ----------------------------------------------------------------
    def _tick(self, node: BTNode, ctx: TickContext, path: tuple) -> Status:
        activated = self.prev.get(node.id, NOT_TICKED) != Status.RUNNING.value
        if activated:
            self.started[node.id] = ctx.time
            self.activations[node.id] = self.activations.get(node.id, 0) + 1
            ctx.activation[node.id] = set()
        ctx.activation.setdefault(node.id, set())
        inner = path + (node.id,)

        kind = node.kind
        if kind == CONDITION:
            status = Status.SUCCESS if self._condition(node, ctx) else Status.FAILURE
        elif kind == ACTION:
            status = self._action(node, ctx, activated)
        elif kind == SOT_ACTION:
            status = self._sot_action(node, ctx, activated, inner)
        elif kind == DECORATOR:
            status = repeat_decorator(self._tick(node.children[0], ctx, inner))
        else:
            status = self._composite(node, ctx, inner)
            if kind == SOT_CONTROL and status.final:
                self._finalize(node, status, ctx, path)
        self._current[node.id] = status.value
        return status

    def _composite(self, node, ctx, inner) -> Status:
        flow = node.flow
        if flow == PARALLEL:
            results = [self._tick(c, ctx, inner) for c in node.children]
            return parallel_semantics(results, node.threshold)
        stop = Status.SUCCESS if flow == FALLBACK else Status.FAILURE
        for child in node.children:
            s = self._tick(child, ctx, inner)
            if s is Status.RUNNING or s is stop:
                return s
        return Status.FAILURE if flow == FALLBACK else Status.SUCCESS

    def _condition(self, node, ctx) -> bool:
        try:
            fn = self.conditions[node.ref]
        except KeyError:
            raise ConfigurationError(f"unknown predicate {node.ref!r}") from None
        return bool(fn(ctx))

    def _action(self, node, ctx, activated) -> Status:
        try:
            fn = self.actions[node.ref]
        except KeyError:
            raise ConfigurationError(f"unknown command {node.ref!r}") from None
        return fn(ctx, activated)

    def _sot_action(self, node, ctx, activated, inner) -> Status:
        try:
            task = self.tasks[node.ref]
        except KeyError:
            raise ConfigurationError(f"unknown task spec {node.ref!r}") from None
        if callable(task) and not hasattr(task, "evaluate"):
            task = task()
        if activated:
            ctx.registry.add(task, owner=node.id)
            for nid in inner:
                ctx.activation.setdefault(nid, set()).add(task.id)
        if task.converged(ctx.model, ctx.state, ctx.world):
            return Status.SUCCESS
        if ctx.time - self.started[node.id] >= task.timeout:
            return Status.FAILURE
        return Status.RUNNING

    def _finalize(self, node, status, ctx, path) -> Status:
        """Remove the subtree's tasks; the status passes through unchanged."""
        ids = sorted(ctx.activation.get(node.id, ()))
        removed = []
        for tid in ids:
            if ctx.registry.remove(tid):
                removed.append(tid)
            for nid in path:
                ctx.activation.get(nid, set()).discard(tid)
        ctx.activation[node.id] = set()
        self._removals.append((node.id, status.value, tuple(ids)))
        return status


def sot_control_finalize(tree: BehaviorTree, node: BTNode, status: Status, ctx: TickContext) -> Status:
    """Apply the removal rule of a SoT control node outside a full tick."""
    if not status.final:
        return status
    return tree._finalize(node, status, ctx, ())


def write_tick_log(traces, fh) -> None:
    for t in traces:
        fh.write(t.to_json() + "\n")
