"""Text format for behavior trees (``.bt`` files).

::

    tree  := node
    node  := kind [ "(" args ")" ] [ "\\"" label "\\"" ] [ "{" node+ "}" ]
    args  := key "=" value { "," key "=" value }

Kinds: seq, fallback, parallel, repeat, cond, act, sot_act, sot_seq,
sot_fallback, sot_parallel.  ``#`` starts a line comment.  Leaf labels name
the predicate, command or task; composite labels are node ids.  ``id=`` in
the arguments overrides the node id (useful for repeated leaves).
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Optional

from ..errors import BtSotError
from .core import (ACTION, CONDITION, DECORATOR, FALLBACK, LEAVES, PARALLEL, SEQUENCE,
                   SOT_ACTION, SOT_CONTROL, BTNode, structure_errors)

KEYWORDS = {
    "seq": (SEQUENCE, None),
    "fallback": (FALLBACK, None),
    "parallel": (PARALLEL, None),
    "repeat": (DECORATOR, "repeat"),
    "cond": (CONDITION, None),
    "act": (ACTION, None),
    "sot_act": (SOT_ACTION, None),
    "sot_seq": (SOT_CONTROL, SEQUENCE),
    "sot_fallback": (SOT_CONTROL, FALLBACK),
    "sot_parallel": (SOT_CONTROL, PARALLEL),
}
_REVERSE = {v: k for k, v in KEYWORDS.items()}
INDENT = "  "


@dataclass(frozen=True)
class ParseDiagnostic:
    line: int
    column: int
    message: str
    severity: str = "error"

    def __str__(self):
        return f"{self.line}:{self.column}: {self.severity}: {self.message}"


class DslError(BtSotError):
    def __init__(self, diagnostics):
        self.diagnostics = list(diagnostics)
        super().__init__("\n".join(str(d) for d in self.diagnostics))


_TOKEN = re.compile(r"""
    (?P<ws>[ \t\r\n]+)
  | (?P<comment>\#[^\n]*)
  | (?P<string>"(?:[^"\\\n]|\\.)*")
  | (?P<number>-?\d+)
  | (?P<ident>[A-Za-z_][A-Za-z0-9_\-]*)
  | (?P<punct>[(){}=,])
""", re.VERBOSE)


@dataclass
class _Tok:
    kind: str
    text: str
    line: int
    col: int


class _ParseFailure(Exception):
    pass


def _unescape(s: str) -> str:
    return re.sub(r"\\(.)", r"\1", s[1:-1])


def _escape(s: str) -> str:
    return '"' + s.replace("\\", "\\\\").replace('"', '\\"') + '"'


def _last_position(text: str) -> tuple[int, int]:
    if not text:
        return 1, 1
    lines = text.split("\n")
    while len(lines) > 1 and lines[-1] == "":
        lines.pop()
    return len(lines), max(len(lines[-1]), 1)


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.diags: list[ParseDiagnostic] = []
        self.toks: list[_Tok] = []
        self.i = 0
        self.auto = 0

    def _lex(self, text):
        toks, pos, line, col = [], 0, 1, 1
        while pos < len(text):
            m = _TOKEN.match(text, pos)
            if m is None:
                self.diags.append(ParseDiagnostic(line, col, f"unexpected character {text[pos]!r}"))
                raise _ParseFailure
            kind, chunk = m.lastgroup, m.group()
            if kind not in ("ws", "comment"):
                toks.append(_Tok(kind, chunk, line, col))
            nl = chunk.count("\n")
            if nl:
                line += nl
                col = len(chunk) - chunk.rfind("\n")
            else:
                col += len(chunk)
            pos = m.end()
        return toks

    def error(self, tok: Optional[_Tok], msg: str):
        if tok is None:
            line, col = _last_position(self.text)
        else:
            line, col = tok.line, tok.col
        self.diags.append(ParseDiagnostic(line, col, msg))
        raise _ParseFailure

    def peek(self) -> Optional[_Tok]:
        return self.toks[self.i] if self.i < len(self.toks) else None

    def take(self, kind=None, text=None, what="token") -> _Tok:
        tok = self.peek()
        if tok is None:
            self.error(None, f"unexpected end of input, expected {what}")
        if (kind and tok.kind != kind) or (text and tok.text != text):
            self.error(tok, f"expected {what}, found {tok.text!r}")
        self.i += 1
        return tok

    def tree(self) -> BTNode:
        self.toks = self._lex(self.text)
        if self.peek() is None:
            self.error(None, "empty tree")
        root = self.node()
        extra = self.peek()
        if extra is not None:
            self.error(extra, f"unexpected {extra.text!r} after the root node")
        return root

    def node(self) -> BTNode:
        kw = self.take("ident", what="node kind")
        if kw.text not in KEYWORDS:
            self.error(kw, f"unknown node kind {kw.text!r}")
        kind, ref = KEYWORDS[kw.text]
        args = {}
        tok = self.peek()
        if tok is not None and tok.text == "(":
            args = self.args(kw)
        label = None
        tok = self.peek()
        if tok is not None and tok.kind == "string":
            label = _unescape(self.take().text)
        children = []
        tok = self.peek()
        if tok is not None and tok.text == "{":
            brace = self.take()
            while True:
                tok = self.peek()
                if tok is None:
                    self.error(None, f"unclosed '{{' opened at {brace.line}:{brace.col}")
                if tok.text == "}":
                    self.take()
                    break
                children.append(self.node())
            if not children:
                self.error(brace, "composite requires >=1 child")

        threshold = args.pop("m", None)
        node_id = args.pop("id", None)
        for key in args:
            self.error(kw, f"unknown argument {key!r} for {kw.text}")
        if kind in LEAVES:
            if label is None:
                self.error(kw, f"{kw.text} requires a quoted label")
            ref = label
        if node_id is None:
            node_id = label if label is not None else f"{kw.text}_{self.auto}"
        self.auto += 1
        if threshold is not None and (kind, ref) not in ((PARALLEL, None), (SOT_CONTROL, PARALLEL)):
            self.error(kw, f"argument 'm' is only valid for parallel nodes, not {kw.text}")
        if (kind == PARALLEL or ref == PARALLEL and kind == SOT_CONTROL) and threshold is None:
            self.error(kw, f"{kw.text} requires a threshold argument m")
        return BTNode(node_id, kind, children, ref, threshold, pos=(kw.line, kw.col))

    def args(self, kw) -> dict:
        self.take(text="(", what="'('")
        out = {}
        while True:
            key = self.take("ident", what="argument name")
            self.take(text="=", what="'='")
            val = self.peek()
            if val is None:
                self.error(None, "unexpected end of input in arguments")
            if key.text in out:
                self.error(key, f"duplicate argument {key.text!r}")
            if key.text == "m":
                if val.kind != "number":
                    self.error(val, "threshold m must be an integer")
                out["m"] = int(self.take().text)
            elif key.text == "id":
                if val.kind not in ("string", "ident"):
                    self.error(val, "id must be a name or quoted string")
                tok = self.take()
                out["id"] = _unescape(tok.text) if tok.kind == "string" else tok.text
            else:
                self.error(key, f"unknown argument {key.text!r} for {kw.text}")
            sep = self.take("punct", what="',' or ')'")
            if sep.text == ")":
                return out
            if sep.text != ",":
                self.error(sep, f"expected ',' or ')', found {sep.text!r}")


def parse_with_diagnostics(text: str):
    """Return ``(tree, diagnostics)``; ``tree`` is None whenever any error was found."""
    p = _Parser(text)
    try:
        root = p.tree()
    except _ParseFailure:
        return None, p.diags
    diags = list(p.diags)
    for node, msg in structure_errors(root):
        line, col = node.pos or (1, 1)
        diags.append(ParseDiagnostic(line, col, msg))
    if any(d.severity == "error" for d in diags):
        return None, diags
    return root, diags


def parse(text: str) -> BTNode:
    """Parse a tree, raising :class:`DslError` with diagnostics on any error."""
    root, diags = parse_with_diagnostics(text)
    if root is None:
        raise DslError(diags)
    return root


def print_tree(root: BTNode) -> str:
    """Canonical text form: one node per line, two-space indentation."""
    lines: list[str] = []
    _emit(root, 0, lines)
    return "\n".join(lines) + "\n"


def _emit(node: BTNode, depth: int, lines: list[str]) -> None:
    key = (node.kind, node.ref if node.kind in (DECORATOR, SOT_CONTROL) else None)
    kw = _REVERSE[key]
    args = []
    if node.threshold is not None:
        args.append(f"m={node.threshold}")
    if node.kind in LEAVES:
        label = node.ref
        if node.id != node.ref:
            args.append(f"id={_escape(node.id)}")
    else:
        label = node.id
    head = INDENT * depth + kw + (f"({', '.join(args)})" if args else "") + " " + _escape(label)
    if node.children:
        lines.append(head + " {")
        for c in node.children:
            _emit(c, depth + 1, lines)
        lines.append(INDENT * depth + "}")
    else:
        lines.append(head)


@dataclass
class Catalogs:
    """Ids the runtime can resolve."""

    conditions: frozenset = frozenset()
    actions: frozenset = frozenset()
    tasks: frozenset = frozenset()

    def __post_init__(self):
        self.conditions = frozenset(self.conditions)
        self.actions = frozenset(self.actions)
        self.tasks = frozenset(self.tasks)


def validate(root: BTNode, catalogs: Catalogs) -> list[ParseDiagnostic]:
    """Catalog and structural checks; an empty list means the tree can run."""
    diags = []
    for node, msg in structure_errors(root):
        line, col = node.pos or (1, 1)
        diags.append(ParseDiagnostic(line, col, msg))
    lookup = {CONDITION: ("predicate", catalogs.conditions),
              ACTION: ("command", catalogs.actions),
              SOT_ACTION: ("task", catalogs.tasks)}
    for node in root.walk():
        if node.kind in lookup:
            what, known = lookup[node.kind]
            if node.ref not in known:
                line, col = node.pos or (1, 1)
                diags.append(ParseDiagnostic(line, col, f"unknown {what} id {node.ref!r}"))
    return diags
