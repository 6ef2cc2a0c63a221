"""Labelled DAGs: data model, text format, context projection and CSI checks.

An edge label lists the context assignments under which the edge vanishes.
The text format looks like::

    # Figure-1 style example
    graph demo {
      context M in {0, 1}
      node X
      node Z
      node Y
      latent U
      M -> X
      U -> X [absent: M=1]
      X -> Z [absent: M=0]
    }
"""

from __future__ import annotations

import itertools
import re
from dataclasses import dataclass, field
from importlib import resources
from typing import Mapping

from .graph import Dag, GraphError, d_separated, find_cycle

OBSERVED, LATENT, CONTEXT = "observed", "latent", "context"
_KIND_KEYWORD = {OBSERVED: "node", LATENT: "latent", CONTEXT: "context"}


class LdagSyntaxError(ValueError):
    def __init__(self, message, line=None, column=None):
        self.line, self.column = line, column
        where = f"line {line}, column {column}: " if line is not None else ""
        super().__init__(where + message)


class LdagError(ValueError):
    """Semantic problem in a labelled DAG (bad label, cycle, unknown node)."""


@dataclass(frozen=True, order=True)
class NodeDecl:
    name: str
    kind: str = OBSERVED
    levels: tuple = ()

    def __post_init__(self):
        if self.kind not in _KIND_KEYWORD:
            raise LdagError(f"unknown node kind {self.kind!r}")
        object.__setattr__(self, "levels", tuple(str(v) for v in self.levels))


@dataclass(frozen=True)
class LabeledEdge:
    source: str
    target: str
    absent_in: frozenset = frozenset()

    def __post_init__(self):
        object.__setattr__(
            self, "absent_in", frozenset((str(c), str(v)) for c, v in self.absent_in)
        )

    @property
    def labelled(self) -> bool:
        return bool(self.absent_in)

    def present_in(self, ctx: Mapping[str, str]) -> bool:
        return not any(ctx.get(c) == v for c, v in self.absent_in)

    def __lt__(self, other):
        return _edge_key(self) < _edge_key(other)


def _edge_key(e: LabeledEdge):
    return (e.source, e.target, tuple(sorted(e.absent_in)))


@dataclass(frozen=True)
class Ldag:
    """A labelled DAG. Node and edge order is canonicalized on construction."""

    nodes: tuple
    edges: tuple = ()
    name: str = "G"

    def __post_init__(self):
        nodes = tuple(sorted(self.nodes, key=lambda n: n.name))
        names = [n.name for n in nodes]
        dup = {n for n in names if names.count(n) > 1}
        if dup:
            raise LdagError(f"duplicate node(s): {sorted(dup)}")
        known = set(names)
        for e in self.edges:
            for v in (e.source, e.target):
                if v not in known:
                    raise LdagError(f"edge {e.source} -> {e.target} uses undeclared node {v}")
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "edges", tuple(sorted(self.edges, key=_edge_key)))

    # -- lookups ---------------------------------------------------------
    @property
    def names(self) -> tuple:
        return tuple(n.name for n in self.nodes)

    def node(self, name) -> NodeDecl:
        for n in self.nodes:
            if n.name == name:
                return n
        raise KeyError(name)

    def names_of(self, *kinds) -> frozenset:
        return frozenset(n.name for n in self.nodes if n.kind in kinds)

    @property
    def observed(self) -> frozenset:
        return self.names_of(OBSERVED, CONTEXT)

    @property
    def latent(self) -> frozenset:
        return self.names_of(LATENT)

    @property
    def contexts(self) -> dict:
        return {n.name: n.levels for n in self.nodes if n.kind == CONTEXT}

    @property
    def labelled_edges(self) -> tuple:
        return tuple(e for e in self.edges if e.labelled)

    def label_contexts(self) -> frozenset:
        """Context variables referenced by at least one edge label."""
        return frozenset(c for e in self.edges for c, _ in e.absent_in)

    def context_assignments(self):
        """Every full assignment of the context variables used in labels."""
        used = sorted(self.label_contexts() & set(self.contexts))
        for values in itertools.product(*(self.contexts[c] for c in used)):
            yield dict(zip(used, values))

    def erase_labels(self) -> "Ldag":
        """The DAG obtained by keeping every context-specific edge."""
        return Ldag(self.nodes, tuple(LabeledEdge(e.source, e.target) for e in self.edges), self.name)

    def full_dag(self) -> Dag:
        return Dag(self.names, frozenset((e.source, e.target) for e in self.edges))


# -- projection and separation ----------------------------------------------


def normalize_context(ldag: Ldag, ctx: Mapping | None) -> dict:
    ctx = {str(k): str(v) for k, v in (ctx or {}).items()}
    contexts = ldag.contexts
    for k, v in ctx.items():
        if k not in contexts:
            raise LdagError(f"{k} is not a context variable")
        if v not in contexts[k]:
            raise LdagError(f"{k}={v} is not a declared level of {k}")
    return ctx


def project(ldag: Ldag, ctx: Mapping | None = None) -> Dag:
    """Context-specific DAG: drop edges whose label contains the assignment."""
    ctx = normalize_context(ldag, ctx)
    missing = ldag.label_contexts() - set(ctx)
    if missing:
        raise LdagError(f"incomplete context assignment; missing {sorted(missing)}")
    edges = frozenset((e.source, e.target) for e in ldag.edges if e.present_in(ctx))
    return Dag(ldag.names, edges)


def csi_separated(ldag: Ldag, A, B, Z, ctx: Mapping) -> bool:
    """d-separation in the context graph, with the context variables conditioned on."""
    ctx = normalize_context(ldag, ctx)
    g = project(ldag, ctx)
    A, B = frozenset([A] if isinstance(A, str) else A), frozenset([B] if isinstance(B, str) else B)
    Z = frozenset([Z] if isinstance(Z, str) else Z)
    if A & B or A & Z or B & Z:
        raise GraphError("A, B and Z must be disjoint")
    fixed = frozenset(ctx) - A - B
    return d_separated(g, A, B, Z | fixed)


def validate(ldag: Ldag) -> list[str]:
    """List every invariant violation; an empty list means the graph is valid."""
    problems = []
    contexts = ldag.contexts
    for n in ldag.nodes:
        if n.kind == CONTEXT:
            if len(n.levels) < 2:
                problems.append(f"context {n.name} needs at least two levels")
            if len(set(n.levels)) != len(n.levels):
                problems.append(f"context {n.name} has duplicate levels")
        elif n.levels:
            problems.append(f"node {n.name} is not a context but declares levels")
    seen = set()
    for e in ldag.edges:
        tag = f"{e.source} -> {e.target}"
        if e.source == e.target:
            problems.append(f"self loop {tag}")
        if (e.source, e.target) in seen:
            problems.append(f"duplicate edge {tag}")
        seen.add((e.source, e.target))
        ctx_vars = {c for c, _ in e.absent_in}
        if len(ctx_vars) > 1:
            problems.append(f"edge {tag} label references several context variables {sorted(ctx_vars)}")
        for c, v in sorted(e.absent_in):
            if c not in contexts:
                problems.append(f"edge {tag} label references unknown context {c}")
            elif v not in contexts[c]:
                problems.append(f"edge {tag} label references unknown level {c}={v}")
        for c in ctx_vars & set(contexts):
            vals = {v for cc, v in e.absent_in if cc == c}
            if vals >= set(contexts[c]):
                problems.append(f"edge {tag} is absent in all contexts of {c}; delete it instead")
    parents = {}
    for e in ldag.edges:
        parents.setdefault(e.target, set()).add(e.source)
    for e in ldag.edges:
        for c in sorted({c for c, _ in e.absent_in} - parents.get(e.target, set())):
            problems.append(f"edge {e.source} -> {e.target} label references {c}, which is not a parent of {e.target}")
    if any(p.startswith("edge") and "unknown" in p for p in problems):
        return problems
    for ctx in ldag.context_assignments():
        edges = [(e.source, e.target) for e in ldag.edges if e.present_in(ctx)]
        cycle = find_cycle(ldag.names, edges)
        if cycle:
            where = ", ".join(f"{k}={v}" for k, v in ctx.items()) or "all contexts"
            problems.append(f"cycle in context {where}: " + " -> ".join(cycle))
    return problems


# -- text format ---------------------------------------------------------------

_TOKEN = re.compile(
    r"""
    (?P<ws>[ \t\r]+)
  | (?P<comment>\#[^\n]*)
  | (?P<newline>\n)
  | (?P<arrow>->)
  | (?P<punct>[{}\[\],=:;])
  | (?P<ident>[A-Za-z_][A-Za-z0-9_.]*|[0-9]+(?:\.[0-9]+)?)
    """,
    re.VERBOSE,
)


def _tokenize(text):
    line, col, pos = 1, 1, 0
    out = []
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if not m:
            raise LdagSyntaxError(f"unexpected character {text[pos]!r}", line, col)
        kind, value = m.lastgroup, m.group()
        if kind == "newline":
            out.append(("sep", "\n", line, col))
            line, col = line + 1, 1
        else:
            if kind == "punct" and value == ";":
                out.append(("sep", ";", line, col))
            elif kind not in ("ws", "comment"):
                out.append((kind if kind != "punct" else value, value, line, col))
            col += len(value)
        pos = m.end()
    out.append(("eof", "", line, col))
    return out


class _Parser:
    def __init__(self, text):
        self.toks = _tokenize(text)
        self.i = 0

    def peek(self):
        return self.toks[self.i]

    def next(self):
        tok = self.toks[self.i]
        self.i += 1
        return tok

    def expect(self, kind, value=None):
        tok = self.next()
        if tok[0] != kind or (value is not None and tok[1] != value):
            want = value or kind
            got = tok[1] if tok[0] != "eof" else "end of input"
            raise LdagSyntaxError(f"expected {want!r}, got {got!r}", tok[2], tok[3])
        return tok

    def skip_seps(self):
        while self.peek()[0] == "sep":
            self.next()

    def parse(self):
        self.skip_seps()
        self.expect("ident", "graph")
        name = self.expect("ident")[1]
        self.skip_seps()
        self.expect("{")
        decls, edges, where = [], [], {}
        while True:
            self.skip_seps()
            tok = self.peek()
            if tok[0] == "}":
                self.next()
                break
            if tok[0] == "eof":
                raise LdagSyntaxError("missing closing '}'", tok[2], tok[3])
            self.statement(decls, edges, where)
        self.skip_seps()
        tok = self.peek()
        if tok[0] != "eof":
            raise LdagSyntaxError(f"unexpected {tok[1]!r} after graph body", tok[2], tok[3])
        return name, decls, edges, where

    def statement(self, decls, edges, where):
        tok = self.expect("ident")
        word = tok[1]
        if word in ("node", "latent") and self.peek()[0] == "ident":
            ident = self.expect("ident")
            decls.append(NodeDecl(ident[1], OBSERVED if word == "node" else LATENT))
            where.setdefault(ident[1], (ident[2], ident[3]))
        elif word == "context" and self.peek()[0] == "ident":
            ident = self.expect("ident")
            self.expect("ident", "in")
            self.expect("{")
            levels = [self.expect("ident")[1]]
            while self.peek()[0] == ",":
                self.next()
                levels.append(self.expect("ident")[1])
            self.expect("}")
            decls.append(NodeDecl(ident[1], CONTEXT, tuple(levels)))
            where.setdefault(ident[1], (ident[2], ident[3]))
        else:
            self.expect("arrow")
            target = self.expect("ident")
            absent = []
            if self.peek()[0] == "[":
                self.next()
                self.expect("ident", "absent")
                self.expect(":")
                absent.append(self.assignment())
                while self.peek()[0] == ",":
                    self.next()
                    absent.append(self.assignment())
                self.expect("]")
            edges.append((LabeledEdge(word, target[1], frozenset(absent)), tok[2], tok[3]))
        tok = self.peek()
        if tok[0] not in ("sep", "}"):
            raise LdagSyntaxError(f"expected end of statement, got {tok[1]!r}", tok[2], tok[3])

    def assignment(self):
        c = self.expect("ident")[1]
        self.expect("=")
        return (c, self.expect("ident")[1])


def parse_ldag(text: str) -> Ldag:
    """Parse the LDAG text format; raises on syntax errors or invalid graphs."""
    name, decls, edges, where = _Parser(text).parse()
    seen = {}
    for d in decls:
        if d.name in seen:
            line, col = where[d.name]
            raise LdagError(f"duplicate node {d.name} (first declared at line {line}, column {col})")
        seen[d.name] = d
    for e, line, col in edges:
        for v in (e.source, e.target):
            if v not in seen:
                raise LdagSyntaxError(f"edge uses undeclared node {v}", line, col)
        for c, v in sorted(e.absent_in):
            if c not in seen or seen[c].kind != CONTEXT:
                raise LdagSyntaxError(f"label references unknown context variable {c}", line, col)
            if v not in seen[c].levels:
                raise LdagSyntaxError(f"label references unknown level {c}={v}", line, col)
        if len({c for c, _ in e.absent_in}) > 1:
            raise LdagSyntaxError("labels may reference a single context variable", line, col)
    g = Ldag(tuple(decls), tuple(e for e, _, _ in edges), name)
    problems = validate(g)
    if problems:
        raise LdagError("; ".join(problems))
    return g


def serialize_ldag(ldag: Ldag) -> str:
    """Canonical text: declarations then edges, each in lexicographic order."""
    lines = [f"graph {ldag.name} {{"]
    for n in ldag.nodes:
        if n.kind == CONTEXT:
            lines.append(f"  context {n.name} in {{{', '.join(n.levels)}}}")
        else:
            lines.append(f"  {_KIND_KEYWORD[n.kind]} {n.name}")
    for e in ldag.edges:
        label = ""
        if e.absent_in:
            label = " [absent: " + ", ".join(f"{c}={v}" for c, v in sorted(e.absent_in)) + "]"
        lines.append(f"  {e.source} -> {e.target}{label}")
    lines.append("}")
    return "\n".join(lines) + "\n"


def load_ldag(path) -> Ldag:
    with open(path, encoding="utf-8") as fh:
        return parse_ldag(fh.read())


FIXTURES = ("toy_unlabelled", "toy_labelled", "expenditure", "expenditure_income")


def fixture(name: str) -> Ldag:
    """Bundled graphs: ``toy_unlabelled``, ``toy_labelled``, ``expenditure`` and ``expenditure_income``."""
    if name not in FIXTURES:
        raise KeyError(f"unknown fixture {name!r}; choose from {FIXTURES}")
    text = resources.files("csicausal.data").joinpath(f"{name}.ldag").read_text("utf-8")
    return parse_ldag(text)
