"""Composition language: tokenizer, parser, printer and compiler.

Grammar::

    composition := "composition" IDENT "(" [IDENT {"," IDENT}] ")" "=>" outputs
                   "{" {statement} "}"
    outputs     := IDENT {"," IDENT} | "(" [IDENT {"," IDENT}] ")"
    statement   := IDENT "(" [binding {"," binding}] ")" "=>"
                   "(" [local {"," local}] ")" ";"
    binding     := IDENT "=" ["optional"] ("all" | "each" | "key") IDENT
    local       := IDENT "=" IDENT

``//`` starts a comment that runs to the end of the line.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

from .data import Kind
from .errors import (CycleError, DslSyntaxError, DuplicateLocalError,
                     ProducerCountError, UnknownFunctionError, UnknownSetError,
                     UnknownNameError)
from .ir import SOURCE, CompositionIR, Distribution, Edge, IRNode, find_cycle

KEYWORDS = tuple(d.value for d in Distribution)

IDENT_RE = re.compile(r"[A-Za-z][A-Za-z0-9_]*")


@dataclass(frozen=True)
class InputBinding:
    declared: str
    distribution: Distribution
    optional: bool
    source: str


@dataclass(frozen=True)
class OutputBinding:
    local: str
    declared: str


@dataclass(frozen=True)
class FunctionCallStmt:
    function: str
    inputs: tuple[InputBinding, ...]
    outputs: tuple[OutputBinding, ...]
    line: int = 0

    def structure(self):
        return (self.function, self.inputs, self.outputs)


@dataclass(frozen=True)
class CompositionAst:
    name: str
    external_inputs: tuple[str, ...]
    external_outputs: tuple[str, ...]
    statements: tuple[FunctionCallStmt, ...]

    def structure(self):
        """Comparable form that ignores source positions."""
        return (self.name, self.external_inputs, self.external_outputs,
                tuple(s.structure() for s in self.statements))


# --- tokenizer ------------------------------------------------------------

_TOKEN_RE = re.compile(r"""
    (?P<ws>[ \t\r\n]+)
  | (?P<comment>//[^\n]*)
  | (?P<arrow>=>)
  | (?P<punct>[(){},;=])
  | (?P<ident>[A-Za-z][A-Za-z0-9_]*)
""", re.VERBOSE)


@dataclass(frozen=True)
class Token:
    kind: str      # "ident", "punct" (value is the symbol), "eof"
    value: str
    line: int
    column: int


def tokenize(source: str) -> list[Token]:
    tokens = []
    pos, line, line_start = 0, 1, 0
    while pos < len(source):
        m = _TOKEN_RE.match(source, pos)
        col = pos - line_start + 1
        if m is None:
            raise DslSyntaxError(f"unexpected character {source[pos]!r}", line, col)
        kind = m.lastgroup
        text = m.group()
        if kind == "ident":
            tokens.append(Token("ident", text, line, col))
        elif kind in ("punct", "arrow"):
            tokens.append(Token("punct", text, line, col))
        newlines = text.count("\n")
        if newlines:
            line += newlines
            line_start = pos + text.rindex("\n") + 1
        pos = m.end()
    tokens.append(Token("eof", "", line, pos - line_start + 1))
    return tokens


# --- parser ---------------------------------------------------------------

def _describe(tok: Token) -> str:
    return "end of input" if tok.kind == "eof" else repr(tok.value)


class _Parser:
    def __init__(self, source):
        self.toks = tokenize(source)
        self.i = 0

    @property
    def tok(self):
        return self.toks[self.i]

    def fail(self, expected):
        tok = self.tok
        raise DslSyntaxError(f"expected {expected}, found {_describe(tok)}",
                             tok.line, tok.column, expected)

    def at(self, value):
        return self.tok.kind == "punct" and self.tok.value == value

    def expect(self, value):
        if not self.at(value):
            self.fail(repr(value))
        self.i += 1

    def ident(self, what="identifier"):
        if self.tok.kind != "ident":
            self.fail(what)
        v = self.tok.value
        self.i += 1
        return v

    def ident_list(self, close):
        names = []
        if self.at(close):
            return names
        names.append(self.ident())
        while self.at(","):
            self.i += 1
            names.append(self.ident())
        return names

    def composition(self) -> CompositionAst:
        if not (self.tok.kind == "ident" and self.tok.value == "composition"):
            self.fail("'composition'")
        self.i += 1
        name = self.ident("composition name")
        self.expect("(")
        inputs = self.ident_list(")")
        self.expect(")")
        self.expect("=>")
        if self.at("("):
            self.i += 1
            outputs = self.ident_list(")")
            self.expect(")")
        else:
            outputs = [self.ident("output set name")]
            while self.at(","):
                self.i += 1
                outputs.append(self.ident())
        self.expect("{")
        stmts = []
        while not self.at("}"):
            if self.tok.kind != "ident":
                self.fail("function name or '}'")
            stmts.append(self.statement())
        self.expect("}")
        if self.tok.kind != "eof":
            self.fail("end of input")
        return CompositionAst(name, tuple(inputs), tuple(outputs), tuple(stmts))

    def statement(self) -> FunctionCallStmt:
        line = self.tok.line
        fn = self.ident("function name")
        self.expect("(")
        bindings = []
        if not self.at(")"):
            bindings.append(self.binding())
            while self.at(","):
                self.i += 1
                bindings.append(self.binding())
        self.expect(")")
        self.expect("=>")
        self.expect("(")
        outs = []
        if not self.at(")"):
            outs.append(self.output())
            while self.at(","):
                self.i += 1
                outs.append(self.output())
        self.expect(")")
        self.expect(";")
        return FunctionCallStmt(fn, tuple(bindings), tuple(outs), line)

    def binding(self) -> InputBinding:
        declared = self.ident("input set name")
        self.expect("=")
        optional = False
        if self.tok.kind == "ident" and self.tok.value == "optional":
            optional = True
            self.i += 1
        if self.tok.kind != "ident" or self.tok.value not in KEYWORDS:
            self.fail("distribution keyword, one of 'all', 'each', 'key'")
        dist = Distribution(self.tok.value)
        self.i += 1
        source = self.ident("source set name")
        return InputBinding(declared, dist, optional, source)

    def output(self) -> OutputBinding:
        local = self.ident("local set name")
        self.expect("=")
        declared = self.ident("declared output set name")
        return OutputBinding(local, declared)


def parse(source: str) -> CompositionAst:
    """Parse composition source text; no registry lookups happen here."""
    if isinstance(source, bytes):
        source = source.decode("utf-8")
    return _Parser(source).composition()


def pretty_print(ast: CompositionAst) -> str:
    lines = [f"composition {ast.name}({', '.join(ast.external_inputs)}) => "
             f"({', '.join(ast.external_outputs)}) {{"]
    for st in ast.statements:
        ins = ", ".join(
            f"{b.declared} = {'optional ' if b.optional else ''}{b.distribution.value} {b.source}"
            for b in st.inputs)
        outs = ", ".join(f"{o.local} = {o.declared}" for o in st.outputs)
        lines.append(f"    {st.function}({ins})")
        lines.append(f"        => ({outs});")
    lines.append("}")
    return "\n".join(lines) + "\n"


# --- compiler -------------------------------------------------------------

def compile_ast(ast: CompositionAst, registry) -> CompositionIR:
    """Resolve ``ast`` against ``registry`` into a validated, acyclic IR.

    Node ids are ``"<statement index>.<function>"`` so that repeated uses of
    one function stay distinct and the output is deterministic.
    """
    nodes = []
    specs = []
    for idx, st in enumerate(ast.statements):
        try:
            spec = registry.spec(st.function)
        except UnknownNameError:
            raise UnknownFunctionError(
                f"line {st.line}: unknown function {st.function!r}") from None
        specs.append(spec)
        nodes.append(IRNode(
            id=f"{idx}.{st.function}", function=st.function, kind=spec.kind,
            inputs=tuple((d.name, d.optional) for d in spec.input_sets),
            outputs=tuple(spec.output_sets)))

    # locals: name -> (producer node id, declared output set)
    locals_: dict[str, tuple[str, str]] = {}
    for ext in ast.external_inputs:
        if ext in locals_:
            raise DuplicateLocalError(f"external input {ext!r} declared twice")
        locals_[ext] = (SOURCE, ext)
    for st, spec, node in zip(ast.statements, specs, nodes):
        for ob in st.outputs:
            if ob.declared not in spec.output_sets:
                raise UnknownSetError(
                    f"line {st.line}: {st.function} has no output set {ob.declared!r} "
                    f"(declares {', '.join(spec.output_sets) or 'none'})")
            if ob.local in locals_:
                raise DuplicateLocalError(
                    f"line {st.line}: local name {ob.local!r} is already defined")
            locals_[ob.local] = (node.id, ob.declared)

    edges = []
    for st, spec, node in zip(ast.statements, specs, nodes):
        bound = {}
        for b in st.inputs:
            decl = spec.input_decl(b.declared)
            if decl is None:
                raise UnknownSetError(
                    f"line {st.line}: {st.function} has no input set {b.declared!r} "
                    f"(declares {', '.join(spec.input_names()) or 'none'})")
            if b.declared in bound:
                raise ProducerCountError(
                    f"line {st.line}: input set {b.declared!r} of {st.function} "
                    "is bound more than once")
            if b.source not in locals_:
                raise ProducerCountError(
                    f"line {st.line}: set {b.source!r} feeding {st.function}.{b.declared} "
                    "has no producer")
            bound[b.declared] = b
            producer, pset = locals_[b.source]
            edges.append(Edge(producer, pset, node.id, b.declared, b.distribution,
                              b.optional or decl.optional))
        for decl in spec.input_sets:
            if decl.name not in bound and not decl.optional:
                raise ProducerCountError(
                    f"line {st.line}: required input set {decl.name!r} of "
                    f"{st.function} is not bound")

    ids = [n.id for n in nodes]
    cycle = find_cycle(ids, [e for e in edges if e.producer != SOURCE])
    if cycle:
        raise CycleError(cycle)

    sinks = {}
    for out in ast.external_outputs:
        if out not in locals_:
            raise ProducerCountError(f"composition output {out!r} is never produced")
        if out in sinks:
            raise DuplicateLocalError(f"composition output {out!r} listed twice")
        sinks[out] = locals_[out]

    return CompositionIR(ast.name, nodes, edges, list(ast.external_inputs),
                         list(ast.external_outputs), sinks)


def compile_source(source: str, registry) -> CompositionIR:
    return compile_ast(parse(source), registry)
