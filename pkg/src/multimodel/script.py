"""The query-script language: a tiny method-chain notation over datasets.

A script is a sequence of assignments over opened datasets, closed by a
single ``execute(target)``.  Scripts bind to a :class:`LogicalPlan`; dataset
expressions become plan nodes while plain integers stay bind-time values, so
loops (``for i in range(n):``) unroll and ``rand({rows, rank})`` receives
concrete shapes.  ``count()`` directly on an opened dataset is evaluated at
bind time for the same reason.

Example::

    t = openTable('points')
    kept = t.filter('x >= 3').sort('x DESC').limit(5)
    execute(kept)
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Any

from .errors import NotFoundError, ScriptError
from .planner import LogicalPlan, PlanNode
from .predicates import parse_predicate, parse_sort_spec

_REL, _DOC, _ARR = "relational", "document", "array"


# ---------------------------------------------------------------------------
# tokens

@dataclass(frozen=True)
class _Tok:
    kind: str  # num | str | ident | op
    value: Any
    line: int
    col: int


_TOKEN = re.compile(r"""
    (?P<ws>[ \t]+)
  | (?P<comment>\#.*)
  | (?P<num>\d+(?:\.\d+)?)
  | (?P<str>'(?:[^'\\]|\\.)*')
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<op>,|\(|\)|\{|\}|\.|@|\*|/|\+|-|:|=)
""", re.VERBOSE)


def _tokenize(text: str, line: int) -> list[_Tok]:
    out = []
    pos = 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None:
            raise ScriptError(f"unexpected character {text[pos]!r}",
                              line, pos + 1)
        kind = m.lastgroup
        if kind == "num":
            raw = m.group()
            out.append(_Tok("num", float(raw) if "." in raw else int(raw),
                            line, pos + 1))
        elif kind == "str":
            body = m.group()[1:-1]
            out.append(_Tok("str", body.replace("\\'", "'").replace("\\\\", "\\"),
                            line, pos + 1))
        elif kind == "ident":
            out.append(_Tok("ident", m.group(), line, pos + 1))
        elif kind == "op":
            out.append(_Tok("op", m.group(), line, pos + 1))
        pos = m.end()
    return out


# ---------------------------------------------------------------------------
# statement / expression AST

@dataclass(frozen=True)
class Num:
    value: Any
    line: int
    col: int


@dataclass(frozen=True)
class Str:
    value: str
    line: int
    col: int


@dataclass(frozen=True)
class Name:
    id: str
    line: int
    col: int


@dataclass(frozen=True)
class Brace:
    items: tuple
    line: int
    col: int


@dataclass(frozen=True)
class Call:
    func: str
    args: tuple
    line: int
    col: int


@dataclass(frozen=True)
class Method:
    recv: Any
    name: str
    args: tuple
    line: int
    col: int


@dataclass(frozen=True)
class AttrT:
    recv: Any
    line: int
    col: int


@dataclass(frozen=True)
class BinOp:
    op: str
    left: Any
    right: Any
    line: int
    col: int


@dataclass(frozen=True)
class Assign:
    targets: tuple[str, ...]
    exprs: tuple
    line: int


@dataclass(frozen=True)
class ForLoop:
    var: str
    count: Any
    body: tuple
    line: int


@dataclass(frozen=True)
class Execute:
    expr: Any
    line: int


class _ExprParser:
    def __init__(self, toks: list[_Tok], line: int):
        self.toks = toks
        self.line = line
        self.pos = 0

    def peek(self) -> _Tok | None:
        return self.toks[self.pos] if self.pos < len(self.toks) else None

    def next(self) -> _Tok:
        t = self.peek()
        if t is None:
            raise ScriptError("unexpected end of line", self.line)
        self.pos += 1
        return t

    def expect_op(self, op: str) -> _Tok:
        t = self.next()
        if t.kind != "op" or t.value != op:
            raise ScriptError(f"expected {op!r}, got {t.value!r}", t.line, t.col)
        return t

    def at_op(self, *ops) -> bool:
        t = self.peek()
        return t is not None and t.kind == "op" and t.value in ops

    # precedence: (+ -) < (* / @) < postfix < primary, all left-associative
    def expr(self):
        left = self.term()
        while self.at_op("+", "-"):
            op = self.next()
            left = BinOp(op.value, left, self.term(), op.line, op.col)
        return left

    def term(self):
        left = self.postfix()
        while self.at_op("*", "/", "@"):
            op = self.next()
            left = BinOp(op.value, left, self.postfix(), op.line, op.col)
        return left

    def postfix(self):
        e = self.primary()
        while self.at_op("."):
            dot = self.next()
            t = self.next()
            if t.kind != "ident":
                raise ScriptError("expected a method or .T after '.'",
                                  t.line, t.col)
            if self.at_op("("):
                self.next()
                args = self.arg_list()
                self.expect_op(")")
                e = Method(e, t.value, tuple(args), t.line, t.col)
            elif t.value == "T":
                e = AttrT(e, t.line, t.col)
            else:
                raise ScriptError(
                    f"{t.value!r} is not callable without parentheses "
                    f"(only .T is an attribute)", t.line, t.col)
        return e

    def primary(self):
        t = self.next()
        if t.kind == "num":
            return Num(t.value, t.line, t.col)
        if t.kind == "str":
            return Str(t.value, t.line, t.col)
        if t.kind == "ident":
            if self.at_op("("):
                self.next()
                args = self.arg_list()
                self.expect_op(")")
                return Call(t.value, tuple(args), t.line, t.col)
            return Name(t.value, t.line, t.col)
        if t.kind == "op" and t.value == "(":
            e = self.expr()
            self.expect_op(")")
            return e
        if t.kind == "op" and t.value == "{":
            items = self.arg_list(closer="}")
            self.expect_op("}")
            return Brace(tuple(items), t.line, t.col)
        raise ScriptError(f"unexpected token {t.value!r}", t.line, t.col)

    def arg_list(self, closer: str = ")") -> list:
        args = []
        if self.at_op(closer):
            return args
        args.append(self.expr())
        while self.at_op(","):
            self.next()
            args.append(self.expr())
        return args

    def done(self) -> None:
        t = self.peek()
        if t is not None:
            raise ScriptError(f"trailing input {t.value!r}", t.line, t.col)


def parse_script(text: str) -> list:
    lines = []
    for i, raw in enumerate(text.splitlines(), 1):
        toks = _tokenize(raw, i)
        if not toks:
            continue
        indent = len(raw) - len(raw.lstrip(" \t"))
        lines.append((indent, toks))
    stmts, nxt = _parse_block(lines, 0, lines[0][0] if lines else 0)
    if nxt != len(lines):
        indent, toks = lines[nxt]
        raise ScriptError("unexpected indent", toks[0].line, toks[0].col)
    return stmts


def _parse_block(lines, i, indent0):
    out = []
    while i < len(lines) and lines[i][0] == indent0:
        stmt, i = _parse_stmt(lines, i)
        out.append(stmt)
    return out, i


def _parse_stmt(lines, i):
    indent, toks = lines[i]
    first = toks[0]
    if first.kind == "ident" and first.value == "for":
        return _parse_for(lines, i)
    if first.kind == "ident" and first.value == "execute":
        p = _ExprParser(toks[1:], first.line)
        p.expect_op("(")
        e = p.expr()
        p.expect_op(")")
        p.done()
        return Execute(e, first.line), i + 1
    # assignment: targets = expr, expr, ...
    eq = next((k for k, t in enumerate(toks)
               if t.kind == "op" and t.value == "="), None)
    if eq is None:
        raise ScriptError("expected an assignment, for-loop or execute()",
                          first.line, first.col)
    targets = []
    expect_name = True
    for t in toks[:eq]:
        if expect_name:
            if t.kind != "ident":
                raise ScriptError("assignment target must be a name",
                                  t.line, t.col)
            targets.append(t.value)
        elif not (t.kind == "op" and t.value == ","):
            raise ScriptError("expected ',' between assignment targets",
                              t.line, t.col)
        expect_name = not expect_name
    if expect_name:
        raise ScriptError("missing assignment target", first.line, first.col)
    p = _ExprParser(toks[eq + 1:], first.line)
    exprs = [p.expr()]
    while p.at_op(","):
        p.next()
        exprs.append(p.expr())
    p.done()
    return Assign(tuple(targets), tuple(exprs), first.line), i + 1


def _parse_for(lines, i):
    indent, toks = lines[i]
    p = _ExprParser(toks, toks[0].line)
    p.next()  # 'for'
    var = p.next()
    if var.kind != "ident":
        raise ScriptError("expected a loop variable", var.line, var.col)
    t = p.next()
    if not (t.kind == "ident" and t.value == "in"):
        raise ScriptError("expected 'in'", t.line, t.col)
    t = p.next()
    if not (t.kind == "ident" and t.value == "range"):
        raise ScriptError("only 'range(n)' loops are supported", t.line, t.col)
    p.expect_op("(")
    count = p.expr()
    p.expect_op(")")
    p.expect_op(":")
    p.done()
    if i + 1 >= len(lines) or lines[i + 1][0] <= indent:
        raise ScriptError("empty loop body", toks[0].line)
    body, nxt = _parse_block(lines, i + 1, lines[i + 1][0])
    return ForLoop(var.value, count, tuple(body), toks[0].line), nxt


# ---------------------------------------------------------------------------
# binding: AST -> LogicalPlan

@dataclass(frozen=True)
class NodeRef:
    """A dataset-valued script expression: plan node id plus the data model
    of the value it produces (an inter-model node still *produces* one)."""

    id: int
    model: str


_OPEN_KINDS = {"openTable": _REL, "openCollection": _DOC, "openArray": _ARR}
_OUT_MODELS = {"RELATIONAL": _REL, "DOCUMENT": _DOC, "ARRAY": _ARR}
_AGG_ITEM = re.compile(r"^\s*(\w+)\s*\(\s*(\*|[\w.]+)\s*\)\s+as\s+([\w.]+)\s*$")


class Binder:
    """Walks parsed statements, folding scalars and growing the plan."""

    def __init__(self, catalog, config):
        self.catalog = catalog
        self.config = config
        self.plan = LogicalPlan()
        self.env: dict[str, Any] = {}
        self.rand_count = 0
        self.target: int | None = None

    def bind(self, stmts) -> tuple[LogicalPlan, int]:
        for s in stmts:
            self._stmt(s)
        if self.target is None:
            raise ScriptError("script never calls execute()")
        return self._pruned(), self.target

    def _pruned(self) -> LogicalPlan:
        """Drop nodes the execute target never reads (e.g. datasets opened
        only to be counted at bind time)."""
        keep: set[int] = set()
        stack = [self.target]
        while stack:
            nid = stack.pop()
            if nid in keep:
                continue
            keep.add(nid)
            stack.extend(self.plan.node(nid).inputs)
        return LogicalPlan([n for n in self.plan.nodes if n.id in keep])

    # -- statements ---------------------------------------------------------

    def _stmt(self, s) -> None:
        if isinstance(s, Assign):
            vals = [self._expr(e) for e in s.exprs]
            if len(s.targets) != len(vals):
                raise ScriptError(
                    f"{len(s.targets)} targets but {len(vals)} values", s.line)
            for name, v in zip(s.targets, vals):
                self.env[name] = v
        elif isinstance(s, ForLoop):
            n = self._expr(s.count)
            if not isinstance(n, int) or isinstance(n, bool) or n < 0:
                raise ScriptError("range() needs a non-negative integer known "
                                  "at bind time", s.line)
            for k in range(n):
                self.env[s.var] = k
                for b in s.body:
                    self._stmt(b)
        elif isinstance(s, Execute):
            if self.target is not None:
                raise ScriptError("execute() must appear exactly once", s.line)
            v = self._expr(s.expr)
            if not isinstance(v, NodeRef):
                raise ScriptError("execute() needs a dataset expression", s.line)
            self.target = v.id
        else:  # pragma: no cover - parser emits only the three kinds
            raise ScriptError(f"unknown statement {s!r}")

    # -- expressions ----------------------------------------------------------

    def _expr(self, e):
        if isinstance(e, Num):
            return e.value
        if isinstance(e, Str):
            raise ScriptError("string literal outside an argument position",
                              e.line, e.col)
        if isinstance(e, Brace):
            raise ScriptError("brace list outside an argument position",
                              e.line, e.col)
        if isinstance(e, Name):
            try:
                return self.env[e.id]
            except KeyError:
                raise ScriptError(f"undefined name {e.id!r}", e.line, e.col) \
                    from None
        if isinstance(e, Call):
            return self._call(e)
        if isinstance(e, Method):
            return self._method(e)
        if isinstance(e, AttrT):
            recv = self._expr(e.recv)
            self._need_model(recv, _ARR, "T", e.line, e.col)
            n = self.plan.add("transpose", _ARR, inputs=[recv.id])
            return NodeRef(n.id, _ARR)
        if isinstance(e, BinOp):
            return self._binop(e)
        raise ScriptError(f"cannot evaluate {e!r}")

    def _call(self, e: Call):
        if e.func in _OPEN_KINDS:
            name = self._arg_str(e, 0)
            model = _OPEN_KINDS[e.func]
            if not self.catalog.exists(name, model):
                raise NotFoundError(f"dataset {name!r} not found "
                                    f"(line {e.line})")
            op = "scan_array" if model == _ARR else "scan"
            n = self.plan.add(op, model, name=name, qualifier=name)
            return NodeRef(n.id, model)
        if e.func == "rand":
            if len(e.args) != 1 or not isinstance(e.args[0], Brace):
                raise ScriptError("rand takes a {dim, ...} size list",
                                  e.line, e.col)
            size = [self._expr(x) for x in e.args[0].items]
            for s in size:
                if not isinstance(s, int) or isinstance(s, bool) or s < 1:
                    raise ScriptError("rand sizes must be positive integers "
                                      "known at bind time", e.line, e.col)
            seed = self.config.seed + self.rand_count
            self.rand_count += 1
            n = self.plan.add("rand", _ARR, size=size, seed=seed)
            return NodeRef(n.id, _ARR)
        raise ScriptError(f"unknown function {e.func!r}", e.line, e.col)

    def _binop(self, e: BinOp):
        l, r = self._expr(e.left), self._expr(e.right)
        if isinstance(l, (int, float)) and isinstance(r, (int, float)):
            if e.op == "@":
                raise ScriptError("'@' applies to arrays", e.line, e.col)
            if e.op == "/" and r == 0:
                raise ScriptError("division by zero", e.line, e.col)
            return {"+": l + r, "-": l - r, "*": l * r, "/": l / r}[e.op]
        if isinstance(l, NodeRef) and isinstance(r, NodeRef) \
                and l.model == _ARR and r.model == _ARR:
            if e.op == "@":
                n = self.plan.add("matmul", _ARR, inputs=[l.id, r.id])
            else:
                n = self.plan.add("ewise", _ARR, inputs=[l.id, r.id], fn=e.op)
            return NodeRef(n.id, _ARR)
        raise ScriptError(f"cannot apply {e.op!r} to these operands",
                          e.line, e.col)

    # -- methods --------------------------------------------------------------

    def _method(self, m: Method):
        recv = self._expr(m.recv)
        handler = getattr(self, f"_m_{m.name}", None)
        if handler is None or not isinstance(recv, NodeRef):
            raise ScriptError(f"unknown method .{m.name}()", m.line, m.col)
        return handler(m, recv)

    def _need_model(self, v, model, what, line, col) -> None:
        if not isinstance(v, NodeRef):
            raise ScriptError(f".{what} needs a dataset", line, col)
        models = (model,) if isinstance(model, str) else model
        if v.model not in models:
            raise ScriptError(f".{what} does not apply to {v.model} data",
                              line, col)

    def _arg_str(self, m, i) -> str:
        if i >= len(m.args) or not isinstance(m.args[i], Str):
            raise ScriptError(f"argument {i + 1} must be a quoted string",
                              m.line, m.col)
        return m.args[i].value

    def _checked_pred(self, text: str, line: int) -> str:
        try:
            parse_predicate(text)
        except ScriptError as e:
            raise ScriptError(f"bad predicate: {e.args[0]}", line) from None
        return text

    def _syntactic_name(self, ast, ref: NodeRef, fallback: str) -> str:
        if isinstance(ast, Name):
            return ast.id
        node = self.plan.node(ref.id)
        return node.params.get("name", fallback)

    def _m_filter(self, m, recv):
        self._need_model(recv, (_REL, _DOC), "filter", m.line, m.col)
        pred = self._checked_pred(self._arg_str(m, 0), m.line)
        n = self.plan.add("filter", recv.model, inputs=[recv.id], pred=pred)
        return NodeRef(n.id, recv.model)

    def _m_project(self, m, recv):
        self._need_model(recv, (_REL, _DOC), "project", m.line, m.col)
        cols = [c.strip() for c in self._arg_str(m, 0).split(",") if c.strip()]
        if not cols:
            raise ScriptError("project needs at least one column", m.line)
        n = self.plan.add("project", recv.model, inputs=[recv.id], cols=cols)
        return NodeRef(n.id, recv.model)

    def _m_sort(self, m, recv):
        self._need_model(recv, (_REL, _DOC), "sort", m.line, m.col)
        spec = self._arg_str(m, 0)
        try:
            parse_sort_spec(spec)
        except ScriptError as e:
            raise ScriptError(f"bad sort spec: {e.args[0]}", m.line) from None
        n = self.plan.add("sort", recv.model, inputs=[recv.id], keys=spec)
        return NodeRef(n.id, recv.model)

    def _m_limit(self, m, recv):
        self._need_model(recv, (_REL, _DOC), "limit", m.line, m.col)
        if len(m.args) != 1:
            raise ScriptError("limit takes one count", m.line, m.col)
        k = self._expr(m.args[0])
        if not isinstance(k, int) or isinstance(k, bool) or k < 0:
            raise ScriptError("limit needs a non-negative integer", m.line)
        n = self.plan.add("limit", recv.model, inputs=[recv.id], n=k)
        return NodeRef(n.id, recv.model)

    def _m_unwind(self, m, recv):
        self._need_model(recv, _DOC, "unwind", m.line, m.col)
        n = self.plan.add("unwind", _DOC, inputs=[recv.id],
                          path=self._arg_str(m, 0))
        return NodeRef(n.id, _DOC)

    def _m_union(self, m, recv):
        self._need_model(recv, (_REL, _DOC), "union", m.line, m.col)
        other = self._expr(m.args[0]) if m.args else None
        if not isinstance(other, NodeRef) or other.model != recv.model:
            raise ScriptError("union needs a dataset of the same model", m.line)
        n = self.plan.add("union", recv.model, inputs=[recv.id, other.id])
        return NodeRef(n.id, recv.model)

    def _m_aggregate(self, m, recv):
        self._need_model(recv, (_REL, _DOC), "aggregate", m.line, m.col)
        if len(m.args) != 2:
            raise ScriptError("aggregate takes ('keys', 'agg(x) as name, ...')",
                              m.line, m.col)
        keys = [k.strip() for k in self._arg_str(m, 0).split(",") if k.strip()]
        aggs = []
        for part in self._arg_str(m, 1).split(","):
            g = _AGG_ITEM.match(part)
            if g is None:
                raise ScriptError(f"bad aggregate {part.strip()!r}; expected "
                                  f"func(attr) as name", m.line)
            func, ref, out = g.groups()
            aggs.append([func, None if ref == "*" else ref, out])
        n = self.plan.add("aggregate", recv.model, inputs=[recv.id],
                          keys=keys, aggs=aggs)
        return NodeRef(n.id, _REL)

    def _m_count(self, m, recv):
        if recv.model == _ARR:
            raise ScriptError("count() applies to tables and collections",
                              m.line, m.col)
        node = self.plan.node(recv.id)
        if node.op == "scan":
            # sizing value, needed at bind time (e.g. rand shapes)
            return self.catalog.count(node.params["name"], recv.model)
        n = self.plan.add("aggregate", recv.model, inputs=[recv.id],
                          keys=[], aggs=[["count", None, "count"]])
        return NodeRef(n.id, _REL)

    def _m_toArray(self, m, recv):
        self._need_model(recv, (_REL, _DOC), "toArray", m.line, m.col)
        if len(m.args) != 2 or not all(isinstance(a, Brace) for a in m.args):
            raise ScriptError("toArray takes {'dim', ...}, {'value', ...}",
                              m.line, m.col)

        def strings(brace):
            out = []
            for item in brace.items:
                if not isinstance(item, Str):
                    raise ScriptError("toArray names must be quoted strings",
                                      item.line if hasattr(item, "line")
                                      else m.line)
                out.append(item.value)
            return out

        n = self.plan.add("to_array", "inter-model", inputs=[recv.id],
                          dims=strings(m.args[0]), values=strings(m.args[1]))
        return NodeRef(n.id, _ARR)

    def _m_matmul(self, m, recv):
        self._need_model(recv, _ARR, "matmul", m.line, m.col)
        other = self._expr(m.args[0]) if m.args else None
        if not isinstance(other, NodeRef) or other.model != _ARR:
            raise ScriptError("matmul needs an array argument", m.line, m.col)
        n = self.plan.add("matmul", _ARR, inputs=[recv.id, other.id])
        return NodeRef(n.id, _ARR)

    def _m_transpose(self, m, recv):
        self._need_model(recv, _ARR, "transpose", m.line, m.col)
        n = self.plan.add("transpose", _ARR, inputs=[recv.id])
        return NodeRef(n.id, _ARR)

    def _m_join(self, m, recv):
        if len(m.args) not in (1, 2, 3):
            raise ScriptError("join takes (other[, 'predicate'[, MODEL]])",
                              m.line, m.col)
        other = self._expr(m.args[0])
        if not isinstance(other, NodeRef):
            raise ScriptError("join needs a dataset argument", m.line, m.col)
        out_model = None
        if len(m.args) == 3:
            tok = m.args[2]
            if not isinstance(tok, Name) or tok.id not in _OUT_MODELS:
                raise ScriptError("join output model must be RELATIONAL, "
                                  "DOCUMENT or ARRAY", m.line, m.col)
            out_model = _OUT_MODELS[tok.id]

        l, r = recv, other
        if l.model == _ARR and r.model == _ARR:
            if len(m.args) != 1:
                raise ScriptError("array-array joins match on coordinates; "
                                  "no predicate applies", m.line, m.col)
            n = self.plan.add("spatial_join", _ARR, inputs=[l.id, r.id])
            return NodeRef(n.id, _ARR)
        if len(m.args) < 2:
            raise ScriptError("join needs a predicate string", m.line, m.col)
        pred = self._checked_pred(self._arg_str(m, 1), m.line)
        if _ARR in (l.model, r.model):
            if l.model == _ARR:
                arr, rec = l, r
                arr_ast, rec_ast = m.recv, m.args[0]
            else:
                arr, rec = r, l
                arr_ast, rec_ast = m.args[0], m.recv
            model = out_model or rec.model
            n = self.plan.add(
                "join_rel_array", "inter-model", inputs=[rec.id, arr.id],
                pred=pred,
                rec_name=self._syntactic_name(rec_ast, rec, "rec"),
                arr_name=self._syntactic_name(arr_ast, arr, "arr"),
                out_model=model)
            return NodeRef(n.id, model)
        model = _DOC if _DOC in (l.model, r.model) else _REL
        if out_model is not None and out_model != model:
            raise ScriptError(f"a {model} join cannot emit {out_model} output",
                              m.line, m.col)
        n = self.plan.add("join", model, inputs=[l.id, r.id], pred=pred)
        return NodeRef(n.id, model)


def bind_script(text: str, catalog, config) -> tuple[LogicalPlan, int]:
    """Parse and bind a script; returns (plan, execute-target node id)."""
    return Binder(catalog, config).bind(parse_script(text))
