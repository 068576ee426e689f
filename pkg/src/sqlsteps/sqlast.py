"""SQL AST, parser, renderer, and canonical form for the convertible subset.

The parser accepts a single SELECT statement (optionally a set-operation
chain) in SQLite, MySQL, or PostgreSQL surface syntax. Constructs outside the
convertible subset (window functions, CTEs, correlated subqueries) are parse
errors or are rejected later by the converter, never silently mangled.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, replace
from typing import TYPE_CHECKING, Union

from .actions import Scalar, Star
from .errors import SqlSyntaxError

if TYPE_CHECKING:
    from .schema import DatabaseInput

DIALECTS = ("sqlite", "mysql", "postgresql")

KEYWORDS = {
    "select", "distinct", "from", "where", "group", "by", "having", "order",
    "limit", "offset", "as", "on", "join", "inner", "left", "right", "full",
    "outer", "cross", "union", "all", "intersect", "except", "and", "or",
    "not", "between", "in", "like", "is", "null", "asc", "desc", "cast",
}

AGG_FUNCS = {"count", "sum", "avg", "min", "max"}


# --- expression nodes --------------------------------------------------------

@dataclass(frozen=True)
class Column:
    table: str | None
    column: str

    def render(self) -> str:
        if self.table is None:
            return _ident(self.column)
        return f"{_ident(self.table)}.{_ident(self.column)}"


@dataclass(frozen=True)
class Func:
    name: str  # lowercase
    args: tuple["SqlExpr", ...]
    distinct: bool = False


@dataclass(frozen=True)
class CastExpr:
    arg: "SqlExpr"
    target_type: str


@dataclass(frozen=True)
class Binary:
    op: str  # + - * /
    left: "SqlExpr"
    right: "SqlExpr"


@dataclass(frozen=True)
class Subquery:
    core: "SelectCore"


SqlExpr = Union[Column, Scalar, Star, Func, CastExpr, Binary, Subquery]


# --- predicate nodes ----------------------------------------------------------

@dataclass(frozen=True)
class Comparison:
    op: str  # = != < <= > >=
    left: SqlExpr
    right: SqlExpr


@dataclass(frozen=True)
class Between:
    expr: SqlExpr
    lo: SqlExpr
    hi: SqlExpr
    negated: bool = False


@dataclass(frozen=True)
class InList:
    expr: SqlExpr
    items: tuple[SqlExpr, ...]
    negated: bool = False


@dataclass(frozen=True)
class LikePred:
    expr: SqlExpr
    pattern: SqlExpr
    negated: bool = False


@dataclass(frozen=True)
class IsNull:
    expr: SqlExpr
    negated: bool = False


@dataclass(frozen=True)
class And:
    items: tuple["Predicate", ...]


@dataclass(frozen=True)
class Or:
    items: tuple["Predicate", ...]


@dataclass(frozen=True)
class Not:
    item: "Predicate"


Predicate = Union[Comparison, Between, InList, LikePred, IsNull, And, Or, Not]


# --- statement nodes ----------------------------------------------------------

@dataclass(frozen=True)
class SelectItem:
    expr: SqlExpr
    alias: str | None = None


@dataclass(frozen=True)
class TableRef:
    name: str
    alias: str | None = None


@dataclass(frozen=True)
class Join:
    table: TableRef
    on: Predicate
    kind: str = "inner"  # inner | left | right | full | cross


@dataclass(frozen=True)
class OrderItem:
    expr: SqlExpr
    direction: str = "asc"


@dataclass(frozen=True)
class SelectCore:
    items: tuple[SelectItem, ...]
    distinct: bool = False
    tables: tuple[TableRef, ...] = ()
    joins: tuple[Join, ...] = ()
    where: Predicate | None = None
    group_by: tuple[SqlExpr, ...] = ()
    having: Predicate | None = None
    order_by: tuple[OrderItem, ...] = ()
    limit: int | None = None
    offset: int = 0


@dataclass(frozen=True)
class SetOp:
    op: str  # union | union all | intersect | except
    left: "SelectNode"
    right: SelectCore


SelectNode = Union[SelectCore, SetOp]


@dataclass
class SqlQuery:
    """Raw SQL text plus, when the text parses in the subset, its AST."""

    text: str
    ast: SelectNode | None
    dialect: str = "sqlite"
    parse_error: str | None = None

    @staticmethod
    def raw(text: str, dialect: str = "sqlite") -> "SqlQuery":
        """Wrap text without requiring it to parse (for execution-only paths)."""
        try:
            return parse_sql(text, dialect)
        except SqlSyntaxError as exc:
            return SqlQuery(text=text, ast=None, dialect=dialect, parse_error=str(exc))

    @property
    def has_order_by(self) -> bool:
        if self.ast is not None:
            node = self.ast
            while isinstance(node, SetOp):
                node = node.right
            return bool(node.order_by)
        return re.search(r"\border\s+by\b", self.text, re.IGNORECASE) is not None


# --- tokenizer -----------------------------------------------------------------

@dataclass
class _Tok:
    kind: str  # IDENT QIDENT KW NUMBER STRING OP PUNCT END
    text: str
    pos: int


_SQL_OPS = ("<>", "<=", ">=", "!=", "=", "<", ">", "||")


def _sql_tokens(text: str) -> list[_Tok]:
    toks: list[_Tok] = []
    i, n = 0, len(text)
    while i < n:
        ch = text[i]
        if ch.isspace():
            i += 1
            continue
        if ch == "-" and text.startswith("--", i):
            j = text.find("\n", i)
            i = n if j < 0 else j + 1
            continue
        if ch == "'":
            j = i + 1
            buf: list[str] = []
            while j < n:
                if text[j] == "'":
                    if j + 1 < n and text[j + 1] == "'":
                        buf.append("'")
                        j += 2
                        continue
                    break
                buf.append(text[j])
                j += 1
            else:
                raise SqlSyntaxError("unterminated string literal", i)
            if j >= n:
                raise SqlSyntaxError("unterminated string literal", i)
            toks.append(_Tok("STRING", "".join(buf), i))
            i = j + 1
            continue
        if ch in "\"`[":
            closer = {"\"": "\"", "`": "`", "[": "]"}[ch]
            j = text.find(closer, i + 1)
            if j < 0:
                raise SqlSyntaxError("unterminated quoted identifier", i)
            toks.append(_Tok("QIDENT", text[i + 1:j], i))
            i = j + 1
            continue
        if ch.isdigit() or (ch == "." and i + 1 < n and text[i + 1].isdigit()):
            m = re.match(r"\d*\.?\d+([eE][+-]?\d+)?", text[i:])
            assert m is not None
            toks.append(_Tok("NUMBER", m.group(), i))
            i += m.end()
            continue
        if ch.isalpha() or ch == "_":
            j = i
            while j < n and (text[j].isalnum() or text[j] == "_"):
                j += 1
            word = text[i:j]
            kind = "KW" if word.lower() in KEYWORDS else "IDENT"
            toks.append(_Tok(kind, word, i))
            i = j
            continue
        matched = False
        for op in _SQL_OPS:
            if text.startswith(op, i):
                toks.append(_Tok("OP", "!=" if op == "<>" else op, i))
                i += len(op)
                matched = True
                break
        if matched:
            continue
        if ch in "(),.*+-/;":
            toks.append(_Tok("PUNCT", ch, i))
            i += 1
            continue
        raise SqlSyntaxError(f"unexpected character {ch!r}", i)
    toks.append(_Tok("END", "", n))
    return toks


# --- parser ---------------------------------------------------------------------

class _SqlParser:
    def __init__(self, toks: list[_Tok]):
        self.toks = toks
        self.pos = 0

    def peek(self) -> _Tok:
        return self.toks[self.pos]

    def next(self) -> _Tok:
        tok = self.toks[self.pos]
        if tok.kind != "END":
            self.pos += 1
        return tok

    def at_kw(self, *words: str) -> bool:
        tok = self.peek()
        return tok.kind == "KW" and tok.text.lower() in words

    def eat_kw(self, *words: str) -> bool:
        if self.at_kw(*words):
            self.pos += 1
            return True
        return False

    def expect_kw(self, word: str) -> None:
        if not self.eat_kw(word):
            tok = self.peek()
            raise SqlSyntaxError(f"expected {word.upper()}, got {tok.text!r}", tok.pos)

    def at_punct(self, ch: str) -> bool:
        tok = self.peek()
        return tok.kind == "PUNCT" and tok.text == ch

    def eat_punct(self, ch: str) -> bool:
        if self.at_punct(ch):
            self.pos += 1
            return True
        return False

    def expect_punct(self, ch: str) -> None:
        if not self.eat_punct(ch):
            tok = self.peek()
            raise SqlSyntaxError(f"expected {ch!r}, got {tok.text!r}", tok.pos)

    def ident(self) -> str:
        tok = self.next()
        if tok.kind in ("IDENT", "QIDENT"):
            return tok.text
        raise SqlSyntaxError(f"expected identifier, got {tok.text!r}", tok.pos)

    # -- statements ---------------------------------------------------------

    def parse_query(self) -> SelectNode:
        node: SelectNode = self.parse_core()
        while True:
            if self.eat_kw("union"):
                op = "union all" if self.eat_kw("all") else "union"
            elif self.eat_kw("intersect"):
                op = "intersect"
            elif self.eat_kw("except"):
                op = "except"
            else:
                break
            node = SetOp(op, node, self.parse_core())
        return node

    def parse_core(self) -> SelectCore:
        self.expect_kw("select")
        distinct = bool(self.eat_kw("distinct"))
        self.eat_kw("all")
        items = [self.select_item()]
        while self.eat_punct(","):
            items.append(self.select_item())
        tables: list[TableRef] = []
        joins: list[Join] = []
        if self.eat_kw("from"):
            tables.append(self.table_ref())
            while True:
                if self.eat_punct(","):
                    tables.append(self.table_ref())
                    continue
                kind = self.join_kind()
                if kind is None:
                    break
                table = self.table_ref()
                self.expect_kw("on")
                joins.append(Join(table, self.predicate(), kind))
        where = self.predicate() if self.eat_kw("where") else None
        group_by: list[SqlExpr] = []
        if self.eat_kw("group"):
            self.expect_kw("by")
            group_by.append(self.expr())
            while self.eat_punct(","):
                group_by.append(self.expr())
        having = self.predicate() if self.eat_kw("having") else None
        order_by: list[OrderItem] = []
        if self.eat_kw("order"):
            self.expect_kw("by")
            order_by.append(self.order_item())
            while self.eat_punct(","):
                order_by.append(self.order_item())
        limit, offset = self.limit_clause()
        return SelectCore(tuple(items), distinct, tuple(tables), tuple(joins), where,
                          tuple(group_by), having, tuple(order_by), limit, offset)

    def join_kind(self) -> str | None:
        if self.eat_kw("join"):
            return "inner"
        if self.eat_kw("inner"):
            self.expect_kw("join")
            return "inner"
        for kind in ("left", "right", "full"):
            if self.eat_kw(kind):
                self.eat_kw("outer")
                self.expect_kw("join")
                return kind
        if self.eat_kw("cross"):
            self.expect_kw("join")
            return "cross"
        return None

    def select_item(self) -> SelectItem:
        expr = self.expr(allow_star=True)
        alias = None
        if self.eat_kw("as"):
            alias = self.ident()
        elif self.peek().kind in ("IDENT", "QIDENT"):
            alias = self.ident()
        return SelectItem(expr, alias)

    def table_ref(self) -> TableRef:
        name = self.ident()
        alias = None
        if self.eat_kw("as"):
            alias = self.ident()
        elif self.peek().kind in ("IDENT", "QIDENT"):
            alias = self.ident()
        return TableRef(name, alias)

    def order_item(self) -> OrderItem:
        expr = self.expr()
        direction = "asc"
        if self.eat_kw("desc"):
            direction = "desc"
        else:
            self.eat_kw("asc")
        return OrderItem(expr, direction)

    def limit_clause(self) -> tuple[int | None, int]:
        if not self.eat_kw("limit"):
            return None, 0
        first = self.int_literal()
        if self.eat_punct(","):  # MySQL LIMIT offset, count
            return self.int_literal(), first
        if self.eat_kw("offset"):
            return first, self.int_literal()
        return first, 0

    def int_literal(self) -> int:
        tok = self.next()
        if tok.kind != "NUMBER" or "." in tok.text:
            raise SqlSyntaxError(f"expected integer, got {tok.text!r}", tok.pos)
        return int(tok.text)

    # -- predicates -----------------------------------------------------------

    def predicate(self) -> Predicate:
        return self.or_pred()

    def or_pred(self) -> Predicate:
        items = [self.and_pred()]
        while self.eat_kw("or"):
            items.append(self.and_pred())
        return items[0] if len(items) == 1 else Or(tuple(items))

    def and_pred(self) -> Predicate:
        items = [self.not_pred()]
        while self.eat_kw("and"):
            items.append(self.not_pred())
        return items[0] if len(items) == 1 else And(tuple(items))

    def not_pred(self) -> Predicate:
        if self.eat_kw("not"):
            return Not(self.not_pred())
        return self.pred_atom()

    def pred_atom(self) -> Predicate:
        if self.at_punct("("):
            mark = self.pos
            self.eat_punct("(")
            if self.at_kw("select"):
                self.pos = mark  # scalar subquery comparison: re-parse as expression
            else:
                try:
                    inner = self.predicate()
                    self.expect_punct(")")
                    return inner
                except SqlSyntaxError:
                    self.pos = mark  # parenthesized expression, not a predicate
        left = self.expr()
        tok = self.peek()
        if tok.kind == "OP" and tok.text in ("=", "!=", "<", "<=", ">", ">="):
            self.next()
            return Comparison(tok.text, left, self.expr())
        negated = self.eat_kw("not")
        if self.eat_kw("between"):
            lo = self.expr()
            self.expect_kw("and")
            hi = self.expr()
            return Between(left, lo, hi, negated)
        if self.eat_kw("in"):
            self.expect_punct("(")
            if self.at_kw("select"):
                core = self.parse_core()
                self.expect_punct(")")
                return InList(left, (Subquery(core),), negated)
            items = [self.expr()]
            while self.eat_punct(","):
                items.append(self.expr())
            self.expect_punct(")")
            return InList(left, tuple(items), negated)
        if self.eat_kw("like"):
            return LikePred(left, self.expr(), negated)
        if negated:
            raise SqlSyntaxError("dangling NOT", tok.pos)
        if self.eat_kw("is"):
            neg = self.eat_kw("not")
            self.expect_kw("null")
            return IsNull(left, neg)
        raise SqlSyntaxError(f"expected a comparison, got {self.peek().text!r}",
                             self.peek().pos)

    # -- expressions -----------------------------------------------------------

    def expr(self, allow_star: bool = False) -> SqlExpr:
        return self.additive(allow_star)

    def additive(self, allow_star: bool = False) -> SqlExpr:
        left = self.multiplicative(allow_star)
        while True:
            tok = self.peek()
            if tok.kind == "PUNCT" and tok.text in "+-":
                self.next()
                left = Binary(tok.text, left, self.multiplicative())
            else:
                return left

    def multiplicative(self, allow_star: bool = False) -> SqlExpr:
        left = self.atom(allow_star)
        while True:
            tok = self.peek()
            if tok.kind == "PUNCT" and tok.text in "*/":
                self.next()
                left = Binary(tok.text, left, self.atom())
            else:
                return left

    def atom(self, allow_star: bool = False) -> SqlExpr:
        tok = self.peek()
        if tok.kind == "NUMBER":
            self.next()
            return _number(tok.text)
        if tok.kind == "STRING":
            self.next()
            return Scalar.of(tok.text)
        if tok.kind == "PUNCT" and tok.text == "*":
            if not allow_star:
                raise SqlSyntaxError("unexpected *", tok.pos)
            self.next()
            return Star()
        if tok.kind == "PUNCT" and tok.text == "-":
            self.next()
            inner = self.atom()
            if isinstance(inner, Scalar) and inner.kind in ("int", "real"):
                return Scalar(-inner.value, inner.kind)  # type: ignore[operator]
            return Binary("-", Scalar(0, "int"), inner)
        if tok.kind == "PUNCT" and tok.text == "(":
            self.next()
            if self.at_kw("select"):
                core = self.parse_core()
                self.expect_punct(")")
                return Subquery(core)
            inner = self.expr()
            self.expect_punct(")")
            return inner
        if tok.kind == "KW" and tok.text.lower() == "cast":
            self.next()
            self.expect_punct("(")
            arg = self.expr()
            self.expect_kw("as")
            target = self.type_name()
            self.expect_punct(")")
            return CastExpr(arg, target)
        if tok.kind == "KW" and tok.text.lower() == "null":
            raise SqlSyntaxError("bare NULL literal outside IS NULL is unsupported", tok.pos)
        if tok.kind in ("IDENT", "QIDENT"):
            name = self.ident()
            if self.at_punct("("):
                return self.func_call(name, tok.pos)
            if self.eat_punct("."):
                return Column(name, self.ident())
            return Column(None, name)
        raise SqlSyntaxError(f"unexpected token {tok.text!r}", tok.pos)

    def type_name(self) -> str:
        name = self.ident()
        if self.eat_punct("("):  # e.g. VARCHAR(20)
            size = [str(self.int_literal())]
            while self.eat_punct(","):
                size.append(str(self.int_literal()))
            self.expect_punct(")")
            name += f"({','.join(size)})"
        return name

    def func_call(self, name: str, pos: int) -> SqlExpr:
        self.expect_punct("(")
        lowered = name.lower()
        distinct = bool(self.eat_kw("distinct"))
        if self.at_punct(")"):
            raise SqlSyntaxError(f"function {name} requires arguments", pos)
        args = [self.expr(allow_star=(lowered == "count"))]
        while self.eat_punct(","):
            args.append(self.expr())
        self.expect_punct(")")
        after = self.peek()
        if after.kind == "IDENT" and after.text.lower() == "over":
            raise SqlSyntaxError("window functions are unsupported", pos)
        return Func(lowered, tuple(args), distinct)


def parse_sql(text: str, dialect: str = "sqlite") -> SqlQuery:
    """Parse one SELECT statement; raises SqlSyntaxError otherwise."""
    if dialect not in DIALECTS:
        raise ValueError(f"unknown dialect {dialect!r}")
    if not text.strip():
        raise SqlSyntaxError("empty SQL text")
    parser = _SqlParser(_sql_tokens(text))
    if not parser.at_kw("select"):
        raise SqlSyntaxError("only SELECT statements are supported", parser.peek().pos)
    ast = parser.parse_query()
    parser.eat_punct(";")
    tok = parser.peek()
    if tok.kind != "END":
        raise SqlSyntaxError(f"trailing input {tok.text!r}", tok.pos)
    return SqlQuery(text=text, ast=ast, dialect=dialect)


def parse_predicate(text: str) -> Predicate:
    """Parse a standalone boolean predicate (used for compound filter texts)."""
    parser = _SqlParser(_sql_tokens(text))
    pred = parser.predicate()
    tok = parser.peek()
    if tok.kind != "END":
        raise SqlSyntaxError(f"trailing input {tok.text!r}", tok.pos)
    return pred


def canonical_predicate(pred: Predicate, d: "DatabaseInput | None" = None) -> str:
    """Canonical text of one predicate (parenthesized if not already atomic)."""
    text = _canon_pred(pred, d)
    return text if text.startswith("(") else f"({text})"


def _number(text: str) -> Scalar:
    if "." in text or "e" in text.lower():
        return Scalar(float(text), "real")
    return Scalar(int(text), "int")


def _ident(name: str) -> str:
    return f'"{name}"' if " " in name else name


# --- rendering --------------------------------------------------------------------

def render_sql(node: SelectNode, dialect: str = "sqlite") -> str:
    """Render an AST back to SQL under a dialect (identifier quoting differs)."""
    quote = "`" if dialect == "mysql" else '"'
    return _render_node(node, quote)


def _render_node(node: SelectNode, quote: str) -> str:
    if isinstance(node, SetOp):
        return (f"{_render_node(node.left, quote)} {node.op.upper()} "
                f"{_render_core(node.right, quote)}")
    return _render_core(node, quote)


def _render_core(core: SelectCore, quote: str) -> str:
    parts = ["SELECT"]
    if core.distinct:
        parts.append("DISTINCT")
    parts.append(", ".join(_render_item(i, quote) for i in core.items))
    if core.tables:
        refs = [_render_table(t, quote) for t in core.tables]
        parts.append("FROM " + ", ".join(refs))
        for join in core.joins:
            kw = {"inner": "INNER JOIN", "left": "LEFT JOIN", "right": "RIGHT JOIN",
                  "full": "FULL JOIN", "cross": "CROSS JOIN"}[join.kind]
            parts.append(f"{kw} {_render_table(join.table, quote)} ON "
                         f"{render_predicate(join.on, quote)}")
    if core.where is not None:
        parts.append("WHERE " + render_predicate(core.where, quote))
    if core.group_by:
        parts.append("GROUP BY " + ", ".join(render_expr(e, quote) for e in core.group_by))
    if core.having is not None:
        parts.append("HAVING " + render_predicate(core.having, quote))
    if core.order_by:
        rendered = [f"{render_expr(o.expr, quote)} {o.direction.upper()}"
                    for o in core.order_by]
        parts.append("ORDER BY " + ", ".join(rendered))
    if core.limit is not None:
        parts.append(f"LIMIT {core.limit}")
        if core.offset:
            parts.append(f"OFFSET {core.offset}")
    return " ".join(parts)


def _render_item(item: SelectItem, quote: str) -> str:
    text = render_expr(item.expr, quote)
    if item.alias:
        return f"{text} AS {_q(item.alias, quote)}"
    return text


def _render_table(ref: TableRef, quote: str) -> str:
    text = _q(ref.name, quote)
    if ref.alias:
        text += f" AS {_q(ref.alias, quote)}"
    return text


def _q(name: str, quote: str) -> str:
    if name and " " not in name and re.match(r"[A-Za-z_][A-Za-z0-9_]*$", name) \
            and name.lower() not in KEYWORDS:
        return name
    return f"{quote}{name}{quote}"


def render_expr(expr: SqlExpr, quote: str = '"') -> str:
    if isinstance(expr, Column):
        if expr.table is None:
            return _q(expr.column, quote)
        return f"{_q(expr.table, quote)}.{_q(expr.column, quote)}"
    if isinstance(expr, Scalar):
        if expr.kind in ("int", "real"):
            return repr(expr.value)
        return "'" + str(expr.value).replace("'", "''") + "'"
    if isinstance(expr, Star):
        return "*"
    if isinstance(expr, Func):
        inner = ", ".join(render_expr(a, quote) for a in expr.args)
        if expr.distinct:
            inner = "DISTINCT " + inner
        return f"{expr.name.upper()}({inner})"
    if isinstance(expr, CastExpr):
        return f"CAST({render_expr(expr.arg, quote)} AS {expr.target_type.upper()})"
    if isinstance(expr, Binary):
        return f"({render_expr(expr.left, quote)} {expr.op} {render_expr(expr.right, quote)})"
    if isinstance(expr, Subquery):
        return f"({_render_core(expr.core, quote)})"
    raise TypeError(f"not a SQL expression: {expr!r}")


def render_predicate(pred: Predicate, quote: str = '"') -> str:
    if isinstance(pred, Comparison):
        return f"{render_expr(pred.left, quote)} {pred.op} {render_expr(pred.right, quote)}"
    if isinstance(pred, Between):
        kw = "NOT BETWEEN" if pred.negated else "BETWEEN"
        return (f"{render_expr(pred.expr, quote)} {kw} {render_expr(pred.lo, quote)} "
                f"AND {render_expr(pred.hi, quote)}")
    if isinstance(pred, InList):
        kw = "NOT IN" if pred.negated else "IN"
        items = ", ".join(render_expr(i, quote) for i in pred.items)
        return f"{render_expr(pred.expr, quote)} {kw} ({items})"
    if isinstance(pred, LikePred):
        kw = "NOT LIKE" if pred.negated else "LIKE"
        return f"{render_expr(pred.expr, quote)} {kw} {render_expr(pred.pattern, quote)}"
    if isinstance(pred, IsNull):
        kw = "IS NOT NULL" if pred.negated else "IS NULL"
        return f"{render_expr(pred.expr, quote)} {kw}"
    if isinstance(pred, And):
        return " AND ".join(_wrap(p, quote) for p in pred.items)
    if isinstance(pred, Or):
        return "(" + " OR ".join(_wrap(p, quote) for p in pred.items) + ")"
    if isinstance(pred, Not):
        return f"NOT {_wrap(pred.item, quote)}"
    raise TypeError(f"not a predicate: {pred!r}")


def _wrap(pred: Predicate, quote: str) -> str:
    text = render_predicate(pred, quote)
    if isinstance(pred, (And,)):
        return f"({text})"
    return text


# --- canonical form ------------------------------------------------------------

def canonicalize(query: SqlQuery, d: "DatabaseInput | None" = None) -> str:
    """Dialect-independent canonical text used as the round-trip equivalence.

    Uppercased keywords, aliases resolved away, columns qualified where
    resolvable, AND/OR operands sorted, inner-join ON conditions folded into
    the WHERE conjunct set, COUNT(*) rewritten to its deterministic column
    form when schema information permits.
    """
    if query.ast is None:
        raise SqlSyntaxError(query.parse_error or "query has no AST")
    return _canon_node(query.ast, d)


def _canon_node(node: SelectNode, d: "DatabaseInput | None") -> str:
    if isinstance(node, SetOp):
        return f"{_canon_node(node.left, d)} {node.op.upper()} {_canon_core(node.right, d)}"
    return _canon_core(node, d)


def _canon_core(core: SelectCore, d: "DatabaseInput | None") -> str:
    core = resolve_aliases(core)
    core = qualify_columns(core, d)
    core = normalize_count_star(core, d)
    core = expand_select_star(core, d)
    conjuncts = list(flatten_and(core.where)) if core.where is not None else []
    outer_joins = []
    for join in core.joins:
        if join.kind == "inner":
            conjuncts.extend(flatten_and(join.on))
        else:
            outer_joins.append(join)
    tables = sorted(t.name for t in core.tables) + sorted(
        j.table.name for j in core.joins if j.kind == "inner")
    parts = ["SELECT"]
    if core.distinct:
        parts.append("DISTINCT")
    parts.append(", ".join(_canon_expr(i.expr, d) for i in core.items))
    if tables or outer_joins:
        parts.append("FROM " + ", ".join(sorted(set(tables))))
        for join in outer_joins:
            parts.append(f"{join.kind.upper()} JOIN {join.table.name} ON "
                         f"{_canon_pred(join.on, d)}")
    if conjuncts:
        rendered = sorted(_canon_pred(p, d) for p in conjuncts)
        parts.append("WHERE " + " AND ".join(rendered))
    if core.group_by:
        parts.append("GROUP BY " + ", ".join(_canon_expr(e, d) for e in core.group_by))
    if core.having is not None:
        havings = sorted(_canon_pred(p, d) for p in flatten_and(core.having))
        parts.append("HAVING " + " AND ".join(havings))
    if core.order_by:
        rendered = [f"{_canon_expr(o.expr, d)} {o.direction.upper()}" for o in core.order_by]
        parts.append("ORDER BY " + ", ".join(rendered))
    if core.limit is not None:
        parts.append(f"LIMIT {core.limit}")
        if core.offset:
            parts.append(f"OFFSET {core.offset}")
    return " ".join(parts)


def _canon_expr(expr: SqlExpr, d: "DatabaseInput | None") -> str:
    if isinstance(expr, Subquery):
        return f"({_canon_core(expr.core, d)})"
    if isinstance(expr, Func):
        inner = ", ".join(_canon_expr(a, d) for a in expr.args)
        if expr.distinct:
            inner = "DISTINCT " + inner
        return f"{expr.name.upper()}({inner})"
    if isinstance(expr, CastExpr):
        return f"CAST({_canon_expr(expr.arg, d)} AS {expr.target_type.upper()})"
    if isinstance(expr, Binary):
        return f"({_canon_expr(expr.left, d)} {expr.op} {_canon_expr(expr.right, d)})"
    return render_expr(expr, '"')


def _canon_pred(pred: Predicate, d: "DatabaseInput | None") -> str:
    pred = _normalize_comparison(pred)
    if isinstance(pred, Comparison):
        left, right = pred.left, pred.right
        if pred.op in ("=", "!=") and isinstance(left, Column) and isinstance(right, Column) \
                and left.render() > right.render():
            left, right = right, left
        return f"{_canon_expr(left, d)} {pred.op} {_canon_expr(right, d)}"
    if isinstance(pred, Between):
        kw = "NOT BETWEEN" if pred.negated else "BETWEEN"
        return (f"{_canon_expr(pred.expr, d)} {kw} {_canon_expr(pred.lo, d)} AND "
                f"{_canon_expr(pred.hi, d)}")
    if isinstance(pred, InList):
        kw = "NOT IN" if pred.negated else "IN"
        subquery = len(pred.items) == 1 and isinstance(pred.items[0], Subquery)
        items = (_canon_expr(pred.items[0], d) if subquery
                 else ", ".join(sorted(_canon_expr(i, d) for i in pred.items)))
        wrapped = items if subquery else f"({items})"
        return f"{_canon_expr(pred.expr, d)} {kw} {wrapped}"
    if isinstance(pred, LikePred):
        kw = "NOT LIKE" if pred.negated else "LIKE"
        return f"{_canon_expr(pred.expr, d)} {kw} {_canon_expr(pred.pattern, d)}"
    if isinstance(pred, IsNull):
        kw = "IS NOT NULL" if pred.negated else "IS NULL"
        return f"{_canon_expr(pred.expr, d)} {kw}"
    if isinstance(pred, And):
        return "(" + " AND ".join(sorted(_canon_pred(p, d) for p in pred.items)) + ")"
    if isinstance(pred, Or):
        return "(" + " OR ".join(sorted(_canon_pred(p, d) for p in pred.items)) + ")"
    if isinstance(pred, Not):
        return f"NOT ({_canon_pred(pred.item, d)})"
    raise TypeError(f"not a predicate: {pred!r}")


_MIRROR = {"=": "=", "!=": "!=", "<": ">", "<=": ">=", ">": "<", ">=": "<="}


def _normalize_comparison(pred: Predicate) -> Predicate:
    if isinstance(pred, Comparison) and isinstance(pred.left, Scalar) \
            and not isinstance(pred.right, Scalar):
        return Comparison(_MIRROR[pred.op], pred.right, pred.left)
    return pred


def flatten_and(pred: Predicate) -> list[Predicate]:
    if isinstance(pred, And):
        out: list[Predicate] = []
        for item in pred.items:
            out.extend(flatten_and(item))
        return out
    return [pred]


# --- structural rewrites (shared with the converter) -----------------------------

def resolve_aliases(core: SelectCore) -> SelectCore:
    """Substitute table aliases and select-item aliases, then drop them."""
    table_alias = {t.alias: t.name for t in core.tables if t.alias}
    table_alias.update({j.table.alias: j.table.name for j in core.joins if j.table.alias})
    item_alias = {i.alias: i.expr for i in core.items if i.alias}

    def fix_expr(expr: SqlExpr, use_item_aliases: bool) -> SqlExpr:
        if isinstance(expr, Column):
            if expr.table is not None and expr.table in table_alias:
                return Column(table_alias[expr.table], expr.column)
            if (use_item_aliases and expr.table is None and expr.column in item_alias):
                return fix_expr(item_alias[expr.column], False)
            return expr
        if isinstance(expr, Func):
            return Func(expr.name, tuple(fix_expr(a, use_item_aliases) for a in expr.args),
                        expr.distinct)
        if isinstance(expr, CastExpr):
            return CastExpr(fix_expr(expr.arg, use_item_aliases), expr.target_type)
        if isinstance(expr, Binary):
            return Binary(expr.op, fix_expr(expr.left, use_item_aliases),
                          fix_expr(expr.right, use_item_aliases))
        if isinstance(expr, Subquery):
            return Subquery(resolve_aliases(expr.core))
        return expr

    def fix_pred(pred: Predicate, use_item_aliases: bool) -> Predicate:
        return _map_pred(pred, lambda e: fix_expr(e, use_item_aliases))

    return SelectCore(
        items=tuple(SelectItem(fix_expr(i.expr, False), None) for i in core.items),
        distinct=core.distinct,
        tables=tuple(TableRef(t.name, None) for t in core.tables),
        joins=tuple(Join(TableRef(j.table.name, None), fix_pred(j.on, False), j.kind)
                    for j in core.joins),
        where=fix_pred(core.where, False) if core.where is not None else None,
        group_by=tuple(fix_expr(e, True) for e in core.group_by),
        having=fix_pred(core.having, True) if core.having is not None else None,
        order_by=tuple(OrderItem(fix_expr(o.expr, True), o.direction) for o in core.order_by),
        limit=core.limit,
        offset=core.offset,
    )


def qualify_columns(core: SelectCore, d: "DatabaseInput | None") -> SelectCore:
    """Attach table qualifiers to bare columns where uniquely resolvable."""
    tables = [t.name for t in core.tables] + [j.table.name for j in core.joins]

    def owner(column: str) -> str | None:
        if len(tables) == 1:
            return tables[0]
        if d is not None:
            owners = [t for t in tables if d.has_column(t, column)]
            if len(owners) == 1:
                return owners[0]
        return None

    def fix(expr: SqlExpr) -> SqlExpr:
        if isinstance(expr, Column) and expr.table is None:
            table = owner(expr.column)
            return Column(table, expr.column) if table else expr
        if isinstance(expr, Func):
            return Func(expr.name, tuple(fix(a) for a in expr.args), expr.distinct)
        if isinstance(expr, CastExpr):
            return CastExpr(fix(expr.arg), expr.target_type)
        if isinstance(expr, Binary):
            return Binary(expr.op, fix(expr.left), fix(expr.right))
        if isinstance(expr, Subquery):
            return Subquery(qualify_columns(expr.core, d))
        return expr

    return _map_core(core, fix)


def normalize_count_star(core: SelectCore, d: "DatabaseInput | None") -> SelectCore:
    """Rewrite COUNT(*) to COUNT(column) using the deterministic column rule.

    The target is the first group-by column when grouping, else the primary
    key of the sole source table; COUNT(*) is kept verbatim when neither
    applies (it is still a legal trajectory expression).
    """
    target = count_star_target(core, d)
    if target is None:
        return core

    def fix(expr: SqlExpr) -> SqlExpr:
        if isinstance(expr, Func) and expr.name == "count" and len(expr.args) == 1 \
                and isinstance(expr.args[0], Star) and not expr.distinct:
            return Func("count", (target,), False)
        if isinstance(expr, Func):
            return Func(expr.name, tuple(fix(a) for a in expr.args), expr.distinct)
        if isinstance(expr, CastExpr):
            return CastExpr(fix(expr.arg), expr.target_type)
        if isinstance(expr, Binary):
            return Binary(expr.op, fix(expr.left), fix(expr.right))
        if isinstance(expr, Subquery):
            return Subquery(normalize_count_star(expr.core, d))
        return expr

    return _map_core(core, fix)


def expand_select_star(core: SelectCore, d: "DatabaseInput | None") -> SelectCore:
    """Expand a bare `SELECT *` item to the source tables' declared columns.

    Requires schema information; without it (or for unknown tables) the star
    is kept verbatim.
    """
    if d is None or not any(isinstance(i.expr, Star) for i in core.items):
        return core
    tables = [t.name for t in core.tables] + [j.table.name for j in core.joins]
    if not tables or any(not d.has_table(t) for t in tables):
        return core
    items: list[SelectItem] = []
    for item in core.items:
        if isinstance(item.expr, Star):
            for table in tables:
                tbl = d.table(table)
                assert tbl is not None
                items.extend(SelectItem(Column(table, c.name)) for c in tbl.columns)
        else:
            items.append(item)
    return replace(core, items=tuple(items))


def count_star_target(core: SelectCore, d: "DatabaseInput | None") -> Column | None:
    for expr in core.group_by:
        if isinstance(expr, Column):
            return expr
    if d is not None:
        tables = sorted({t.name for t in core.tables}
                        | {j.table.name for j in core.joins})
        if len(tables) == 1:
            pk = d.primary_key(tables[0])
            if pk is not None:
                return Column(tables[0], pk)
    return None


def _map_core(core: SelectCore, fix) -> SelectCore:
    def fix_pred(pred: Predicate) -> Predicate:
        return _map_pred(pred, fix)

    return replace(
        core,
        items=tuple(SelectItem(fix(i.expr), i.alias) for i in core.items),
        joins=tuple(Join(j.table, fix_pred(j.on), j.kind) for j in core.joins),
        where=fix_pred(core.where) if core.where is not None else None,
        group_by=tuple(fix(e) for e in core.group_by),
        having=fix_pred(core.having) if core.having is not None else None,
        order_by=tuple(OrderItem(fix(o.expr), o.direction) for o in core.order_by),
    )


def _map_pred(pred: Predicate, fix) -> Predicate:
    if isinstance(pred, Comparison):
        return Comparison(pred.op, fix(pred.left), fix(pred.right))
    if isinstance(pred, Between):
        return Between(fix(pred.expr), fix(pred.lo), fix(pred.hi), pred.negated)
    if isinstance(pred, InList):
        return InList(fix(pred.expr), tuple(fix(i) for i in pred.items), pred.negated)
    if isinstance(pred, LikePred):
        return LikePred(fix(pred.expr), fix(pred.pattern), pred.negated)
    if isinstance(pred, IsNull):
        return IsNull(fix(pred.expr), pred.negated)
    if isinstance(pred, And):
        return And(tuple(_map_pred(p, fix) for p in pred.items))
    if isinstance(pred, Or):
        return Or(tuple(_map_pred(p, fix) for p in pred.items))
    if isinstance(pred, Not):
        return Not(_map_pred(pred.item, fix))
    raise TypeError(f"not a predicate: {pred!r}")
