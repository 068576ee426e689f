"""Parsing, canonical rendering, and validation of action trajectories.

Grammar, one step per line::

    step   := binding "=" receiver ("." call)+
    call   := name "(" args? ")"
    args   := arg ("," arg)*
    arg    := [key "="] value

Action names are case-insensitive on parse and lowercase in canonical form;
identifiers keep their case. Canonical text uses named keys exactly where the
vocabulary defines them (where/having take `element`/`filter`, orderby takes
`by`), positional elements elsewhere, single spaces around `=`, and LF line
endings.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

from .actions import (
    ACTION_SPACE,
    AGGREGATE_KINDS,
    BINDING_RE,
    COMPOUND,
    Action,
    AggStep,
    Aggregate,
    Arithmetic,
    BindingRef,
    Cast,
    CastStep,
    Combine,
    Distinct,
    Expr,
    FilterCondition,
    GroupBy,
    Having,
    Limit,
    OrderBy,
    QualifiedColumn,
    Scalar,
    Select,
    Star,
    Substr,
    SubstrStep,
    Trajectory,
    TrajectoryStep,
    Where,
    action_exprs,
    contains_aggregate,
)
from .errors import TrajectorySyntaxError, UnknownActionError
from .schema import DatabaseInput  # noqa: F401  (re-exported for validate callers)

_DF_REF_RE = re.compile(r"df\d+$|res$")
_NUMBER_RE = re.compile(r"-?\d+(\.\d+)?([eE][+-]?\d+)?")
_DATE_TOKEN_RE = re.compile(r"\d{4}-\d{2}-\d{2}$")


# --- tokenizer ---------------------------------------------------------------

@dataclass
class _Token:
    kind: str  # IDENT NUMBER STRING SYM
    text: str
    col: int


def _tokenize_line(line: str, lineno: int) -> list[_Token]:
    tokens: list[_Token] = []
    i, n = 0, len(line)
    while i < n:
        ch = line[i]
        if ch.isspace():
            i += 1
            continue
        col = i + 1
        if ch == "'":
            text, i = _scan_string(line, i, lineno)
            tokens.append(_Token("STRING", text, col))
        elif ch == "`":
            end = line.find("`", i + 1)
            if end < 0:
                raise TrajectorySyntaxError("unterminated backtick identifier", lineno, col)
            tokens.append(_Token("IDENT", line[i + 1:end], col))
            i = end + 1
        elif ch.isdigit() or (ch == "-" and i + 1 < n and line[i + 1].isdigit()
                              and _numeric_context(tokens)):
            m = _NUMBER_RE.match(line, i)
            assert m is not None
            tokens.append(_Token("NUMBER", m.group(), col))
            i = m.end()
        elif ch.isalpha() or ch == "_":
            j = i
            while j < n and (line[j].isalnum() or line[j] == "_"):
                j += 1
            tokens.append(_Token("IDENT", line[i:j], col))
            i = j
        elif ch in "=.,()*+-/":
            tokens.append(_Token("SYM", ch, col))
            i += 1
        else:
            raise TrajectorySyntaxError(f"unexpected character {ch!r}", lineno, col)
    return tokens


def _numeric_context(tokens: list[_Token]) -> bool:
    """A leading '-' starts a number only where an operand is expected."""
    if not tokens:
        return True
    last = tokens[-1]
    return last.kind == "SYM" and last.text in "=,(+-*/"


def _scan_string(line: str, start: int, lineno: int) -> tuple[str, int]:
    """Scan a single-quoted string with '' doubling; returns (content, next index)."""
    out: list[str] = []
    i = start + 1
    n = len(line)
    while i < n:
        if line[i] != "'":
            out.append(line[i])
            i += 1
        elif i + 1 < n and line[i + 1] == "'":
            out.append("'")
            i += 2
        else:
            return "".join(out), i + 1
    raise TrajectorySyntaxError("unterminated string literal", lineno, start + 1)


# --- parser ------------------------------------------------------------------

class _LineParser:
    def __init__(self, tokens: list[_Token], lineno: int):
        self.tokens = tokens
        self.lineno = lineno
        self.pos = 0

    def peek(self) -> _Token | None:
        return self.tokens[self.pos] if self.pos < len(self.tokens) else None

    def next(self) -> _Token:
        tok = self.peek()
        if tok is None:
            raise TrajectorySyntaxError("unexpected end of line", self.lineno,
                                        self.tokens[-1].col if self.tokens else 1)
        self.pos += 1
        return tok

    def expect(self, kind: str, text: str | None = None) -> _Token:
        tok = self.next()
        if tok.kind != kind or (text is not None and tok.text != text):
            want = text if text is not None else kind
            raise TrajectorySyntaxError(f"unexpected token {tok.text!r}", self.lineno,
                                        tok.col, expected=str(want))
        return tok

    def at_sym(self, text: str) -> bool:
        tok = self.peek()
        return tok is not None and tok.kind == "SYM" and tok.text == text

    def eat_sym(self, text: str) -> bool:
        if self.at_sym(text):
            self.pos += 1
            return True
        return False

    # -- step ---------------------------------------------------------------

    def parse_step(self) -> TrajectoryStep:
        binding = self.expect("IDENT")
        if not BINDING_RE.match(binding.text) or binding.text == "df":
            raise TrajectorySyntaxError(f"invalid binding {binding.text!r}", self.lineno,
                                        binding.col, expected="df<N> or res")
        self.expect("SYM", "=")
        receiver = self.expect("IDENT")
        if not BINDING_RE.match(receiver.text) or receiver.text == "res":
            raise TrajectorySyntaxError(f"invalid receiver {receiver.text!r}", self.lineno,
                                        receiver.col, expected="df or df<N>")
        chain: list[Action] = []
        while self.eat_sym("."):
            chain.append(self.parse_call())
        if not chain:
            tok = self.peek()
            raise TrajectorySyntaxError("step has no actions", self.lineno,
                                        tok.col if tok else receiver.col, expected=".action(...)")
        if self.peek() is not None:
            tok = self.peek()
            assert tok is not None
            raise TrajectorySyntaxError(f"trailing input {tok.text!r}", self.lineno, tok.col)
        return TrajectoryStep(binding.text, receiver.text, tuple(chain))

    # -- calls ---------------------------------------------------------------

    def parse_call(self) -> Action:
        name_tok = self.expect("IDENT")
        name = ACTION_SPACE.resolve(name_tok.text)
        if name is None:
            raise UnknownActionError(name_tok.text, self.lineno)
        self.expect("SYM", "(")
        action = self._dispatch(name, name_tok)
        self.expect("SYM", ")")
        return action

    def _dispatch(self, name: str, name_tok: _Token) -> Action:
        if name == "select":
            return Select(tuple(self._element_list(allow_star=True)))
        if name == "groupby":
            return GroupBy(tuple(self._element_list(allow_star=False)))
        if name == "where":
            element, cond = self._element_and_filter()
            return Where(element, cond)
        if name == "having":
            element, cond = self._element_and_filter()
            return Having(element, cond)
        if name == "orderby":
            return self._orderby()
        if name == "limit":
            return self._limit()
        if name == "distinct":
            self._skip_key({"element"})
            return Distinct(self.parse_expr())
        if name in ("union", "intersect", "except"):
            tok = self.expect("IDENT")
            if not _DF_REF_RE.match(tok.text):
                raise TrajectorySyntaxError(f"set operand must be a binding, got {tok.text!r}",
                                            self.lineno, tok.col)
            return Combine(name, BindingRef(tok.text))
        if name in AGGREGATE_KINDS:
            self._skip_key({"element"})
            arg = self.parse_expr(allow_star=(name == "count"))
            if contains_aggregate(arg):
                raise TrajectorySyntaxError("aggregates cannot be nested", self.lineno,
                                            name_tok.col)
            return AggStep(Aggregate(name, arg))
        if name == "cast":
            self._skip_key({"element"})
            arg = self.parse_expr()
            self.expect("SYM", ",")
            self._skip_key({"type"})
            target = self.expect("IDENT")
            return CastStep(Cast(arg, target.text))
        if name == "substr":
            self._skip_key({"element"})
            arg = self.parse_expr()
            self.expect("SYM", ",")
            piv = self._int_arg()
            length = None
            if self.eat_sym(","):
                length = self._int_arg()
            return SubstrStep(Substr(arg, piv, length))
        raise UnknownActionError(name, self.lineno)  # unreachable

    def _skip_key(self, allowed: set[str]) -> None:
        """Consume an optional `key =` prefix (named-argument form)."""
        tok = self.peek()
        nxt = self.tokens[self.pos + 1] if self.pos + 1 < len(self.tokens) else None
        if (tok is not None and tok.kind == "IDENT" and tok.text.lower() in allowed
                and nxt is not None and nxt.kind == "SYM" and nxt.text == "="):
            self.pos += 2

    def _element_list(self, allow_star: bool) -> list[Expr]:
        self._skip_key({"element", "elements"})
        items = [self.parse_expr(allow_star=allow_star)]
        while self.eat_sym(","):
            self._skip_key({"element", "elements"})
            items.append(self.parse_expr(allow_star=allow_star))
        return items

    def _element_and_filter(self) -> tuple[Expr, FilterCondition]:
        self._skip_key({"element"})
        element = self.parse_expr()
        self.expect("SYM", ",")
        self._skip_key({"filter"})
        cond = self._filter_value()
        return element, cond

    def _orderby(self) -> OrderBy:
        self._skip_key({"by", "element"})
        by = self.parse_expr()
        order = "asc"
        if self.eat_sym(","):
            self._skip_key({"order"})
            tok = self.expect("IDENT")
            if tok.text.lower() not in ("asc", "desc"):
                raise TrajectorySyntaxError(f"bad sort order {tok.text!r}", self.lineno,
                                            tok.col, expected="asc or desc")
            order = tok.text.lower()
        return OrderBy(by, order)

    def _limit(self) -> Limit:
        first = self._int_arg()
        if self.eat_sym(","):
            second = self._int_arg()
            return Limit(count=second, offset=first)
        return Limit(count=first)

    def _int_arg(self) -> int:
        tok = self.expect("NUMBER")
        if "." in tok.text:
            raise TrajectorySyntaxError(f"expected integer, got {tok.text!r}", self.lineno, tok.col)
        return int(tok.text)

    # -- filter mini-grammar ---------------------------------------------------

    def _filter_value(self) -> FilterCondition:
        tok = self.next()
        if tok.kind == "NUMBER":
            return FilterCondition("=", (_scalar_from_number(tok.text),))
        if tok.kind == "IDENT" and _DF_REF_RE.match(tok.text):
            return FilterCondition("=", (BindingRef(tok.text),))
        if tok.kind == "STRING":
            return parse_filter_text(tok.text, self.lineno, tok.col)
        raise TrajectorySyntaxError(f"bad filter value {tok.text!r}", self.lineno, tok.col,
                                    expected="number, binding, or quoted condition")

    # -- expressions -------------------------------------------------------------

    def parse_expr(self, allow_star: bool = False) -> Expr:
        expr = self._additive(allow_star)
        return expr

    def _additive(self, allow_star: bool) -> Expr:
        left = self._multiplicative(allow_star)
        while True:
            tok = self.peek()
            if tok is not None and tok.kind == "SYM" and tok.text in "+-":
                self.pos += 1
                right = self._multiplicative(False)
                left = Arithmetic(tok.text, left, right)
            else:
                return left

    def _multiplicative(self, allow_star: bool) -> Expr:
        left = self._atom(allow_star)
        while True:
            tok = self.peek()
            if tok is not None and tok.kind == "SYM" and tok.text in "*/":
                self.pos += 1
                right = self._atom(False)
                left = Arithmetic(tok.text, left, right)
            else:
                return left

    def _atom(self, allow_star: bool) -> Expr:
        tok = self.next()
        if tok.kind == "NUMBER":
            return _scalar_from_number(tok.text)
        if tok.kind == "STRING":
            return Scalar.of(tok.text)
        if tok.kind == "SYM" and tok.text == "*":
            if not allow_star:
                raise TrajectorySyntaxError("`*` only allowed in count() or select()",
                                            self.lineno, tok.col)
            return Star()
        if tok.kind == "SYM" and tok.text == "(":
            inner = self.parse_expr()
            self.expect("SYM", ")")
            return inner
        if tok.kind == "SYM" and tok.text == "-":
            num = self.expect("NUMBER")
            return _scalar_from_number("-" + num.text)
        if tok.kind == "IDENT":
            return self._ident_expr(tok)
        raise TrajectorySyntaxError(f"unexpected token {tok.text!r}", self.lineno, tok.col,
                                    expected="expression")

    def _ident_expr(self, tok: _Token) -> Expr:
        lowered = tok.text.lower()
        lowered = ACTION_SPACE.aliases.get(lowered, lowered)
        if self.at_sym("("):
            if lowered in AGGREGATE_KINDS:
                self.expect("SYM", "(")
                arg = self.parse_expr(allow_star=(lowered == "count"))
                self.expect("SYM", ")")
                if contains_aggregate(arg):
                    raise TrajectorySyntaxError("aggregates cannot be nested",
                                                self.lineno, tok.col)
                return Aggregate(lowered, arg)
            if lowered == "cast":
                self.expect("SYM", "(")
                arg = self.parse_expr()
                self.expect("SYM", ",")
                self._skip_key({"type"})
                target = self.expect("IDENT")
                self.expect("SYM", ")")
                return Cast(arg, target.text)
            if lowered == "substr":
                self.expect("SYM", "(")
                arg = self.parse_expr()
                self.expect("SYM", ",")
                piv = self._int_arg()
                length = None
                if self.eat_sym(","):
                    length = self._int_arg()
                self.expect("SYM", ")")
                return Substr(arg, piv, length)
            raise UnknownActionError(tok.text, self.lineno)
        if self.eat_sym("."):
            col = self.expect("IDENT")
            return QualifiedColumn(tok.text, col.text)
        if _DF_REF_RE.match(tok.text):
            return BindingRef(tok.text)
        raise TrajectorySyntaxError(f"unqualified reference {tok.text!r}", self.lineno,
                                    tok.col, expected="table.column")


def _scalar_from_number(text: str) -> Scalar:
    if "." in text or "e" in text.lower():
        return Scalar(float(text), "real")
    return Scalar(int(text), "int")


# --- filter text (the quoted condition mini-grammar) -------------------------

_FILTER_PREFIXES = (
    ("is not null", "is not null"),
    ("is null", "is null"),
    ("not in", "not in"),
    ("between", "between"),
    ("like", "like"),
    ("in", "in"),
    (">=", ">="),
    ("<=", "<="),
    ("!=", "!="),
    (">", ">"),
    ("<", "<"),
    ("=", "="),
)


def parse_filter_text(text: str, lineno: int = 0, col: int = 0) -> FilterCondition:
    """Parse the content of a quoted filter argument.

    Text that starts with no comparator keyword is an equality literal taken
    verbatim; text starting with `(` is an opaque compound predicate.
    """
    stripped = text.strip()
    if stripped.startswith("("):
        return FilterCondition(COMPOUND, (), compound_text=stripped)
    lowered = stripped.lower()
    for prefix, comparator in _FILTER_PREFIXES:
        if lowered == prefix or (lowered.startswith(prefix)
                                 and _boundary(stripped, len(prefix))):
            rest = stripped[len(prefix):].strip()
            return _structured_filter(comparator, rest, lineno, col)
    return FilterCondition("=", (Scalar.of(text),))


def _boundary(text: str, end: int) -> bool:
    if end >= len(text):
        return True
    nxt = text[end]
    return not (nxt.isalnum() or nxt == "_")


def _structured_filter(comparator: str, rest: str, lineno: int, col: int) -> FilterCondition:
    if comparator in ("is null", "is not null"):
        if rest:
            raise TrajectorySyntaxError(f"trailing text after {comparator!r}", lineno, col)
        return FilterCondition(comparator)
    if comparator == "between":
        m = re.match(r"(?s)(.+?)\s+and\s+(.+)$", rest, re.IGNORECASE)
        if m is None:
            raise TrajectorySyntaxError("between requires `between X and Y`", lineno, col)
        lo = _filter_operand(m.group(1).strip(), lineno, col)
        hi = _filter_operand(m.group(2).strip(), lineno, col)
        return FilterCondition("between", (lo, hi))
    if comparator == "like":
        if not rest:
            raise TrajectorySyntaxError("like requires a pattern", lineno, col)
        pattern = _unquote(rest) if rest.startswith("'") else rest
        return FilterCondition("like", (Scalar(pattern, "string"),))
    if comparator in ("in", "not in"):
        if not (rest.startswith("(") and rest.endswith(")")):
            raise TrajectorySyntaxError(f"{comparator} requires a parenthesized list",
                                        lineno, col)
        items = _split_commas(rest[1:-1])
        if not items:
            raise TrajectorySyntaxError(f"{comparator} list is empty", lineno, col)
        ops = tuple(_filter_operand(item.strip(), lineno, col) for item in items)
        return FilterCondition(comparator, ops)
    # single-operand comparison
    if not rest:
        raise TrajectorySyntaxError(f"{comparator} requires an operand", lineno, col)
    return FilterCondition(comparator, (_filter_operand(rest, lineno, col),))


def _filter_operand(token: str, lineno: int, col: int) -> Scalar | BindingRef:
    if token.startswith("'"):
        return Scalar(_unquote(token), "string")
    if _DF_REF_RE.match(token):
        return BindingRef(token)
    if _DATE_TOKEN_RE.match(token):
        return Scalar(token, "date")
    if _NUMBER_RE.fullmatch(token):
        return _scalar_from_number(token)
    if " " in token:
        raise TrajectorySyntaxError(f"bad filter operand {token!r}", lineno, col,
                                    expected="a single scalar (quote strings with spaces)")
    return Scalar(token, "string")


def _unquote(token: str) -> str:
    if not (len(token) >= 2 and token.startswith("'") and token.endswith("'")):
        raise TrajectorySyntaxError(f"unterminated quoted operand {token!r}")
    return token[1:-1].replace("''", "'")


def _split_commas(text: str) -> list[str]:
    items: list[str] = []
    depth = 0
    quoted = False
    cur: list[str] = []
    i = 0
    while i < len(text):
        ch = text[i]
        if quoted:
            cur.append(ch)
            if ch == "'":
                if i + 1 < len(text) and text[i + 1] == "'":
                    cur.append("'")
                    i += 1
                else:
                    quoted = False
        elif ch == "'":
            quoted = True
            cur.append(ch)
        elif ch == "(":
            depth += 1
            cur.append(ch)
        elif ch == ")":
            depth -= 1
            cur.append(ch)
        elif ch == "," and depth == 0:
            items.append("".join(cur))
            cur = []
        else:
            cur.append(ch)
        i += 1
    if cur:
        items.append("".join(cur))
    return [item for item in (s.strip() for s in items) if item]


# --- public parse/render ------------------------------------------------------

def parse_trajectory(text: str) -> Trajectory:
    """Parse trajectory source text into a validated Trajectory."""
    if not text.strip():
        raise TrajectorySyntaxError("empty trajectory text", 1, 1)
    steps: list[TrajectoryStep] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.rstrip("\r")
        if not line.strip():
            continue
        tokens = _tokenize_line(line, lineno)
        step = _LineParser(tokens, lineno).parse_step()
        _check_star_placement(step, lineno)
        steps.append(step)
    return Trajectory(tuple(steps))


def _check_star_placement(step: TrajectoryStep, lineno: int) -> None:
    for action in step.chain:
        for expr in action_exprs(action):
            top_level_select = isinstance(action, Select)
            _walk_star(expr, top_level=top_level_select, lineno=lineno)


def _walk_star(expr: Expr, top_level: bool, lineno: int) -> None:
    if isinstance(expr, Star):
        if not top_level:
            raise TrajectorySyntaxError("`*` only allowed in count() or select()", lineno, 1)
    elif isinstance(expr, Aggregate):
        if isinstance(expr.arg, Star) and expr.kind != "count":
            raise TrajectorySyntaxError("`*` only allowed in count() or select()", lineno, 1)
        if not isinstance(expr.arg, Star):
            _walk_star(expr.arg, top_level=False, lineno=lineno)
    elif isinstance(expr, (Cast, Substr)):
        _walk_star(expr.arg, top_level=False, lineno=lineno)
    elif isinstance(expr, Arithmetic):
        _walk_star(expr.left, top_level=False, lineno=lineno)
        _walk_star(expr.right, top_level=False, lineno=lineno)


def render_trajectory(t: Trajectory) -> str:
    """Canonical text: deterministic, one step per line, trailing newline."""
    return "".join(render_step(step) + "\n" for step in t.steps)


def render_step(step: TrajectoryStep) -> str:
    calls = "".join("." + render_action(a) for a in step.chain)
    return f"{step.binding} = {step.receiver}{calls}"


def render_action(action: Action) -> str:
    if isinstance(action, Select):
        return f"select({_exprs(action.elements)})"
    if isinstance(action, Where):
        return f"where(element = {render_expr(action.element)}, filter = {render_filter(action.condition)})"
    if isinstance(action, GroupBy):
        return f"groupby({_exprs(action.elements)})"
    if isinstance(action, Having):
        return f"having(element = {render_expr(action.element)}, filter = {render_filter(action.condition)})"
    if isinstance(action, OrderBy):
        return f"orderby(by = {render_expr(action.by)}, {action.order})"
    if isinstance(action, Limit):
        if action.offset:
            return f"limit({action.offset}, {action.count})"
        return f"limit({action.count})"
    if isinstance(action, Distinct):
        return f"distinct({render_expr(action.element)})"
    if isinstance(action, Combine):
        return f"{action.op}({action.other.name})"
    if isinstance(action, AggStep):
        return render_expr(action.agg)
    if isinstance(action, CastStep):
        return render_expr(action.cast)
    if isinstance(action, SubstrStep):
        return render_expr(action.substr)
    raise TypeError(f"not an action: {action!r}")


def _exprs(elements: tuple[Expr, ...]) -> str:
    return ", ".join(render_expr(e) for e in elements)


def render_expr(expr: Expr) -> str:
    if isinstance(expr, QualifiedColumn):
        return expr.render()
    if isinstance(expr, Scalar):
        if expr.kind in ("int", "real"):
            return repr(expr.value)
        return _quote(str(expr.value))
    if isinstance(expr, Star):
        return "*"
    if isinstance(expr, Aggregate):
        return f"{expr.kind}({render_expr(expr.arg)})"
    if isinstance(expr, Cast):
        return f"cast({render_expr(expr.arg)}, {expr.target_type})"
    if isinstance(expr, Arithmetic):
        return f"({render_expr(expr.left)} {expr.op} {render_expr(expr.right)})"
    if isinstance(expr, Substr):
        if expr.length is None:
            return f"substr({render_expr(expr.arg)}, {expr.start})"
        return f"substr({render_expr(expr.arg)}, {expr.start}, {expr.length})"
    if isinstance(expr, BindingRef):
        return expr.name
    raise TypeError(f"not an expression: {expr!r}")


def render_filter(cond: FilterCondition) -> str:
    if cond.comparator == COMPOUND:
        assert cond.compound_text is not None
        return _quote(cond.compound_text)
    if cond.comparator == "=" and len(cond.operands) == 1:
        op = cond.operands[0]
        if isinstance(op, BindingRef):
            return op.name
        if op.kind in ("int", "real"):
            return repr(op.value)
        text = str(op.value)
        if op.kind == "string" and _equality_text_ambiguous(text):
            return _quote(f"= {_mini_quote(text)}")  # would reparse as a condition
        return _quote(text)
    return _quote(_filter_text(cond))


def _equality_text_ambiguous(text: str) -> bool:
    """True when bare equality text would reparse as something structured."""
    stripped = text.strip()
    if stripped != text or not text or text.startswith("("):
        return True
    lowered = stripped.lower()
    for prefix, _ in _FILTER_PREFIXES:
        if lowered == prefix or (lowered.startswith(prefix)
                                 and _boundary(stripped, len(prefix))):
            return True
    return bool(_DATE_TOKEN_RE.match(text) or _NUMBER_RE.fullmatch(text)
                or _DF_REF_RE.match(text))


def _filter_text(cond: FilterCondition) -> str:
    c = cond.comparator
    if c in ("is null", "is not null"):
        return c
    if c == "between":
        lo, hi = cond.operands
        return f"between {_operand_text(lo)} and {_operand_text(hi)}"
    if c == "like":
        pattern = str(cond.operands[0].value)  # type: ignore[union-attr]
        needs_quoting = pattern.startswith("'") or pattern != pattern.strip() or not pattern
        return f"like {_mini_quote(pattern) if needs_quoting else pattern}"
    if c in ("in", "not in"):
        return f"{c} ({', '.join(_operand_text(op) for op in cond.operands)})"
    return f"{c} {_operand_text(cond.operands[0])}"


def _operand_text(op: Scalar | BindingRef) -> str:
    if isinstance(op, BindingRef):
        return op.name
    if op.kind in ("int", "real"):
        return repr(op.value)
    if op.kind == "date":
        return str(op.value)
    return _mini_quote(str(op.value))


def _mini_quote(text: str) -> str:
    return "'" + text.replace("'", "''") + "'"


def _quote(text: str) -> str:
    return "'" + text.replace("'", "''") + "'"


# --- validation ---------------------------------------------------------------

@dataclass(frozen=True)
class Finding:
    level: str  # "error" | "warning"
    step_index: int  # 0-based; -1 for trajectory-wide findings
    code: str
    message: str


@dataclass
class ValidationReport:
    findings: list[Finding] = field(default_factory=list)

    @property
    def is_valid(self) -> bool:
        return not self.findings

    def errors(self) -> list[Finding]:
        return [f for f in self.findings if f.level == "error"]

    def __str__(self) -> str:
        if not self.findings:
            return "ok"
        return "\n".join(f"{f.level}: step {f.step_index + 1}: {f.message}"
                         if f.step_index >= 0 else f"{f.level}: {f.message}"
                         for f in self.findings)


def validate_trajectory(t: Trajectory, d: "DatabaseInput") -> ValidationReport:
    """Check schema references and chain shape against a database input."""
    report = ValidationReport()
    known_tables = {tbl.name for tbl in d.tables}
    for table in sorted(t.source_tables):
        if table not in known_tables:
            report.findings.append(Finding("error", -1, "unknown-table",
                                           f"table {table!r} not in database {d.name!r}"))
    seen_columns: set[tuple[str, str]] = set()
    for col in t.columns():
        if col.table not in known_tables:
            continue
        key = (col.table, col.column)
        if key in seen_columns:
            continue
        seen_columns.add(key)
        if not d.has_column(col.table, col.column):
            report.findings.append(Finding("error", -1, "unknown-column",
                                           f"column {col.render()} not in database {d.name!r}"))
    _check_chains(t, report)
    return report


def _check_chains(t: Trajectory, report: ValidationReport) -> None:
    groupby_seen = False
    for idx, step in enumerate(t.steps):
        chain_has_groupby = False
        for pos, action in enumerate(step.chain):
            for expr in action_exprs(action):
                if _nested_aggregate(expr):
                    report.findings.append(Finding("error", idx, "nested-aggregate",
                                                   "aggregate argument contains an aggregate"))
            if isinstance(action, GroupBy):
                chain_has_groupby = True
                groupby_seen = True
            elif isinstance(action, AggStep) and not chain_has_groupby:
                report.findings.append(Finding("warning", idx, "chain-order",
                                               f"{action.agg.kind}(...) chained without a groupby"))
            elif isinstance(action, Limit) and any(
                    isinstance(a, OrderBy) for a in step.chain[pos + 1:]):
                report.findings.append(Finding("warning", idx, "chain-order",
                                               "limit appears before orderby in the same chain"))
            elif isinstance(action, Having) and not groupby_seen:
                report.findings.append(Finding("warning", idx, "chain-order",
                                               "having without a preceding groupby"))


def _nested_aggregate(expr: Expr) -> bool:
    if isinstance(expr, Aggregate):
        return contains_aggregate(expr.arg)
    if isinstance(expr, (Cast, Substr)):
        return _nested_aggregate(expr.arg)
    if isinstance(expr, Arithmetic):
        return _nested_aggregate(expr.left) or _nested_aggregate(expr.right)
    return False
