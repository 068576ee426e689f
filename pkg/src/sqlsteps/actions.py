"""Core value types of the action-trajectory DSL and the closed action vocabulary."""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass, field
from typing import Union

from .errors import BindingError

IDENT_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_ ]*$")
DATE_RE = re.compile(r"\d{4}-\d{2}-\d{2}$")
BINDING_RE = re.compile(r"(df\d+|res|df)$")

AGGREGATE_KINDS = ("count", "sum", "average", "min", "max")
ARITHMETIC_OPS = ("+", "-", "*", "/")
COMPARATORS = ("=", "!=", "<", "<=", ">", ">=", "like", "in", "not in",
               "between", "is null", "is not null")
COMPOUND = "compound"


def valid_identifier(name: str) -> bool:
    return bool(IDENT_RE.match(name.strip())) and name == name.strip()


@dataclass(frozen=True)
class QualifiedColumn:
    """A `table.column` reference; both parts are nonempty identifiers."""

    table: str
    column: str

    def __post_init__(self) -> None:
        if not (valid_identifier(self.table) and valid_identifier(self.column)):
            raise ValueError(f"invalid qualified column {self.table!r}.{self.column!r}")

    def render(self) -> str:
        return f"{_part(self.table)}.{_part(self.column)}"


def _part(name: str) -> str:
    return f"`{name}`" if " " in name else name


@dataclass(frozen=True)
class Scalar:
    """A typed literal: int, real, string, or date-string."""

    value: int | float | str
    kind: str  # "int" | "real" | "string" | "date"

    @staticmethod
    def of(value: int | float | str) -> "Scalar":
        if isinstance(value, bool):
            raise ValueError("boolean literals are not part of the DSL")
        if isinstance(value, int):
            return Scalar(value, "int")
        if isinstance(value, float):
            return Scalar(value, "real")
        if DATE_RE.match(value):
            return Scalar(value, "date")
        return Scalar(value, "string")


@dataclass(frozen=True)
class Star:
    """`*`; legal only as a COUNT argument or a SELECT element."""


@dataclass(frozen=True)
class BindingRef:
    """Reference to a step binding (`df`, `df1`, ..., `res`)."""

    name: str

    def __post_init__(self) -> None:
        if not BINDING_RE.match(self.name):
            raise ValueError(f"invalid binding name {self.name!r}")


@dataclass(frozen=True)
class Aggregate:
    kind: str  # one of AGGREGATE_KINDS
    arg: "Expr"


@dataclass(frozen=True)
class Cast:
    arg: "Expr"
    target_type: str


@dataclass(frozen=True)
class Arithmetic:
    op: str  # one of ARITHMETIC_OPS
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class Substr:
    arg: "Expr"
    start: int  # 1-based
    length: int | None = None


Expr = Union[QualifiedColumn, Scalar, Star, Aggregate, Cast, Arithmetic, Substr, BindingRef]


def contains_aggregate(expr: Expr) -> bool:
    if isinstance(expr, Aggregate):
        return True
    if isinstance(expr, (Cast, Substr)):
        return contains_aggregate(expr.arg)
    if isinstance(expr, Arithmetic):
        return contains_aggregate(expr.left) or contains_aggregate(expr.right)
    return False


def columns_in(expr: Expr) -> list[QualifiedColumn]:
    """Qualified columns referenced by an expression, left to right."""
    out: list[QualifiedColumn] = []
    _walk_columns(expr, out)
    return out


def _walk_columns(expr: Expr, out: list[QualifiedColumn]) -> None:
    if isinstance(expr, QualifiedColumn):
        out.append(expr)
    elif isinstance(expr, Aggregate):
        _walk_columns(expr.arg, out)
    elif isinstance(expr, (Cast, Substr)):
        _walk_columns(expr.arg, out)
    elif isinstance(expr, Arithmetic):
        _walk_columns(expr.left, out)
        _walk_columns(expr.right, out)


FilterOperand = Union[Scalar, BindingRef]


@dataclass(frozen=True)
class FilterCondition:
    """A single comparison against the filtered element.

    `compound` conditions carry an opaque canonical predicate text (used for
    OR-disjunctions and column-to-column comparisons); they revert to SQL but
    are skipped by parameter-level perturbation.
    """

    comparator: str  # member of COMPARATORS or COMPOUND
    operands: tuple[FilterOperand, ...] = ()
    compound_text: str | None = None

    def __post_init__(self) -> None:
        if self.comparator == COMPOUND:
            if not self.compound_text:
                raise ValueError("compound filter requires text")
            return
        if self.comparator not in COMPARATORS:
            raise ValueError(f"unknown comparator {self.comparator!r}")
        expected = {"between": 2, "is null": 0, "is not null": 0}.get(self.comparator)
        if expected is not None and len(self.operands) != expected:
            raise ValueError(f"{self.comparator} takes {expected} operands")
        if self.comparator == "between":
            a, b = self.operands
            if isinstance(a, Scalar) and isinstance(b, Scalar) and a.kind != b.kind:
                raise ValueError("between bounds must share a scalar kind")


# --- actions ---------------------------------------------------------------

@dataclass(frozen=True)
class Select:
    elements: tuple[Expr, ...]

    name = "select"


@dataclass(frozen=True)
class Where:
    element: Expr
    condition: FilterCondition

    name = "where"


@dataclass(frozen=True)
class GroupBy:
    elements: tuple[Expr, ...]

    name = "groupby"


@dataclass(frozen=True)
class Having:
    element: Expr
    condition: FilterCondition

    name = "having"


@dataclass(frozen=True)
class OrderBy:
    by: Expr
    order: str  # "asc" | "desc"

    name = "orderby"

    def __post_init__(self) -> None:
        if self.order not in ("asc", "desc"):
            raise ValueError(f"order must be asc or desc, got {self.order!r}")


@dataclass(frozen=True)
class Limit:
    count: int
    offset: int = 0

    name = "limit"

    def __post_init__(self) -> None:
        if self.count < 1 or self.offset < 0:
            raise ValueError("limit requires count >= 1 and offset >= 0")


@dataclass(frozen=True)
class Distinct:
    element: Expr

    name = "distinct"


@dataclass(frozen=True)
class Combine:
    """A dataframe set operation against another binding."""

    op: str  # "union" | "intersect" | "except"
    other: BindingRef

    @property
    def name(self) -> str:
        return self.op


@dataclass(frozen=True)
class AggStep:
    """An aggregation chained after groupby, e.g. `.count(t.c)`."""

    agg: Aggregate

    @property
    def name(self) -> str:
        return self.agg.kind


@dataclass(frozen=True)
class CastStep:
    cast: Cast

    name = "cast"


@dataclass(frozen=True)
class SubstrStep:
    substr: Substr

    name = "substr"


Action = Union[Select, Where, GroupBy, Having, OrderBy, Limit, Distinct,
               Combine, AggStep, CastStep, SubstrStep]


@dataclass(frozen=True)
class TrajectoryStep:
    binding: str
    receiver: str
    chain: tuple[Action, ...]

    def __post_init__(self) -> None:
        if not BINDING_RE.match(self.binding) or self.binding == "df":
            raise ValueError(f"invalid step binding {self.binding!r}")
        if not BINDING_RE.match(self.receiver) or self.receiver == "res":
            raise ValueError(f"invalid receiver {self.receiver!r}")
        if not self.chain:
            raise ValueError("step requires at least one action")


@dataclass(frozen=True)
class Trajectory:
    steps: tuple[TrajectoryStep, ...]

    def __post_init__(self) -> None:
        check_bindings(self.steps)

    @property
    def source_tables(self) -> frozenset[str]:
        return frozenset(c.table for c in self.columns())

    def columns(self) -> list[QualifiedColumn]:
        """Every qualified-column occurrence, in step/render order."""
        out: list[QualifiedColumn] = []
        for step in self.steps:
            for action in step.chain:
                for expr in action_exprs(action):
                    _walk_columns(expr, out)
        return out

    def action_count(self) -> int:
        return sum(len(step.chain) for step in self.steps)

    def step(self, binding: str) -> TrajectoryStep:
        for s in self.steps:
            if s.binding == binding:
                return s
        raise KeyError(binding)


def action_exprs(action: Action) -> list[Expr]:
    """Expressions carried by an action, in rendered order."""
    if isinstance(action, (Select, GroupBy)):
        return list(action.elements)
    if isinstance(action, (Where, Having)):
        return [action.element]
    if isinstance(action, OrderBy):
        return [action.by]
    if isinstance(action, Distinct):
        return [action.element]
    if isinstance(action, AggStep):
        return [action.agg]
    if isinstance(action, CastStep):
        return [action.cast]
    if isinstance(action, SubstrStep):
        return [action.substr]
    return []


def check_bindings(steps: tuple[TrajectoryStep, ...]) -> None:
    """Enforce single assignment, no forward references, and a final `res`."""
    if not steps:
        raise BindingError("trajectory has no steps")
    bound: set[str] = set()
    for step in steps:
        if step.binding in bound:
            raise BindingError(f"binding {step.binding!r} assigned twice")
        if step.receiver != "df" and step.receiver not in bound:
            raise BindingError(f"receiver {step.receiver!r} used before assignment")
        for action in step.chain:
            if isinstance(action, Combine) and action.other.name not in bound:
                raise BindingError(f"set operand {action.other.name!r} used before assignment")
        bound.add(step.binding)
    if "res" not in bound:
        raise BindingError("no step binds `res`")
    if steps[-1].binding != "res":
        raise BindingError("`res` must be bound by the final step")


# --- action space ----------------------------------------------------------

@dataclass(frozen=True)
class ActionSpec:
    name: str
    category: str  # "clause" | "dataframe" | "aggregation" | "operator"
    params: str
    doc: str


@dataclass(frozen=True)
class ActionSpace:
    """The closed vocabulary of actions; parse rejects anything outside it."""

    entries: tuple[ActionSpec, ...]
    aliases: dict[str, str] = field(default_factory=dict)

    def resolve(self, name: str) -> str | None:
        """Canonical action name for `name`, or None if outside the space."""
        lowered = name.lower()
        lowered = self.aliases.get(lowered, lowered)
        if lowered == "calculation":  # expression-level, never a chained call
            return None
        return lowered if lowered in self._names() else None

    def _names(self) -> frozenset[str]:
        return frozenset(e.name for e in self.entries)

    def category(self, name: str) -> str:
        for e in self.entries:
            if e.name == name:
                return e.category
        raise KeyError(name)

    def catalog(self) -> list[dict[str, str]]:
        return [{"name": e.name, "category": e.category, "params": e.params, "doc": e.doc}
                for e in self.entries]

    def catalog_hash(self) -> str:
        blob = json.dumps(self.catalog(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:12]


ACTION_SPACE = ActionSpace(
    entries=(
        ActionSpec("select", "clause", "select(elements...)",
                   "Project columns, aggregates, or expressions out of the frame."),
        ActionSpec("where", "clause", "where(element, filter)",
                   "Keep rows whose element satisfies the filter condition."),
        ActionSpec("groupby", "clause", "groupby(elements...)",
                   "Group rows sharing the same element values."),
        ActionSpec("having", "clause", "having(element, filter)",
                   "Filter groups by an aggregate condition."),
        ActionSpec("orderby", "clause", "orderby(by, asc|desc)",
                   "Sort rows by a column or expression."),
        ActionSpec("limit", "clause", "limit(count) | limit(offset, count)",
                   "Restrict the number of rows returned."),
        ActionSpec("distinct", "clause", "distinct(element)",
                   "Drop duplicate rows of the element."),
        ActionSpec("union", "dataframe", "df1.union(df2)",
                   "Union the result sets of two frames."),
        ActionSpec("intersect", "dataframe", "df1.intersect(df2)",
                   "Intersect the result sets of two frames."),
        ActionSpec("except", "dataframe", "df1.except(df2)",
                   "Subtract the second frame's result set from the first."),
        ActionSpec("sum", "aggregation", "sum(element)",
                   "Sum the non-null values of the element."),
        ActionSpec("average", "aggregation", "average(element)",
                   "Average the non-null values of the element."),
        ActionSpec("count", "aggregation", "count(element)",
                   "Count the values of the element."),
        ActionSpec("min", "aggregation", "min(element)",
                   "Minimum non-null value of the element."),
        ActionSpec("max", "aggregation", "max(element)",
                   "Maximum non-null value of the element."),
        ActionSpec("cast", "operator", "cast(element, type)",
                   "Convert the element to the target data type."),
        ActionSpec("calculation", "operator", "+, -, *, /",
                   "Arithmetic between two expressions (expression-level only)."),
        ActionSpec("substr", "operator", "substr(element, piv[, len])",
                   "Extract a substring starting at piv, optionally len long."),
    ),
    aliases={"avg": "average", "order_by": "orderby", "group_by": "groupby"},
)
