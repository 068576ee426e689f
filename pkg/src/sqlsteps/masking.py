"""Schema masking of trajectories and mask-slot reinsertion.

Masking replaces every qualified-column occurrence in the canonical trajectory
text with an indexed token `[MASK:k]`; filling the slots with their original
values reproduces the source text exactly. Indexed masks keep reinsertion
well defined; `bare_template` strips the indices for prompt assets.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Callable

from .actions import (
    Action,
    AggStep,
    Aggregate,
    Arithmetic,
    Cast,
    CastStep,
    Combine,
    Distinct,
    Expr,
    GroupBy,
    Having,
    Limit,
    OrderBy,
    QualifiedColumn,
    Select,
    Substr,
    SubstrStep,
    Trajectory,
    TrajectoryStep,
    Where,
)
from .errors import ArityMismatchError, FormatError, KindMismatchError, SchemaMismatchError
from .schema import DatabaseInput
from .trajectory import parse_trajectory, render_trajectory, validate_trajectory

MASK_TOKEN_RE = re.compile(r"\[MASK:(\d+)\]")

_PLACEHOLDER_TABLE = "xmaskx"


@dataclass(frozen=True)
class MaskSlot:
    index: int
    kind: str  # "column" | "table"
    value: str  # original rendered occurrence, e.g. "schools.Year"
    position: int  # character offset of the occurrence in the source text


@dataclass(frozen=True)
class MaskedTrajectory:
    template: str
    slots: tuple[MaskSlot, ...]

    def slot_values(self) -> list[str]:
        return [slot.value for slot in self.slots]

    def bare_template(self) -> str:
        return MASK_TOKEN_RE.sub("[MASK]", self.template)


def replace_columns(t: Trajectory, fn: Callable[[QualifiedColumn, int], QualifiedColumn]) -> Trajectory:
    """Rebuild a trajectory mapping each column occurrence in render order."""
    counter = [0]

    def map_expr(expr: Expr) -> Expr:
        if isinstance(expr, QualifiedColumn):
            out = fn(expr, counter[0])
            counter[0] += 1
            return out
        if isinstance(expr, Aggregate):
            return Aggregate(expr.kind, map_expr(expr.arg))
        if isinstance(expr, Cast):
            return Cast(map_expr(expr.arg), expr.target_type)
        if isinstance(expr, Arithmetic):
            return Arithmetic(expr.op, map_expr(expr.left), map_expr(expr.right))
        if isinstance(expr, Substr):
            return Substr(map_expr(expr.arg), expr.start, expr.length)
        return expr

    def map_action(action: Action) -> Action:
        if isinstance(action, Select):
            return Select(tuple(map_expr(e) for e in action.elements))
        if isinstance(action, Where):
            return Where(map_expr(action.element), action.condition)
        if isinstance(action, GroupBy):
            return GroupBy(tuple(map_expr(e) for e in action.elements))
        if isinstance(action, Having):
            return Having(map_expr(action.element), action.condition)
        if isinstance(action, OrderBy):
            return OrderBy(map_expr(action.by), action.order)
        if isinstance(action, Distinct):
            return Distinct(map_expr(action.element))
        if isinstance(action, AggStep):
            agg = map_expr(action.agg)
            assert isinstance(agg, Aggregate)
            return AggStep(agg)
        if isinstance(action, CastStep):
            cast = map_expr(action.cast)
            assert isinstance(cast, Cast)
            return CastStep(cast)
        if isinstance(action, SubstrStep):
            sub = map_expr(action.substr)
            assert isinstance(sub, Substr)
            return SubstrStep(sub)
        if isinstance(action, (Limit, Combine)):
            return action
        raise TypeError(f"not an action: {action!r}")

    steps = tuple(TrajectoryStep(s.binding, s.receiver, tuple(map_action(a) for a in s.chain))
                  for s in t.steps)
    return Trajectory(steps)


def mask_schema(t: Trajectory) -> MaskedTrajectory:
    """Mask every qualified-column occurrence of the canonical rendering."""
    source = render_trajectory(t)
    masked = replace_columns(t, lambda _col, k: QualifiedColumn(_PLACEHOLDER_TABLE, f"s{k}"))
    template = render_trajectory(masked)
    occurrences = t.columns()
    for k in range(len(occurrences)):
        template = template.replace(f"{_PLACEHOLDER_TABLE}.s{k}", f"[MASK:{k}]", 1)
    values = [col.render() for col in occurrences]
    positions = _original_positions(template, values)
    slots = tuple(
        MaskSlot(index=k, kind="column", value=value, position=pos)
        for k, (value, pos) in enumerate(zip(values, positions)))
    assert MASK_TOKEN_RE.sub(lambda m: values[int(m.group(1))], template) == source
    return MaskedTrajectory(template=template, slots=slots)


def _original_positions(template: str, values: list[str]) -> list[int]:
    """Character offsets in the source text that each mask token stands for."""
    positions: list[int] = []
    si = ti = 0
    vi = 0
    while ti < len(template):
        m = MASK_TOKEN_RE.match(template, ti)
        if m is not None:
            positions.append(si)
            si += len(values[vi])
            vi += 1
            ti = m.end()
        else:
            si += 1
            ti += 1
    return positions


def parse_masked_template(text: str) -> MaskedTrajectory:
    """Build a MaskedTrajectory from template text alone (slot values unknown).

    Indices must be contiguous 0..n-1, each appearing exactly once.
    """
    indices = [int(m.group(1)) for m in MASK_TOKEN_RE.finditer(text)]
    if sorted(indices) != list(range(len(indices))):
        raise FormatError(f"mask indices are not contiguous: {indices}")
    slots = tuple(MaskSlot(index=k, kind="column", value="", position=-1)
                  for k in range(len(indices)))
    return MaskedTrajectory(template=text, slots=slots)


def recover_slot_values(template: str, source: str) -> list[str]:
    """Align a masked template against the unmasked source text.

    Returns the slot values in index order; raises FormatError when the
    template's literal segments do not match the source.
    """
    segments = MASK_TOKEN_RE.split(template)
    # re.split with one capture group yields [lit0, idx0, lit1, idx1, ..., litN]
    literals = segments[0::2]
    indices = [int(i) for i in segments[1::2]]
    if not source.startswith(literals[0]):
        raise FormatError("template does not match the source text")
    values: dict[int, str] = {}
    pos = len(literals[0])
    for index, literal in zip(indices, literals[1:]):
        if literal:
            end = source.find(literal, pos)
            if end < 0:
                raise FormatError("template does not match the source text")
        else:
            end = len(source)
        values[index] = source[pos:end]
        pos = end + len(literal)
    if pos != len(source):
        raise FormatError("template does not cover the full source text")
    return [values[k] for k in range(len(values))]


def fill_mask(m: MaskedTrajectory, values: list[str] | list[QualifiedColumn],
              d: DatabaseInput) -> Trajectory:
    """Reinsert schema elements into a masked template and validate the result."""
    if len(values) != len(m.slots):
        raise ArityMismatchError(
            f"template has {len(m.slots)} slots, got {len(values)} values")
    rendered: dict[int, str] = {}
    for slot, value in zip(m.slots, values):
        text = value.render() if isinstance(value, QualifiedColumn) else str(value).strip()
        if slot.kind == "column" and "." not in text:
            raise KindMismatchError(
                f"slot {slot.index} expects a table.column value, got {text!r}")
        if slot.kind == "table" and "." in text:
            raise KindMismatchError(f"slot {slot.index} expects a table name, got {text!r}")
        rendered[slot.index] = text

    def substitute(match: re.Match[str]) -> str:
        index = int(match.group(1))
        if index not in rendered:
            raise ArityMismatchError(f"template references unknown slot {index}")
        return rendered[index]

    text = MASK_TOKEN_RE.sub(substitute, m.template)
    trajectory = parse_trajectory(text)
    report = validate_trajectory(trajectory, d)
    errors = report.errors()
    if errors:
        first = errors[0]
        slot_hint = _blame_slot(first.message, rendered)
        raise SchemaMismatchError(f"{first.message}{slot_hint}")
    return trajectory


def _blame_slot(message: str, rendered: dict[int, str]) -> str:
    for index, value in sorted(rendered.items()):
        if value in message or value.split(".")[0] in message:
            return f" (filled at slot {index})"
    return ""
