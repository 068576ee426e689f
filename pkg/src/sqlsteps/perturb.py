"""Action-level error perturbation and corpus augmentation.

Three edit families over a verified trajectory: ADD inserts an action, DELETE
removes one, SUBSTITUTE rewrites one action's kind or parameters. Every
output still parses and passes binding validation; the injected errors are
semantic by construction. All randomness flows through per-call
`random.Random` streams keyed by (seed, trajectory index, draw index), so
parallel and serial runs produce identical corpora.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field

from .actions import (
    Action,
    AggStep,
    Aggregate,
    Arithmetic,
    BindingRef,
    Cast,
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
    Substr,
    Trajectory,
    TrajectoryStep,
    Where,
    AGGREGATE_KINDS,
)
from .errors import BindingError, NoViablePerturbationError, TrajectorySyntaxError
from .schema import DatabaseInput
from .trajectory import parse_trajectory, render_action, render_trajectory

ADD = "add"
DELETE = "delete"
SUBSTITUTE = "substitute"
KINDS = (ADD, DELETE, SUBSTITUTE)

_FLIP_COMPARATOR = {"=": "!=", "!=": "=", "<": ">", ">": "<", "<=": ">=", ">=": "<=",
                    "in": "not in", "not in": "in",
                    "is null": "is not null", "is not null": "is null"}


@dataclass(frozen=True)
class PerturbationRecord:
    kind: str  # one of KINDS
    site: tuple[int, int]  # (step index, action index) in the source trajectory
    before: str | None  # rendered action (absent for ADD)
    after: str | None  # rendered action (absent for DELETE)
    seed: int

    def __post_init__(self) -> None:
        if self.kind == ADD and not (self.before is None and self.after):
            raise ValueError("ADD records carry only `after`")
        if self.kind == DELETE and not (self.after is None and self.before):
            raise ValueError("DELETE records carry only `before`")
        if self.kind == SUBSTITUTE and (not self.before or not self.after
                                        or self.before == self.after):
            raise ValueError("SUBSTITUTE records carry distinct before/after")

    def to_dict(self) -> dict:
        return {"kind": self.kind, "site": list(self.site), "before": self.before,
                "after": self.after, "seed": self.seed}


@dataclass(frozen=True)
class PerturbationConfig:
    k: int = 1
    weights: tuple[float, float, float] = (1 / 3, 1 / 3, 1 / 3)  # add, delete, substitute
    seed: int = 0
    max_attempts: int = 30

    def __post_init__(self) -> None:
        if self.k < 0:
            raise ValueError("k must be >= 0")
        if any(w < 0 for w in self.weights):
            raise ValueError("kind weights must be nonnegative")
        if abs(sum(self.weights) - 1.0) > 1e-9:
            raise ValueError("kind weights must sum to 1")


@dataclass(frozen=True)
class PerturbationPair:
    erroneous: Trajectory
    verified: Trajectory
    record: PerturbationRecord


@dataclass
class AugmentReport:
    pairs: list[PerturbationPair] = field(default_factory=list)
    skipped: list[tuple[int, str]] = field(default_factory=list)  # (trajectory index, reason)


# --- binding renumbering -----------------------------------------------------

def _renumber(steps: list[TrajectoryStep]) -> Trajectory:
    """Rename bindings to df1..dfN in step order, rewriting every reference."""
    mapping: dict[str, str] = {"df": "df"}
    counter = 0
    for step in steps:
        if step.binding == "res":
            mapping[step.binding] = "res"
        else:
            counter += 1
            mapping[step.binding] = f"df{counter}"

    def map_ref(name: str) -> str:
        return mapping.get(name, name)

    def map_action(action: Action) -> Action:
        if isinstance(action, Combine):
            return Combine(action.op, BindingRef(map_ref(action.other.name)))
        if isinstance(action, (Where, Having)):
            cond = action.condition
            operands = tuple(BindingRef(map_ref(op.name)) if isinstance(op, BindingRef) else op
                             for op in cond.operands)
            if operands != cond.operands:
                cond = FilterCondition(cond.comparator, operands, cond.compound_text)
            return (Where(action.element, cond) if isinstance(action, Where)
                    else Having(action.element, cond))
        return action

    renamed = [TrajectoryStep(map_ref(s.binding), map_ref(s.receiver),
                              tuple(map_action(a) for a in s.chain)) for s in steps]
    return Trajectory(tuple(renamed))


def _fresh(steps: list[TrajectoryStep]) -> str:
    taken = {s.binding for s in steps}
    n = 9000
    while f"df{n}" in taken:
        n += 1
    return f"df{n}"


def _insert_step(steps: list[TrajectoryStep], index: int, chain: tuple[Action, ...]) -> list[TrajectoryStep]:
    """Insert a step before position `index`, rewiring the old step onto it."""
    binding = _fresh(steps)
    old = steps[index]
    new_step = TrajectoryStep(binding, old.receiver, chain)
    rewired = TrajectoryStep(old.binding, binding, old.chain)
    return steps[:index] + [new_step, rewired] + steps[index + 1:]


def _drop_action(steps: list[TrajectoryStep], step_idx: int, action_idx: int) -> list[TrajectoryStep]:
    step = steps[step_idx]
    chain = step.chain[:action_idx] + step.chain[action_idx + 1:]
    if chain:
        return steps[:step_idx] + [TrajectoryStep(step.binding, step.receiver, chain)] \
            + steps[step_idx + 1:]
    # empty chain: drop the whole step and repoint its users at its receiver
    def repoint(action: Action) -> Action:
        if isinstance(action, Combine) and action.other.name == step.binding:
            return Combine(action.op, BindingRef(step.receiver))
        if isinstance(action, (Where, Having)):
            operands = tuple(BindingRef(step.receiver)
                             if isinstance(op, BindingRef) and op.name == step.binding else op
                             for op in action.condition.operands)
            if operands != action.condition.operands:
                cond = FilterCondition(action.condition.comparator, operands,
                                       action.condition.compound_text)
                return type(action)(action.element, cond)
        return action

    out: list[TrajectoryStep] = []
    for i, s in enumerate(steps):
        if i == step_idx:
            continue
        receiver = step.receiver if s.receiver == step.binding else s.receiver
        out.append(TrajectoryStep(s.binding, receiver, tuple(repoint(a) for a in s.chain)))
    return out


def _swap_action(steps: list[TrajectoryStep], step_idx: int, action_idx: int,
                 action: Action) -> list[TrajectoryStep]:
    step = steps[step_idx]
    chain = step.chain[:action_idx] + (action,) + step.chain[action_idx + 1:]
    return steps[:step_idx] + [TrajectoryStep(step.binding, step.receiver, chain)] \
        + steps[step_idx + 1:]


# --- candidate edits ----------------------------------------------------------

@dataclass(frozen=True)
class _Edit:
    site: tuple[int, int]
    before: Action | None
    after: Action | None
    build: tuple  # ("insert_step", idx, chain) | ("append", ...) | ("drop", ...) | ("swap", ...)


def _schema_columns(d: DatabaseInput) -> list[QualifiedColumn]:
    out = []
    for tbl in d.tables:
        for col in tbl.columns:
            out.append(QualifiedColumn(tbl.name, col.name))
    return sorted(out, key=lambda c: (c.table, c.column))


def _add_candidates(t: Trajectory, d: DatabaseInput) -> list[_Edit]:
    edits: list[_Edit] = []
    columns = _schema_columns(d)
    referenced = sorted(set(t.columns()), key=lambda c: (c.table, c.column))
    for idx in range(len(t.steps)):
        for col in columns:
            action: Action = GroupBy((col,))
            edits.append(_Edit((idx, 0), None, action, ("insert_step", idx, (action,))))
        for col in referenced:
            action = Distinct(col)
            edits.append(_Edit((idx, 0), None, action, ("insert_step", idx, (action,))))
            action = OrderBy(col, "asc")
            edits.append(_Edit((idx, 0), None, action, ("insert_step", idx, (action,))))
    for idx, step in enumerate(t.steps):
        for pos, action in enumerate(step.chain):
            if isinstance(action, Where):  # duplicate an existing predicate
                edits.append(_Edit((idx, pos), None, action, ("insert_step", idx, (action,))))
            if isinstance(action, OrderBy) and not any(
                    isinstance(a, Limit) for a in step.chain):
                limit = Limit(1)
                edits.append(_Edit((idx, len(step.chain)), None, limit,
                                   ("append", idx, limit)))
    return edits


def _delete_candidates(t: Trajectory) -> list[_Edit]:
    edits: list[_Edit] = []
    for idx, step in enumerate(t.steps):
        for pos, action in enumerate(step.chain):
            if isinstance(action, Select) and step.binding == "res":
                continue  # never delete the final projection
            if isinstance(action, Combine):
                continue  # dropping the set operation would orphan a branch
            edits.append(_Edit((idx, pos), action, None, ("drop", idx, pos)))
    return edits


def _substitute_candidates(t: Trajectory, d: DatabaseInput,
                           rng: random.Random) -> list[_Edit]:
    edits: list[_Edit] = []
    for idx, step in enumerate(t.steps):
        for pos, action in enumerate(step.chain):
            for after in _rewrites(action, d, rng):
                if after != action:
                    edits.append(_Edit((idx, pos), action, after, ("swap", idx, pos, after)))
    return edits


def _rewrites(action: Action, d: DatabaseInput, rng: random.Random) -> list[Action]:
    out: list[Action] = []
    if isinstance(action, Select) and len(action.elements) >= 2:
        elements = list(action.elements)
        elements[0], elements[1] = elements[1], elements[0]
        out.append(Select(tuple(elements)))
    if isinstance(action, (Where, Having)):
        flipped = _FLIP_COMPARATOR.get(action.condition.comparator)
        if flipped is not None:
            cond = FilterCondition(flipped, action.condition.operands)
            out.append(type(action)(action.element, cond))
        jittered = _jitter_condition(action.condition, rng)
        if jittered is not None:
            out.append(type(action)(action.element, jittered))
        swapped = _swap_column(action.element, d)
        if swapped is not None:
            out.append(type(action)(swapped, action.condition))
    if isinstance(action, OrderBy):
        out.append(OrderBy(action.by, "desc" if action.order == "asc" else "asc"))
        swapped = _swap_column(action.by, d)
        if swapped is not None:
            out.append(OrderBy(swapped, action.order))
    if isinstance(action, Limit):
        out.append(Limit(action.count + 1, action.offset))
        if action.count > 1:
            out.append(Limit(action.count - 1, action.offset))
    if isinstance(action, AggStep):
        out.extend(AggStep(Aggregate(kind, action.agg.arg))
                   for kind in AGGREGATE_KINDS if kind != action.agg.kind)
    if isinstance(action, Select):
        swapped_elements = []
        for i, element in enumerate(action.elements):
            swapped = _swap_column(element, d)
            if swapped is not None:
                elements = list(action.elements)
                elements[i] = swapped
                swapped_elements.append(Select(tuple(elements)))
        out.extend(swapped_elements)
    if isinstance(action, GroupBy):
        for i, element in enumerate(action.elements):
            swapped = _swap_column(element, d)
            if swapped is not None:
                elements = list(action.elements)
                elements[i] = swapped
                out.append(GroupBy(tuple(elements)))
    return out


def _swap_column(expr: Expr, d: DatabaseInput) -> Expr | None:
    """Replace the first column in the expression with a sibling column."""
    if isinstance(expr, QualifiedColumn):
        tbl = d.table(expr.table)
        if tbl is None:
            return None
        siblings = sorted(c.name for c in tbl.columns if c.name != expr.column)
        if not siblings:
            return None
        return QualifiedColumn(expr.table, siblings[0])
    if isinstance(expr, Aggregate):
        inner = _swap_column(expr.arg, d)
        return Aggregate(expr.kind, inner) if inner is not None else None
    if isinstance(expr, Cast):
        inner = _swap_column(expr.arg, d)
        return Cast(inner, expr.target_type) if inner is not None else None
    if isinstance(expr, Substr):
        inner = _swap_column(expr.arg, d)
        return Substr(inner, expr.start, expr.length) if inner is not None else None
    if isinstance(expr, Arithmetic):
        inner = _swap_column(expr.left, d)
        if inner is not None:
            return Arithmetic(expr.op, inner, expr.right)
        inner = _swap_column(expr.right, d)
        return Arithmetic(expr.op, expr.left, inner) if inner is not None else None
    return None


def _jitter_condition(cond: FilterCondition, rng: random.Random) -> FilterCondition | None:
    if cond.comparator == "compound":
        return None
    jittered = []
    changed = False
    for op in cond.operands:
        if isinstance(op, Scalar) and op.kind in ("int", "real") and not changed:
            delta = rng.choice(("+1", "-1", "*10"))
            value = op.value
            if delta == "+1":
                value = value + 1
            elif delta == "-1":
                value = value - 1
            else:
                value = value * 10
            jittered.append(Scalar(value, op.kind))
            changed = True
        else:
            jittered.append(op)
    if not changed:
        return None
    return FilterCondition(cond.comparator, tuple(jittered), cond.compound_text)


# --- public operations -----------------------------------------------------------

def perturb_once(t: Trajectory, kind: str, rng: random.Random, d: DatabaseInput,
                 max_attempts: int = 30, seed: int = 0) -> tuple[Trajectory, PerturbationRecord]:
    """Apply one perturbation of the given kind; the result parses and differs."""
    if kind not in KINDS:
        raise ValueError(f"unknown perturbation kind {kind!r}")
    if kind == DELETE and t.action_count() < 2:
        raise NoViablePerturbationError("cannot delete from a single-action trajectory")
    source_text = render_trajectory(t)
    for _ in range(max_attempts):
        if kind == ADD:
            candidates = _add_candidates(t, d)
        elif kind == DELETE:
            candidates = _delete_candidates(t)
        else:
            candidates = _substitute_candidates(t, d, rng)
        if not candidates:
            break
        edit = rng.choice(candidates)
        try:
            mutated = _apply_edit(list(t.steps), edit)
            text = render_trajectory(mutated)
            if text == source_text:
                continue
            reparsed = parse_trajectory(text)  # structural validity gate
        except (BindingError, ValueError, TrajectorySyntaxError):
            continue
        record = PerturbationRecord(
            kind=kind,
            site=edit.site,
            before=render_action(edit.before) if edit.before is not None else None,
            after=render_action(edit.after) if edit.after is not None else None,
            seed=seed,
        )
        return reparsed, record
    raise NoViablePerturbationError(f"no viable {kind} perturbation after {max_attempts} attempts")


def _apply_edit(steps: list[TrajectoryStep], edit: _Edit) -> Trajectory:
    op = edit.build[0]
    if op == "insert_step":
        _, idx, chain = edit.build
        return _renumber(_insert_step(steps, idx, chain))
    if op == "append":
        _, idx, action = edit.build
        step = steps[idx]
        new = TrajectoryStep(step.binding, step.receiver, step.chain + (action,))
        return _renumber(steps[:idx] + [new] + steps[idx + 1:])
    if op == "drop":
        _, idx, pos = edit.build
        return _renumber(_drop_action(steps, idx, pos))
    if op == "swap":
        _, idx, pos, action = edit.build
        return _renumber(_swap_action(steps, idx, pos, action))
    raise ValueError(f"unknown edit {op!r}")


def _draw_kind(weights: tuple[float, float, float], rng: random.Random) -> str:
    roll = rng.random()
    acc = 0.0
    for kind, weight in zip(KINDS, weights):
        acc += weight
        if roll < acc:
            return kind
    return KINDS[-1]


def stream_rng(seed: int, trajectory_index: int, draw: int) -> random.Random:
    """Independent deterministic stream per (seed, trajectory, draw)."""
    return random.Random(f"{seed}:{trajectory_index}:{draw}")


def augment(verified: list[Trajectory], cfg: PerturbationConfig,
            d: DatabaseInput) -> AugmentReport:
    """K perturbation pairs per verified trajectory; the verified side is kept
    as the target without re-verification (it is correct by construction)."""
    report = AugmentReport()
    for index, trajectory in enumerate(verified):
        for draw in range(cfg.k):
            rng = stream_rng(cfg.seed, index, draw)
            kind = _draw_kind(cfg.weights, rng)
            try:
                erroneous, record = perturb_once(trajectory, kind, rng, d,
                                                 max_attempts=cfg.max_attempts,
                                                 seed=cfg.seed)
            except NoViablePerturbationError as exc:
                report.skipped.append((index, str(exc)))
                continue
            report.pairs.append(PerturbationPair(erroneous, trajectory, record))
    return report


def inject_negatives(pairs: list[tuple[Trajectory, Trajectory]], ratio: float = 4.0,
                     seed: int = 0) -> list[tuple[Trajectory, Trajectory]]:
    """Append one identity (verified, verified) pair per `ratio` positives.

    Exactly floor(len(pairs) / ratio) identity pairs are appended, then the
    combined records are shuffled deterministically by `seed`.
    """
    if ratio <= 0:
        raise ValueError("ratio must be positive")
    records: list[tuple[Trajectory, Trajectory]] = [(err, ver) for err, ver in pairs]
    n_negatives = int(len(pairs) / ratio)
    for j in range(n_negatives):
        source = pairs[min(len(pairs) - 1, int((j + 1) * ratio) - 1)]
        records.append((source[1], source[1]))
    random.Random(f"negatives:{seed}").shuffle(records)
    return records
