"""Sequential correction pipeline over pluggable stage backends.

Four stage slots run in order: `bam` converts the initial SQL to a
trajectory, `sam_mask` masks its schema links, `sam_fill` reinserts
(possibly corrected) links, and `lom` applies logic-level corrections. Each
backend maps a structured payload of strings to output text; rule backends
implement the deterministic baseline, scripted backends replay canned
outputs, and remote backends POST the payload to an HTTP endpoint. A stage
returning unparseable text degrades the run: the trace keeps the error and
the last valid trajectory feeds the final feedback.
"""

from __future__ import annotations

import json
import string
import time
import urllib.error
import urllib.request
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Callable, Protocol

from .bridge import decompose, revert
from .errors import (
    BackendUnavailableError,
    FormatError,
    InvalidChainError,
    JoinPathNotFoundError,
    MissingSchemaError,
    SchemaMismatchError,
    SqlStepsError,
    SqlSyntaxError,
    StageOutputInvalidError,
    TemplateNotFoundError,
    UnsupportedSqlError,
)
from .corpus import SeedExample
from .masking import (
    MaskedTrajectory,
    fill_mask,
    mask_schema,
    parse_masked_template,
    recover_slot_values,
)
from .schema import DatabaseInput, extract_schema, parse_database_text, render_database_input
from .sqlast import SqlQuery, canonicalize
from .trajectory import Trajectory, parse_trajectory, render_trajectory

STAGES = ("bam", "sam_mask", "sam_fill", "lom")

_BRIDGE_ERRORS = (UnsupportedSqlError, SchemaMismatchError, JoinPathNotFoundError,
                  InvalidChainError, SqlSyntaxError)


class StageBackend(Protocol):
    stage: str
    identity: bool

    def invoke(self, payload: dict[str, str]) -> str: ...

    def describe(self) -> str: ...


@dataclass
class RuleBackend:
    """Deterministic baseline: decompose for bam, mask/fill loop for sam,
    pass-through for lom (no learned logic corrections exist offline)."""

    stage: str
    identity: bool = False

    def describe(self) -> str:
        return f"rule:{self.stage}"

    def invoke(self, payload: dict[str, str]) -> str:
        if self.stage == "bam":
            d = parse_database_text(payload["db"])
            query = SqlQuery.raw(payload["sql"], payload.get("dialect", "sqlite"))
            return render_trajectory(decompose(query, d))
        if self.stage == "sam_mask":
            return mask_schema(parse_trajectory(payload["trajectory"])).template
        if self.stage == "sam_fill":
            d = parse_database_text(payload["db"])
            template = payload["masked"]
            source = payload["trajectory"]
            masked = parse_masked_template(template)
            if not masked.slots:
                return template
            values = recover_slot_values(template, source)
            return render_trajectory(fill_mask(masked, values, d))
        if self.stage == "lom":
            return payload["trajectory"]
        raise ValueError(f"unknown stage {self.stage!r}")


@dataclass
class IdentityBackend:
    """Ablation pass-through; for bam (which must still produce a trajectory)
    it behaves like the rule backend."""

    stage: str
    identity: bool = True

    def describe(self) -> str:
        return f"identity:{self.stage}"

    def invoke(self, payload: dict[str, str]) -> str:
        if self.stage == "bam":
            return RuleBackend("bam").invoke(payload)
        if self.stage == "sam_mask":
            return payload["trajectory"]
        if self.stage == "sam_fill":
            return payload["masked"]
        if self.stage == "lom":
            return payload["trajectory"]
        raise ValueError(f"unknown stage {self.stage!r}")


@dataclass
class ScriptedBackend:
    """Replays canned outputs keyed by instance id (`*` is the wildcard)."""

    stage: str
    outputs: dict[str, str]
    identity: bool = False

    def describe(self) -> str:
        return f"scripted:{self.stage}"

    def invoke(self, payload: dict[str, str]) -> str:
        key = payload.get("id", "*")
        if key in self.outputs:
            return self.outputs[key]
        if "*" in self.outputs:
            return self.outputs["*"]
        raise StageOutputInvalidError(self.stage, f"no scripted output for id {key!r}")


@dataclass
class RemoteBackend:
    """HTTP JSON backend: POST {stage, ...payload}, expect {"text": ...}."""

    stage: str
    endpoint: str
    timeout: float = 30.0
    retries: int = 2
    backoff: float = 0.5
    identity: bool = False

    def describe(self) -> str:
        return f"remote:{self.stage}@{self.endpoint}"

    def invoke(self, payload: dict[str, str]) -> str:
        if self.stage == "sam_fill":  # the unmasked trajectory is rule-backend-only context
            payload = {k: v for k, v in payload.items() if k != "trajectory"}
        body = json.dumps({"stage": self.stage, **payload}).encode("utf-8")
        last_error: Exception | None = None
        for attempt in range(self.retries + 1):
            if attempt:
                time.sleep(self.backoff * (2 ** (attempt - 1)))
            request = urllib.request.Request(
                self.endpoint, data=body, headers={"Content-Type": "application/json"})
            try:
                with urllib.request.urlopen(request, timeout=self.timeout) as response:
                    reply = json.loads(response.read().decode("utf-8"))
                if "text" not in reply:
                    raise StageOutputInvalidError(self.stage, "response lacks a `text` field")
                return str(reply["text"])
            except (urllib.error.URLError, OSError, json.JSONDecodeError) as exc:
                last_error = exc
        raise BackendUnavailableError(
            f"{self.endpoint} unreachable after {self.retries + 1} attempts: {last_error}")


def build_backends(config: dict, base_dir: str | Path = ".") -> dict[str, StageBackend]:
    """Construct per-stage backends from a config mapping.

    Each stage entry is {"kind": rule|identity|scripted|remote, ...} with
    "endpoint" for remote and "script_file" (or inline "outputs") for
    scripted. Missing stages default to the rule backend.
    """
    backends: dict[str, StageBackend] = {}
    for stage in STAGES:
        entry = config.get(stage, {"kind": "rule"})
        kind = entry.get("kind", "rule")
        if kind == "rule":
            backends[stage] = RuleBackend(stage)
        elif kind == "identity":
            backends[stage] = IdentityBackend(stage)
        elif kind == "scripted":
            if "script_file" in entry:
                data = json.loads(Path(base_dir, entry["script_file"]).read_text("utf-8"))
                outputs = data.get(stage, data) if isinstance(data, dict) else {}
            else:
                outputs = entry.get("outputs", {})
            backends[stage] = ScriptedBackend(stage, dict(outputs))
        elif kind == "remote":
            backends[stage] = RemoteBackend(stage, entry["endpoint"],
                                            timeout=float(entry.get("timeout", 30.0)),
                                            retries=int(entry.get("retries", 2)))
        else:
            raise FormatError(f"unknown backend kind {kind!r} for stage {stage}")
    return backends


# --- prompt templates ---------------------------------------------------------

def load_prompt(template_id: str, template_dir: str | Path | None = None) -> string.Template:
    if template_dir is not None:
        path = Path(template_dir) / f"{template_id}.txt"
        if not path.exists():
            raise TemplateNotFoundError(f"no template {template_id!r} in {template_dir}")
        return string.Template(path.read_text(encoding="utf-8"))
    ref = resources.files("sqlsteps").joinpath("assets", "prompts", f"{template_id}.txt")
    if not ref.is_file():
        raise TemplateNotFoundError(f"no packaged template {template_id!r}")
    return string.Template(ref.read_text(encoding="utf-8"))


@dataclass
class Feedback:
    trajectory_text: str
    prompt: str
    reverted_sql: str | None


def make_feedback(t: Trajectory, d: DatabaseInput, template_id: str = "regenerate_sql",
                  template_dir: str | Path | None = None) -> Feedback:
    """Render the correction feedback handed to a generator model."""
    template = load_prompt(template_id, template_dir)
    trajectory_text = render_trajectory(t)
    reverted: str | None
    try:
        reverted = revert(t, d).text
    except _BRIDGE_ERRORS:
        reverted = None
    prompt = template.safe_substitute(
        database=render_database_input(d),
        trajectory=trajectory_text,
        sql=reverted or "",
    )
    return Feedback(trajectory_text=trajectory_text, prompt=prompt, reverted_sql=reverted)


# --- pipeline ---------------------------------------------------------------------

@dataclass
class StageRecord:
    stage: str
    backend: str
    output: str | None
    elapsed: float
    identity: bool
    error: str | None = None


@dataclass
class PipelineTrace:
    initial_sql: str
    question: str
    trajectory_initial: Trajectory | None = None  # bam output
    masked: MaskedTrajectory | None = None  # sam_mask output
    trajectory_schema: Trajectory | None = None  # sam_fill output
    trajectory_final: Trajectory | None = None  # lom output
    feedback: Feedback | None = None
    stages: list[StageRecord] = field(default_factory=list)
    error: str | None = None

    def final_trajectory(self) -> Trajectory | None:
        return (self.trajectory_final or self.trajectory_schema
                or self.trajectory_initial)


def run_pipeline(d: DatabaseInput, question: str, initial_sql: str,
                 backends: dict[str, StageBackend], seed_id: str | None = None,
                 dialect: str = "sqlite", template_id: str = "regenerate_sql",
                 template_dir: str | Path | None = None) -> PipelineTrace:
    """Run bam -> sam_mask -> sam_fill -> lom and build feedback.

    A stage whose output does not parse stops the refinement; the last valid
    trajectory feeds the feedback (degraded mode).
    """
    missing = [s for s in STAGES if s not in backends]
    if missing:
        raise ValueError(f"backends missing for stages {missing}")
    trace = PipelineTrace(initial_sql=initial_sql, question=question)
    base = {"db": render_database_input(d), "question": question, "dialect": dialect}
    if seed_id is not None:
        base["id"] = seed_id

    out = _run_stage(trace, backends["bam"], {**base, "sql": initial_sql})
    if out is not None:
        try:
            trace.trajectory_initial = parse_trajectory(out)
        except SqlStepsError as exc:
            _mark_invalid(trace, "bam", exc)
    if trace.trajectory_initial is None:
        trace.error = trace.error or "bam produced no trajectory"
        return trace

    current = trace.trajectory_initial
    current_text = render_trajectory(current)

    out = _run_stage(trace, backends["sam_mask"], {**base, "trajectory": current_text})
    template: str | None = None
    if out is not None:
        try:
            masked = parse_masked_template(out)
            if masked.slots:
                recover_slot_values(out, current_text)  # alignment check
            trace.masked = masked
            template = out
        except SqlStepsError as exc:
            _mark_invalid(trace, "sam_mask", exc)
    if template is not None:
        out = _run_stage(trace, backends["sam_fill"],
                         {**base, "schema_list": _schema_list_text(initial_sql, dialect),
                          "masked": template, "trajectory": current_text})
        if out is not None:
            try:
                trace.trajectory_schema = parse_trajectory(out)
                current = trace.trajectory_schema
                current_text = render_trajectory(current)
            except SqlStepsError as exc:
                _mark_invalid(trace, "sam_fill", exc)

    if trace.error is None:
        out = _run_stage(trace, backends["lom"], {**base, "trajectory": current_text})
        if out is not None:
            try:
                trace.trajectory_final = parse_trajectory(out)
            except SqlStepsError as exc:
                _mark_invalid(trace, "lom", exc)

    final = trace.final_trajectory()
    if final is not None:
        trace.feedback = make_feedback(final, d, template_id, template_dir)
    return trace


def _schema_list_text(initial_sql: str, dialect: str) -> str:
    query = SqlQuery.raw(initial_sql, dialect)
    if query.ast is None:
        return "tables: -; columns: -"
    return extract_schema(query).render()


def _run_stage(trace: PipelineTrace, backend: StageBackend,
               payload: dict[str, str]) -> str | None:
    if trace.error is not None:
        return None
    start = time.perf_counter()
    try:
        out = backend.invoke(payload)
        trace.stages.append(StageRecord(backend.stage, backend.describe(), out,
                                        time.perf_counter() - start, backend.identity))
        return out
    except BackendUnavailableError:
        raise
    except SqlStepsError as exc:
        trace.stages.append(StageRecord(backend.stage, backend.describe(), None,
                                        time.perf_counter() - start, backend.identity,
                                        error=str(exc)))
        trace.error = f"{backend.stage}: {exc}"
        return None


def _mark_invalid(trace: PipelineTrace, stage: str, exc: Exception) -> None:
    error = StageOutputInvalidError(stage, str(exc))
    if trace.stages and trace.stages[-1].stage == stage:
        trace.stages[-1].error = str(error)
    trace.error = str(error)


# --- batch correction ---------------------------------------------------------------

Generator = Callable[[dict[str, str]], str]


@dataclass
class CorrectionResult:
    seed_id: str
    initial_sql: str
    feedback: Feedback | None
    regenerated_sql: str | None
    overcorrection_flag: bool
    trace: PipelineTrace | None
    error: str | None = None


def correct_batch(seeds: list[SeedExample], backends: dict[str, StageBackend],
                  schemas: dict[str, DatabaseInput], generator: Generator | None = None,
                  jobs: int = 4, dialect: str = "sqlite",
                  template_dir: str | Path | None = None) -> list[CorrectionResult]:
    """One single-round correction per seed; per-seed failures never abort the batch."""

    def one(seed: SeedExample) -> CorrectionResult:
        try:
            if seed.db not in schemas:
                raise MissingSchemaError(f"no schema for database {seed.db!r}")
            d = schemas[seed.db]
            trace = run_pipeline(d, seed.question, seed.initial_sql, backends,
                                 seed_id=seed.id, dialect=dialect,
                                 template_dir=template_dir)
            regenerated = None
            if generator is not None and trace.feedback is not None:
                regenerated = generator({
                    "db": render_database_input(d),
                    "question": seed.question,
                    "sql": seed.initial_sql,
                    "feedback": trace.feedback.prompt,
                    "trajectory": trace.feedback.trajectory_text,
                    "reverted_sql": trace.feedback.reverted_sql or "",
                    "id": seed.id,
                })
            flag = _overcorrection_flag(seed, d, trace)
            return CorrectionResult(seed.id, seed.initial_sql, trace.feedback,
                                    regenerated, flag, trace, error=trace.error)
        except SqlStepsError as exc:
            return CorrectionResult(seed.id, seed.initial_sql, None, None, False,
                                    None, error=str(exc))

    with ThreadPoolExecutor(max_workers=max(1, jobs)) as pool:
        results = list(pool.map(one, seeds))
    return sorted(results, key=lambda r: r.seed_id)


def _overcorrection_flag(seed: SeedExample, d: DatabaseInput,
                         trace: PipelineTrace) -> bool:
    """True when an initially gold-equal SQL would be rewritten to differ."""
    if trace.feedback is None or trace.feedback.reverted_sql is None:
        return False
    initial = SqlQuery.raw(seed.initial_sql)
    gold = SqlQuery.raw(seed.gold_sql)
    if initial.ast is None or gold.ast is None:
        return False
    try:
        initial_canon = canonicalize(initial, d)
        if initial_canon != canonicalize(gold, d):
            return False
        reverted = SqlQuery.raw(trace.feedback.reverted_sql)
        if reverted.ast is None:
            return True
        return canonicalize(reverted, d) != initial_canon
    except _BRIDGE_ERRORS:
        return False
