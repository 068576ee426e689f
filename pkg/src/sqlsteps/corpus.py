"""Training-corpus construction: conversion, masking, and perturbation records.

Three corpora are built from a seed set of (database, question, gold SQL,
initial SQL) tuples: conversion pairs filtered by round-trip verification
(`bam`), the two-phase masking pairs (`sam-phase1`/`sam-phase2`), and
correction pairs from real initial errors plus perturbation augmentation with
identity negatives (`lom`). Files are line-delimited JSON with a version
header and a trailing stats line.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

from .bridge import PASS, decompose, round_trip
from .errors import (
    FormatError,
    InvalidChainError,
    JoinPathNotFoundError,
    MissingSchemaError,
    SchemaMismatchError,
    SqlSyntaxError,
    UnsupportedSqlError,
)
from .masking import mask_schema
from .perturb import PerturbationConfig, augment, inject_negatives
from .schema import DatabaseInput, SchemaList, extract_schema, render_database_input
from .sqlast import SqlQuery, canonicalize
from .trajectory import parse_trajectory, render_trajectory

log = logging.getLogger(__name__)

TARGET_BAM = "bam"
TARGET_SAM1 = "sam-phase1"
TARGET_SAM2 = "sam-phase2"
TARGET_LOM = "lom"
TARGETS = (TARGET_BAM, TARGET_SAM1, TARGET_SAM2, TARGET_LOM)

_CONVERSION_ERRORS = (UnsupportedSqlError, SchemaMismatchError, JoinPathNotFoundError,
                      InvalidChainError, SqlSyntaxError)


@dataclass(frozen=True)
class SeedExample:
    id: str
    db: str
    question: str
    gold_sql: str
    initial_sql: str
    evidence: str | None = None
    difficulty: str | None = None

    @staticmethod
    def from_dict(data: dict) -> "SeedExample":
        try:
            return SeedExample(
                id=str(data["id"]),
                db=str(data["db"]),
                question=str(data["question"]),
                gold_sql=str(data["gold_sql"]),
                initial_sql=str(data["initial_sql"]),
                evidence=data.get("evidence"),
                difficulty=data.get("difficulty"),
            )
        except KeyError as exc:
            raise FormatError(f"seed record is missing field {exc}")

    def to_dict(self) -> dict:
        out = {"id": self.id, "db": self.db, "question": self.question,
               "gold_sql": self.gold_sql, "initial_sql": self.initial_sql}
        if self.evidence is not None:
            out["evidence"] = self.evidence
        if self.difficulty is not None:
            out["difficulty"] = self.difficulty
        return out


def read_seed_file(path: str | Path) -> list[SeedExample]:
    seeds = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip() or line.startswith("#"):
            continue
        try:
            seeds.append(SeedExample.from_dict(json.loads(line)))
        except json.JSONDecodeError as exc:
            raise FormatError(f"bad seed JSON: {exc.msg}", lineno)
    return seeds


def write_seed_file(seeds: list[SeedExample], path: str | Path) -> None:
    text = "".join(json.dumps(s.to_dict(), sort_keys=True) + "\n" for s in seeds)
    Path(path).write_text(text, encoding="utf-8")


@dataclass(frozen=True)
class CorpusRecord:
    target: str
    input: dict[str, str]
    output: str
    provenance: dict

    def to_dict(self) -> dict:
        return {"target": self.target, "input": self.input, "output": self.output,
                "provenance": self.provenance}

    @staticmethod
    def from_dict(data: dict) -> "CorpusRecord":
        try:
            return CorpusRecord(target=data["target"], input=dict(data["input"]),
                                output=data["output"], provenance=dict(data["provenance"]))
        except (KeyError, TypeError) as exc:
            raise FormatError(f"bad corpus record: {exc}")

    def input_text(self) -> str:
        return " ".join(str(self.input[k]) for k in sorted(self.input))


@dataclass(frozen=True)
class CorpusStats:
    counts: dict[str, int]
    mean_input_tokens: float
    mean_output_tokens: float
    round_trip_pass_rate: float | None

    def to_dict(self) -> dict:
        return {"counts": dict(sorted(self.counts.items())),
                "mean_input_tokens": self.mean_input_tokens,
                "mean_output_tokens": self.mean_output_tokens,
                "round_trip_pass_rate": self.round_trip_pass_rate}


@dataclass
class BuildResult:
    records: list[CorpusRecord]
    stats: CorpusStats
    failures: list[tuple[str, str, str]] = field(default_factory=list)  # (seed id, verdict, reason)


def compute_stats(records: list[CorpusRecord]) -> CorpusStats:
    """Whitespace-token means and verdict rates, recomputable from a file."""
    counts: dict[str, int] = {}
    in_tokens = out_tokens = 0
    rt_total = rt_pass = 0
    for record in records:
        counts[record.target] = counts.get(record.target, 0) + 1
        in_tokens += len(record.input_text().split())
        out_tokens += len(record.output.split())
        verdict = record.provenance.get("round_trip")
        if verdict is not None:
            rt_total += 1
            rt_pass += verdict == PASS
    n = len(records)
    return CorpusStats(
        counts=counts,
        mean_input_tokens=round(in_tokens / n, 4) if n else 0.0,
        mean_output_tokens=round(out_tokens / n, 4) if n else 0.0,
        round_trip_pass_rate=round(rt_pass / rt_total, 4) if rt_total else None,
    )


def _require_schema(seed: SeedExample, schemas: dict[str, DatabaseInput]) -> DatabaseInput:
    if seed.db not in schemas:
        raise MissingSchemaError(f"seed {seed.id!r} references unknown database {seed.db!r}")
    return schemas[seed.db]


# --- conversion corpus -------------------------------------------------------

def build_bam_corpus(seeds: list[SeedExample], schemas: dict[str, DatabaseInput],
                     input_source: str = "gold") -> BuildResult:
    """One (SQL -> trajectory) record per seed whose gold SQL round-trips."""
    if input_source not in ("gold", "initial"):
        raise ValueError("input_source must be 'gold' or 'initial'")
    records: list[CorpusRecord] = []
    failures: list[tuple[str, str, str]] = []
    for seed in sorted(seeds, key=lambda s: s.id):
        d = _require_schema(seed, schemas)
        gold = SqlQuery.raw(seed.gold_sql)
        if gold.ast is None:
            failures.append((seed.id, "unsupported", gold.parse_error or "gold does not parse"))
            log.warning("seed %s: gold SQL does not parse", seed.id)
            continue
        report = round_trip(gold, d)
        if report.verdict != PASS:
            failures.append((seed.id, report.verdict, report.reason or report.diff))
            log.warning("seed %s: round trip %s", seed.id, report.verdict)
            continue
        assert report.trajectory is not None
        input_sql = seed.gold_sql if input_source == "gold" else seed.initial_sql
        records.append(CorpusRecord(
            target=TARGET_BAM,
            input={"sql": input_sql},
            output=render_trajectory(report.trajectory),
            provenance={"seed_id": seed.id, "round_trip": report.verdict},
        ))
    return BuildResult(records, compute_stats(records), failures)


# --- masking corpus ------------------------------------------------------------

def build_sam_corpus(bam_records: list[CorpusRecord], seeds: list[SeedExample],
                     schemas: dict[str, DatabaseInput]) -> BuildResult:
    """Phase-1 (trajectory -> masked) and phase-2 (context -> filled) records."""
    by_id = {seed.id: seed for seed in seeds}
    records: list[CorpusRecord] = []
    failures: list[tuple[str, str, str]] = []
    for bam in bam_records:
        seed = by_id.get(bam.provenance.get("seed_id"))
        if seed is None:
            failures.append((str(bam.provenance.get("seed_id")), "missing-seed", ""))
            continue
        d = _require_schema(seed, schemas)
        trajectory = parse_trajectory(bam.output)
        masked = mask_schema(trajectory)
        schema_list, parse_failed = _initial_schema_list(seed)
        records.append(CorpusRecord(
            target=TARGET_SAM1,
            input={"trajectory": bam.output},
            output=masked.template,
            provenance={"seed_id": seed.id},
        ))
        provenance = {"seed_id": seed.id}
        if parse_failed:
            provenance["initial_parse_failed"] = True
        records.append(CorpusRecord(
            target=TARGET_SAM2,
            input={
                "db": render_database_input(d),
                "question": seed.question,
                "schema_list": schema_list.render(),
                "masked": masked.template,
            },
            output=bam.output,
            provenance=provenance,
        ))
    return BuildResult(records, compute_stats(records), failures)


def _initial_schema_list(seed: SeedExample) -> tuple[SchemaList, bool]:
    query = SqlQuery.raw(seed.initial_sql)
    if query.ast is None:
        return SchemaList((), ()), True
    return extract_schema(query), False


# --- correction corpus -----------------------------------------------------------

def build_lom_corpus(bam_records: list[CorpusRecord], seeds: list[SeedExample],
                     cfg: PerturbationConfig, schemas: dict[str, DatabaseInput],
                     dbs: dict | None = None,
                     negative_ratio: float = 4.0) -> BuildResult:
    """Correction pairs from wrong initial SQLs plus perturbation augmentation.

    Positives map an erroneous trajectory to the verified one; identity
    negatives are injected at `negative_ratio` positives per negative.
    """
    by_id = {seed.id: seed for seed in seeds}
    failures: list[tuple[str, str, str]] = []
    positives: list[tuple[SeedExample, str, str, dict]] = []  # (seed, err, verified, provenance)
    for bam in bam_records:
        seed = by_id.get(bam.provenance.get("seed_id"))
        if seed is None:
            failures.append((str(bam.provenance.get("seed_id")), "missing-seed", ""))
            continue
        d = _require_schema(seed, schemas)
        verified_text = bam.output
        verified = parse_trajectory(verified_text)
        if _initial_is_correct(seed, d, dbs):
            report = augment([verified], cfg, d)
            for index, reason in report.skipped:
                failures.append((seed.id, "no-viable-perturbation", reason))
            for pair in report.pairs:
                positives.append((seed, render_trajectory(pair.erroneous), verified_text,
                                  {"seed_id": seed.id, "source": "perturbation",
                                   "perturbation": pair.record.to_dict()}))
        else:
            initial = SqlQuery.raw(seed.initial_sql)
            if initial.ast is None:
                failures.append((seed.id, "initial-unparseable", initial.parse_error or ""))
                continue
            try:
                erroneous = decompose(initial, d)
            except _CONVERSION_ERRORS as exc:
                failures.append((seed.id, "initial-unconvertible", str(exc)))
                continue
            positives.append((seed, render_trajectory(erroneous), verified_text,
                              {"seed_id": seed.id, "source": "initial-error"}))
    records = _assemble_lom_records(positives, cfg, negative_ratio)
    return BuildResult(records, compute_stats(records), failures)


def _assemble_lom_records(positives: list[tuple[SeedExample, str, str, dict]],
                          cfg: PerturbationConfig,
                          negative_ratio: float) -> list[CorpusRecord]:
    pair_trajectories = [(parse_trajectory(err), parse_trajectory(ver))
                         for _, err, ver, _ in positives]
    combined = inject_negatives(pair_trajectories, ratio=negative_ratio, seed=cfg.seed)
    # inject_negatives works on bare pairs; re-attach seed context by pair text
    rendered = {(err_text, ver_text): (seed, prov)
                for (seed, err_text, ver_text, prov) in positives}
    by_verified = {ver: (seed, prov) for (seed, err, ver, prov) in positives}
    records = []
    for err, ver in combined:
        err_text, ver_text = render_trajectory(err), render_trajectory(ver)
        if err_text == ver_text:
            seed, _ = by_verified[ver_text]
            provenance: dict = {"seed_id": seed.id, "source": "identity-negative"}
        else:
            seed, provenance = rendered[(err_text, ver_text)]
        records.append(CorpusRecord(
            target=TARGET_LOM,
            input={"db": seed.db, "question": seed.question, "trajectory": err_text},
            output=ver_text,
            provenance=provenance,
        ))
    return records


def _initial_is_correct(seed: SeedExample, d: DatabaseInput, dbs: dict | None) -> bool:
    """Execution match when a fixture database exists, else canonical equality."""
    if dbs and seed.db in dbs:
        from .evaluate import ex_match  # local import: evaluate depends on bridge

        gold = SqlQuery.raw(seed.gold_sql)
        pred = SqlQuery.raw(seed.initial_sql)
        return ex_match(pred, gold, dbs[seed.db])
    initial = SqlQuery.raw(seed.initial_sql)
    gold = SqlQuery.raw(seed.gold_sql)
    if initial.ast is None or gold.ast is None:
        return False
    try:
        return canonicalize(initial, d) == canonicalize(gold, d)
    except _CONVERSION_ERRORS:
        return False


# --- persistence -----------------------------------------------------------------

_HEADER_PREFIX = "#corpus v1 "
_STATS_PREFIX = "#stats "


def write_corpus(records: list[CorpusRecord], path: str | Path, target: str,
                 stats: CorpusStats | None = None) -> None:
    if target not in ("bam", "sam", "lom") and target not in TARGETS:
        raise ValueError(f"unknown corpus target {target!r}")
    stats = stats if stats is not None else compute_stats(records)
    lines = [_HEADER_PREFIX + target]
    lines.extend(json.dumps(r.to_dict(), sort_keys=True, ensure_ascii=False)
                 for r in records)
    lines.append(_STATS_PREFIX + json.dumps(stats.to_dict(), sort_keys=True))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_corpus(path: str | Path) -> tuple[list[CorpusRecord], CorpusStats, str]:
    """Returns (records, stored stats, target); verifies the header line."""
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or not lines[0].startswith(_HEADER_PREFIX):
        raise FormatError("missing corpus header line", 1)
    target = lines[0][len(_HEADER_PREFIX):].strip()
    records: list[CorpusRecord] = []
    stats: CorpusStats | None = None
    last_complete = 1
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        if line.startswith(_STATS_PREFIX):
            data = json.loads(line[len(_STATS_PREFIX):])
            stats = CorpusStats(counts=data["counts"],
                                mean_input_tokens=data["mean_input_tokens"],
                                mean_output_tokens=data["mean_output_tokens"],
                                round_trip_pass_rate=data["round_trip_pass_rate"])
            last_complete = lineno
            continue
        try:
            records.append(CorpusRecord.from_dict(json.loads(line)))
        except (json.JSONDecodeError, FormatError):
            raise FormatError(
                f"corrupt record (last complete line is {last_complete})", lineno)
        last_complete = lineno
    if stats is None:
        raise FormatError(f"missing stats footer (last complete line is {last_complete})")
    return records, stats, target
