import json

import pytest

from sqlsteps.corpus import (
    CorpusRecord,
    SeedExample,
    TARGET_BAM,
    TARGET_LOM,
    TARGET_SAM1,
    TARGET_SAM2,
    build_bam_corpus,
    build_lom_corpus,
    build_sam_corpus,
    compute_stats,
    read_corpus,
    read_seed_file,
    write_corpus,
)
from sqlsteps.errors import FormatError, MissingSchemaError
from sqlsteps.perturb import PerturbationConfig
from sqlsteps.trajectory import parse_trajectory

from conftest import golden


@pytest.fixture(scope="module")
def bam(fixture_seeds, schemas):
    return build_bam_corpus(fixture_seeds, schemas)


def test_bam_filters_window_function_seed(bam):
    assert len(bam.records) == 9
    assert len(bam.failures) == 1
    assert bam.failures[0][0] == "s10"


def test_bam_filter_soundness(bam, fixture_seeds, schemas):
    from sqlsteps.bridge import round_trip
    from sqlsteps.sqlast import parse_sql

    seeds = {s.id: s for s in fixture_seeds}
    for record in bam.records:
        seed = seeds[record.provenance["seed_id"]]
        report = round_trip(parse_sql(seed.gold_sql), schemas[seed.db])
        assert report.verdict == "pass"


def test_bam_case_study_output_is_golden_trajectory(bam):
    record = next(r for r in bam.records if r.provenance["seed_id"] == "s01")
    assert record.target == TARGET_BAM
    assert record.output == golden("table9_gold_decomposed.traj")
    assert record.provenance["round_trip"] == "pass"


def test_bam_empty_seed_list(schemas):
    result = build_bam_corpus([], schemas)
    assert result.records == []
    assert result.stats.counts == {}
    assert result.stats.mean_input_tokens == 0.0


def test_bam_missing_schema_raises(fixture_seeds):
    with pytest.raises(MissingSchemaError):
        build_bam_corpus(fixture_seeds, {})


def test_sam_counts_and_phase_coupling(bam, fixture_seeds, schemas):
    sam = build_sam_corpus(bam.records, fixture_seeds, schemas)
    assert len(sam.records) == 18  # 9 + 9
    phase1 = {r.provenance["seed_id"]: r for r in sam.records if r.target == TARGET_SAM1}
    phase2 = {r.provenance["seed_id"]: r for r in sam.records if r.target == TARGET_SAM2}
    assert len(phase1) == len(phase2) == 9
    for seed_id, record in phase1.items():
        assert record.output == phase2[seed_id].input["masked"]


def test_sam_case_study_schema_list_carries_wrong_column(bam, fixture_seeds, schemas):
    sam = build_sam_corpus(bam.records, fixture_seeds, schemas)
    record = next(r for r in sam.records
                  if r.target == TARGET_SAM2 and r.provenance["seed_id"] == "s01")
    assert "schools.Year" in record.input["schema_list"]
    assert record.output == golden("table9_gold_decomposed.traj")


def test_sam_unparseable_initial_still_emits(schemas, bam, fixture_seeds):
    seeds = [SeedExample(id="s01", db="schools", question="q",
                         gold_sql=golden("table9_gold.sql"),
                         initial_sql="SELECT ??? FROM")]
    records = [r for r in bam.records if r.provenance["seed_id"] == "s01"]
    sam = build_sam_corpus(records, seeds, schemas)
    phase2 = next(r for r in sam.records if r.target == TARGET_SAM2)
    assert phase2.provenance.get("initial_parse_failed") is True
    assert phase2.input["schema_list"] == "tables: -; columns: -"


def test_lom_closed_form_counts(bam, fixture_seeds, schemas):
    cfg = PerturbationConfig(k=2, seed=17)
    lom = build_lom_corpus(bam.records, fixture_seeds, cfg, schemas)
    # 3 wrong initials + 6 correct x K=2 = 15 positives, floor(15/4) = 3 negatives
    assert len(lom.records) == 18
    identities = [r for r in lom.records if r.input["trajectory"] == r.output]
    assert len(identities) == 3
    sources = {r.provenance["source"] for r in lom.records}
    assert sources == {"initial-error", "perturbation", "identity-negative"}


def test_lom_zero_k_and_all_correct(schemas, fixture_seeds, bam):
    correct_ids = {"s02", "s03", "s04", "s05", "s06", "s07"}
    seeds = [s for s in fixture_seeds if s.id in correct_ids]
    records = [r for r in bam.records if r.provenance["seed_id"] in correct_ids]
    cfg = PerturbationConfig(k=0, seed=1)
    lom = build_lom_corpus(records, seeds, cfg, schemas)
    assert lom.records == []


def test_lom_case_study_record_maps_error_to_gold(bam, fixture_seeds, schemas):
    cfg = PerturbationConfig(k=1, seed=3)
    lom = build_lom_corpus(bam.records, fixture_seeds, cfg, schemas)
    record = next(r for r in lom.records
                  if r.provenance["seed_id"] == "s01"
                  and r.provenance["source"] == "initial-error")
    assert record.input["trajectory"] == golden("table9_bam.traj")
    assert record.output == golden("table9_gold_decomposed.traj")
    parse_trajectory(record.input["trajectory"])
    parse_trajectory(record.output)


def test_lom_positive_outputs_round_trip_to_gold(bam, fixture_seeds, schemas):
    from sqlsteps.bridge import revert
    from sqlsteps.sqlast import SqlQuery, canonicalize

    cfg = PerturbationConfig(k=1, seed=5)
    lom = build_lom_corpus(bam.records, fixture_seeds, cfg, schemas)
    seeds = {s.id: s for s in fixture_seeds}
    for record in lom.records:
        if record.provenance["source"] == "identity-negative":
            continue
        seed = seeds[record.provenance["seed_id"]]
        d = schemas[seed.db]
        reverted = revert(parse_trajectory(record.output), d)
        gold = SqlQuery.raw(seed.gold_sql)
        assert canonicalize(reverted, d) == canonicalize(gold, d)


def test_write_read_byte_identical(tmp_path, bam):
    path = tmp_path / "bam.corpus"
    write_corpus(bam.records, path, "bam", bam.stats)
    first = path.read_bytes()
    records, stats, target = read_corpus(path)
    assert target == "bam"
    assert stats.to_dict() == bam.stats.to_dict()
    write_corpus(records, path, target, stats)
    assert path.read_bytes() == first


def test_stats_recompute_from_file(tmp_path, bam, fixture_seeds, schemas):
    cfg = PerturbationConfig(k=2, seed=17)
    lom = build_lom_corpus(bam.records, fixture_seeds, cfg, schemas)
    path = tmp_path / "lom.corpus"
    write_corpus(lom.records, path, "lom", lom.stats)
    records, stored, _ = read_corpus(path)
    assert len(records) == 18
    assert compute_stats(records).to_dict() == stored.to_dict()


def test_truncated_file_names_last_complete_line(tmp_path, bam):
    path = tmp_path / "bam.corpus"
    write_corpus(bam.records, path, "bam", bam.stats)
    lines = path.read_text().splitlines()
    clipped = "\n".join(lines[:3] + [lines[3][: len(lines[3]) // 2]])
    path.write_text(clipped)
    with pytest.raises(FormatError) as err:
        read_corpus(path)
    assert "last complete line is 3" in str(err.value)


def test_missing_header_rejected(tmp_path):
    path = tmp_path / "x.corpus"
    path.write_text('{"target": "bam"}\n')
    with pytest.raises(FormatError):
        read_corpus(path)


def test_seed_file_roundtrip(fixture_seeds):
    assert len(fixture_seeds) == 10
    assert fixture_seeds[0].id == "s01"
    assert fixture_seeds[0].evidence


def test_seed_file_bad_json(tmp_path):
    path = tmp_path / "seeds.jsonl"
    path.write_text('{"id": "a"\n')
    with pytest.raises(FormatError):
        read_seed_file(path)


def test_record_token_counting():
    record = CorpusRecord(target=TARGET_BAM, input={"sql": "SELECT a FROM t"},
                          output="res = df.select(t.a)\n", provenance={"seed_id": "x"})
    stats = compute_stats([record])
    assert stats.mean_input_tokens == 4.0  # SELECT / a / FROM / t
    assert stats.mean_output_tokens == 3.0  # res / = / df.select(t.a)
    assert stats.counts == {TARGET_BAM: 1}


def test_stats_json_round(tmp_path):
    record = CorpusRecord(target=TARGET_LOM, input={"a": "x y"}, output="z",
                          provenance={"seed_id": "s"})
    path = tmp_path / "c.corpus"
    write_corpus([record], path, "lom")
    text = path.read_text()
    assert text.startswith("#corpus v1 lom\n")
    assert json.loads(text.splitlines()[1])["target"] == TARGET_LOM
