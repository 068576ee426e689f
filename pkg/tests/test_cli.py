import json

from sqlsteps.cli import EXIT_ERROR, EXIT_OK, EXIT_UNSUPPORTED, dispatch

from conftest import FIXTURES, golden

SCHEMAS = str(FIXTURES / "schemas")
SEEDS = str(FIXTURES / "seeds" / "fixture_seeds.jsonl")
DBS = str(FIXTURES / "dbs")


def run(capsys, argv):
    code = dispatch(argv)
    captured = capsys.readouterr()
    return code, captured.out, captured.err


def test_roundtrip_pass_exit_zero(capsys):
    code, out, _ = run(capsys, ["--schemas", SCHEMAS, "roundtrip", "--db", "schools",
                                "--sql", golden("table9_gold.sql")])
    assert code == EXIT_OK
    assert out.strip() == "Pass"


def test_roundtrip_unsupported_exit_two(capsys):
    code, out, _ = run(capsys, ["--schemas", SCHEMAS, "roundtrip", "--db", "schools",
                                "--sql", "SELECT COUNT(DISTINCT County) FROM schools"])
    assert code == EXIT_UNSUPPORTED
    assert out.startswith("Unsupported")


def test_unknown_verb_exit_one(capsys):
    code, _, err = run(capsys, ["frobnicate"])
    assert code == EXIT_ERROR
    assert "usage error" in err


def test_perturb_requires_seed(capsys, tmp_path):
    infile = tmp_path / "t.jsonl"
    infile.write_text(json.dumps({"trajectory": "res = df.select(schools.SOC)"}) + "\n")
    code, _, err = run(capsys, ["--schemas", SCHEMAS, "perturb", "--db", "schools",
                                "--in", str(infile)])
    assert code == EXIT_ERROR
    assert "--seed" in err


def test_decompose_and_revert_pipe(capsys, tmp_path):
    code, out, _ = run(capsys, ["--schemas", SCHEMAS, "decompose", "--db", "schools",
                                "--sql", golden("table9_initial.sql")])
    assert code == EXIT_OK
    assert out == golden("table9_bam.traj")
    infile = tmp_path / "t.traj"
    infile.write_text(out)
    code, sql_out, _ = run(capsys, ["--schemas", SCHEMAS, "revert", "--db", "schools",
                                    "--in", str(infile)])
    assert code == EXIT_OK
    assert sql_out.startswith("SELECT schools.County")


def test_mask_and_fill(capsys, tmp_path):
    code, out, _ = run(capsys, ["--format", "structured", "mask", "--in",
                                str(FIXTURES / "golden" / "table9_bam_asprinted.traj")])
    assert code == EXIT_OK
    payload = json.loads(out)
    assert len(payload["slots"]) == 7
    template = tmp_path / "m.txt"
    template.write_text(payload["template"])
    values = ",".join(s["value"].replace("schools.Year", "schools.ClosedDate")
                      for s in payload["slots"])
    code, filled, _ = run(capsys, ["--schemas", SCHEMAS, "fill", "--db", "schools",
                                   "--in", str(template), "--values", values])
    assert code == EXIT_OK
    assert filled == golden("table9_sam.traj")


def test_extract_schema_verb(capsys):
    code, out, _ = run(capsys, ["extract-schema", "--sql", "SELECT a FROM t JOIN u ON t.id = u.id"])
    assert code == EXIT_OK
    assert out.strip() == "tables: t, u; columns: ?.a, t.id, u.id"


def test_perturb_structured_output(capsys, tmp_path):
    infile = tmp_path / "t.jsonl"
    infile.write_text(json.dumps(
        {"trajectory": golden("table9_sam.traj")}) + "\n")
    code, out, _ = run(capsys, ["--schemas", SCHEMAS, "--seed", "9", "perturb",
                                "--db", "schools", "--k", "2", "--in", str(infile)])
    assert code == EXIT_OK
    lines = [json.loads(line) for line in out.splitlines() if line.strip()]
    assert len(lines) == 2
    assert all({"erroneous", "verified", "record"} <= set(line) for line in lines)


def test_build_corpus_and_stats(capsys, tmp_path):
    out_dir = tmp_path / "corpora"
    code, out, _ = run(capsys, ["--schemas", SCHEMAS, "--seed", "17", "build-corpus",
                                "--target", "all", "--seeds", SEEDS,
                                "--out", str(out_dir), "--k", "2"])
    assert code == EXIT_OK
    assert "bam: 9 records" in out
    assert "sam: 18 records" in out
    assert "lom: 18 records" in out
    code, out, _ = run(capsys, ["corpus-stats", "--in", str(out_dir / "lom.corpus")])
    assert code == EXIT_OK
    assert "stored == recomputed: True" in out


def test_orchestrate_feedback_only(capsys, tmp_path):
    out_file = tmp_path / "results.jsonl"
    code, _, _ = run(capsys, ["--schemas", SCHEMAS, "orchestrate", "--seeds", SEEDS,
                              "--out", str(out_file)])
    assert code == EXIT_OK
    lines = [json.loads(line) for line in out_file.read_text().splitlines()]
    assert len(lines) == 10
    assert all(line["reverted_sql"] for line in lines)


def test_eval_verb(capsys, tmp_path):
    pred = tmp_path / "pred.jsonl"
    pred.write_text(json.dumps({"id": "s01", "sql": golden("table9_gold.sql")}) + "\n")
    code, out, _ = run(capsys, ["--format", "structured", "--schemas", SCHEMAS, "eval",
                                "--pred", str(pred), "--seeds", SEEDS, "--dbs", DBS])
    assert code == EXIT_OK
    payload = json.loads(out)
    s01 = next(v for v in payload["per_instance"] if v["seed_id"] == "s01")
    assert s01["ex_match"] is True


def test_tag_errors_verb(capsys, tmp_path):
    pred = tmp_path / "pred.jsonl"
    pred.write_text(json.dumps(
        {"id": "s02", "sql": "SELECT customers.city FROM customers WHERE customers.age > 30"})
        + "\n")
    code, out, _ = run(capsys, ["--schemas", SCHEMAS, "tag-errors", "--pred", str(pred),
                                "--seeds", SEEDS])
    assert code == EXIT_OK
    assert "s02: schema/SchemaContradiction" in out


def test_catalog_structured(capsys):
    code, out, _ = run(capsys, ["--format", "structured", "catalog"])
    assert code == EXIT_OK
    payload = json.loads(out)
    names = {a["name"] for a in payload["actions"]}
    assert {"select", "where", "groupby", "having", "orderby", "limit", "distinct",
            "union", "intersect", "except", "sum", "average", "count", "min", "max",
            "cast", "calculation", "substr"} == names
    categories = {a["category"] for a in payload["actions"]}
    assert categories == {"clause", "dataframe", "aggregation", "operator"}
