import pytest

from sqlsteps.errors import FormatError
from sqlsteps.schema import (
    SENTINEL_TABLE,
    extract_schema,
    parse_database_text,
    render_database_input,
)
from sqlsteps.sqlast import parse_sql

from conftest import golden


def test_parse_and_render_schema_roundtrip(store):
    text = render_database_input(store)
    again = parse_database_text(text)
    assert again == store


def test_database_name_from_header():
    d = parse_database_text("database zoo\ntable pens\n  column id int pk")
    assert d.name == "zoo"


def test_empty_tables_rejected():
    with pytest.raises(FormatError):
        parse_database_text("database nothing\n")


def test_fk_to_missing_table_rejected():
    with pytest.raises(FormatError):
        parse_database_text("""
table a
  column id int pk
  column b_id int
  fk b_id -> b.id
""")


def test_double_primary_key_rejected():
    with pytest.raises(FormatError):
        parse_database_text("table a\n  column x int pk\n  column y int pk")


def test_samples_capped_at_three():
    with pytest.raises(FormatError):
        parse_database_text("table a\n  column x int\n  sample x 1|2|3|4")


def test_format_error_carries_line():
    with pytest.raises(FormatError) as err:
        parse_database_text("table a\n  column x int\n  bogus y")
    assert err.value.line == 3


def test_backticked_names():
    d = parse_database_text("table `my table`\n  column `a col` text")
    assert d.tables[0].name == "my table"
    assert d.tables[0].columns[0].name == "a col"
    assert "`my table`" in render_database_input(d)


def test_extract_schema_case_study():
    schema_list = extract_schema(parse_sql(golden("table9_initial.sql")))
    assert schema_list.tables == ("schools",)
    assert set(schema_list.columns) == {("schools", "County"), ("schools", "Year"),
                                        ("schools", "SOC")}


def test_extract_schema_select_literal_is_empty():
    schema_list = extract_schema(parse_sql("SELECT 1"))
    assert schema_list.is_empty


def test_extract_schema_sentinel_for_unresolvable():
    schema_list = extract_schema(parse_sql("SELECT a FROM t JOIN u ON t.id = u.id"))
    assert schema_list.tables == ("t", "u")
    assert schema_list.columns == ((SENTINEL_TABLE, "a"), ("t", "id"), ("u", "id"))


def test_extract_schema_first_appearance_order():
    schema_list = extract_schema(parse_sql(
        "SELECT t.b FROM t WHERE t.a = 1 GROUP BY t.b ORDER BY t.c"))
    assert schema_list.columns == (("t", "b"), ("t", "a"), ("t", "c"))


def test_extract_schema_resolves_aliases():
    schema_list = extract_schema(parse_sql("SELECT c.name FROM customers c"))
    assert schema_list.columns == (("customers", "name"),)


def test_extract_schema_includes_subquery_scope():
    schema_list = extract_schema(parse_sql(
        "SELECT a FROM t WHERE a > (SELECT MAX(b) FROM u)"))
    assert schema_list.tables == ("t", "u")
    assert ("u", "b") in schema_list.columns


def test_render_schema_list():
    schema_list = extract_schema(parse_sql("SELECT t.a FROM t"))
    assert schema_list.render() == "tables: t; columns: t.a"


def test_extraction_idempotent_across_round_trip(store):
    from sqlsteps.bridge import decompose, revert
    from sqlsteps.querygen import enumerate_queries

    for sql in enumerate_queries()[::17]:
        original = parse_sql(sql)
        reverted = revert(decompose(original, store), store)
        a = extract_schema(original)
        b = extract_schema(reverted)
        assert set(a.tables) == set(b.tables)
        assert set(a.columns) == set(b.columns)
