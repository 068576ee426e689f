import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sqlsteps.actions import (
    Aggregate,
    DATE_RE,
    FilterCondition,
    QualifiedColumn,
    Scalar,
    Select,
    Star,
    Trajectory,
    TrajectoryStep,
    Where,
)
from sqlsteps.errors import BindingError, TrajectorySyntaxError, UnknownActionError
from sqlsteps.schema import DatabaseInput
from sqlsteps.trajectory import (
    parse_filter_text,
    parse_trajectory,
    render_filter,
    render_trajectory,
    validate_trajectory,
)

from conftest import golden


def roundtrip(text: str) -> Trajectory:
    t = parse_trajectory(text)
    again = parse_trajectory(render_trajectory(t))
    assert again == t
    return t


def test_minimal_select():
    t = roundtrip("res = df.select(t.a)")
    assert len(t.steps) == 1
    assert t.steps[0].chain == (Select((QualifiedColumn("t", "a"),)),)
    assert render_trajectory(t) == "res = df.select(t.a)\n"


def test_case_study_text_parses_to_five_steps():
    t = roundtrip(golden("table9_bam_asprinted.traj"))
    assert len(t.steps) == 5
    assert [s.binding for s in t.steps] == ["df1", "df2", "df3", "df4", "res"]
    last = t.steps[-1].chain[0]
    assert isinstance(last, Select)
    assert last.elements[1] == Aggregate("count", QualifiedColumn("schools", "Year"))


def test_render_is_a_fixed_point():
    t = parse_trajectory(golden("table9_lom.traj"))
    once = render_trajectory(t)
    twice = render_trajectory(parse_trajectory(once))
    assert once == twice == golden("table9_lom.traj")


def test_missing_res_binding():
    with pytest.raises(BindingError):
        parse_trajectory("df1 = df.where(element = t.a, filter = 1)")


def test_res_must_be_last():
    text = "res = df.select(t.a)\ndf1 = df.where(element = t.a, filter = 1)"
    with pytest.raises(BindingError):
        parse_trajectory(text)


def test_forward_reference_rejected():
    text = "df1 = df2.select(t.a)\ndf2 = df.where(element = t.a, filter = 1)\nres = df2.select(t.a)"
    with pytest.raises(BindingError):
        parse_trajectory(text)


def test_duplicate_binding_rejected():
    text = "df1 = df.where(element = t.a, filter = 1)\ndf1 = df.where(element = t.b, filter = 2)\nres = df1.select(t.a)"
    with pytest.raises(BindingError):
        parse_trajectory(text)


def test_unknown_action_rejected():
    with pytest.raises(UnknownActionError):
        parse_trajectory("res = df.pivot(t.a)")


def test_action_names_case_insensitive():
    t = parse_trajectory("res = df.SELECT(t.a)")
    assert render_trajectory(t) == "res = df.select(t.a)\n"


def test_identifier_case_preserved():
    t = parse_trajectory("res = df.select(Schools.County)")
    assert render_trajectory(t) == "res = df.select(Schools.County)\n"


def test_avg_alias():
    t = parse_trajectory("res = df.select(avg(t.a))")
    assert render_trajectory(t) == "res = df.select(average(t.a))\n"


def test_nested_aggregate_rejected():
    with pytest.raises(TrajectorySyntaxError):
        parse_trajectory("res = df.select(sum(count(t.a)))")


def test_star_only_in_count_or_select():
    parse_trajectory("res = df.select(*)")
    parse_trajectory("res = df.select(count(*))")
    with pytest.raises(TrajectorySyntaxError):
        parse_trajectory("res = df.select(sum(*))")
    with pytest.raises(TrajectorySyntaxError):
        parse_trajectory("df1 = df.where(element = *, filter = 1)\nres = df1.select(t.a)")


def test_syntax_error_carries_position():
    with pytest.raises(TrajectorySyntaxError) as err:
        parse_trajectory("res = df.select(t.a")
    assert err.value.line == 1


def test_backtick_identifiers():
    t = parse_trajectory("res = df.select(`my table`.`a col`)")
    assert render_trajectory(t) == "res = df.select(`my table`.`a col`)\n"


def test_set_operands_and_limit_range():
    text = ("df1 = df.where(element = t.a, filter = 1)\n"
            "df2 = df1.select(t.a)\n"
            "df3 = df.select(u.b)\n"
            "res = df2.union(df3)")
    t = roundtrip(text)
    assert t.steps[-1].chain[0].name == "union"
    t2 = roundtrip("res = df.select(t.a).limit(2, 9)")
    limit = t2.steps[0].chain[1]
    assert (limit.offset, limit.count) == (2, 9)


@pytest.mark.parametrize("filter_text,comparator", [
    ("11", "="),
    ("'male'", "="),
    ("'between 1980-01-01 and 1989-12-31'", "between"),
    ("'>= 5'", ">="),
    ("'!= 3.5'", "!="),
    ("'in (1, 2, 3)'", "in"),
    ("'not in (''a'', ''b'')'", "not in"),
    ("'is null'", "is null"),
    ("'is not null'", "is not null"),
    ("'like %x%'", "like"),
    ("df1", "="),
])
def test_filter_grammar_shapes(filter_text, comparator):
    text = f"df1 = df.where(element = t.a, filter = {filter_text})\nres = df1.select(t.a)"
    t = roundtrip(text)
    where = t.steps[0].chain[0]
    assert isinstance(where, Where)
    assert where.condition.comparator == comparator


def test_between_requires_matching_kinds():
    with pytest.raises(ValueError):
        FilterCondition("between", (Scalar(1, "int"), Scalar("a", "string")))


def test_filter_equality_text_that_looks_structured_roundtrips():
    # equality strings beginning with a comparator keyword need the escaped form
    cond = FilterCondition("=", (Scalar("between a and b", "string"),))
    rendered = render_filter(cond)
    assert parse_filter_text(rendered[1:-1].replace("''", "'")) == cond


def test_unparseable_filter_is_a_syntax_error():
    with pytest.raises(TrajectorySyntaxError):
        parse_trajectory("df1 = df.where(element = t.a, filter = 'between 1')\nres = df1.select(t.a)")


# --- validation ----------------------------------------------------------------

def test_validate_clean_trajectory(schools):
    t = parse_trajectory(golden("table9_sam.traj"))
    report = validate_trajectory(t, schools)
    assert report.is_valid
    assert str(report) == "ok"


def test_validate_flags_unknown_column(schools):
    t = parse_trajectory(golden("table9_bam_asprinted.traj"))
    trimmed = DatabaseInput(
        name="schools",
        tables=tuple(
            type(tbl)(tbl.name, tuple(c for c in tbl.columns if c.name != "Year"),
                      tbl.foreign_keys, tbl.samples)
            for tbl in schools.tables),
    )
    report = validate_trajectory(t, trimmed)
    findings = [f for f in report.findings if f.code == "unknown-column"]
    assert len(findings) == 1  # repeated occurrences of schools.Year collapse


def test_validate_empty_schema_one_finding_per_table():
    text = ("df1 = df.where(element = t.a, filter = 1)\n"
            "res = df1.select(t.a, u.b)")
    report = validate_trajectory(parse_trajectory(text), DatabaseInput("empty", ()))
    unknown = [f for f in report.findings if f.code == "unknown-table"]
    assert len(unknown) == 2


def test_validate_warns_limit_before_orderby(schools):
    t = parse_trajectory(
        "df1 = df.limit(1).orderby(by = schools.SOC, asc)\nres = df1.select(schools.SOC)")
    report = validate_trajectory(t, schools)
    assert any(f.code == "chain-order" for f in report.findings)
    assert not report.errors()


# --- property tests -----------------------------------------------------------------

_columns = st.sampled_from([QualifiedColumn("t", "a"), QualifiedColumn("t", "b"),
                            QualifiedColumn("u", "c")])
_scalars = st.one_of(
    st.integers(min_value=-10**9, max_value=10**9),
    st.floats(allow_nan=False, allow_infinity=False, width=32),
    st.text(alphabet=st.characters(blacklist_categories=("Cs", "Cc")), max_size=12),
).map(Scalar.of)


def _filters(scalar: Scalar) -> st.SearchStrategy[FilterCondition]:
    shapes = [
        st.just(FilterCondition("=", (scalar,))),
        st.just(FilterCondition(">", (scalar,))),
        st.just(FilterCondition("in", (scalar, scalar))),
        st.just(FilterCondition("is null", ())),
        st.just(FilterCondition("between", (scalar, scalar))),
    ]
    return st.one_of(shapes)


_conditions = _scalars.flatmap(_filters)


@settings(max_examples=150, deadline=None)
@given(column=_columns, cond=_conditions, order=st.sampled_from(["asc", "desc"]))
def test_parse_render_fixed_point_property(column, cond, order):
    steps = (
        TrajectoryStep("df1", "df", (Where(column, cond),)),
        TrajectoryStep("df2", "df1", (Where(QualifiedColumn("t", "b"), cond),)),
        TrajectoryStep("res", "df2", (Select((column, Aggregate("count", column))),)),
    )
    t = Trajectory(steps)
    text = render_trajectory(t)
    assert parse_trajectory(text) == t
    assert render_trajectory(parse_trajectory(text)) == text


@settings(max_examples=100, deadline=None)
@given(value=st.text(alphabet=st.characters(blacklist_categories=("Cs", "Cc")),
                     max_size=20))
def test_equality_filter_text_roundtrip(value):
    cond = FilterCondition("=", (Scalar.of(value),))
    text = ("df1 = df.where(element = t.a, filter = " + render_filter(cond)
            + ")\nres = df1.select(t.a)")
    where = parse_trajectory(text).steps[0].chain[0]
    assert where.condition == cond


def test_date_scalars_detected():
    assert Scalar.of("1980-01-01").kind == "date"
    assert DATE_RE.match("1980-01-01")
    assert Scalar.of("not a date").kind == "string"
