import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sqlsteps.bridge import decompose
from sqlsteps.errors import ArityMismatchError, KindMismatchError, SchemaMismatchError
from sqlsteps.masking import (
    fill_mask,
    mask_schema,
    parse_masked_template,
    recover_slot_values,
)
from sqlsteps.querygen import random_queries, store_database
from sqlsteps.sqlast import parse_sql
from sqlsteps.trajectory import parse_trajectory, render_trajectory

from conftest import golden


def test_single_slot(schools):
    masked = mask_schema(parse_trajectory("res = df.select(t.a)"))
    assert masked.template == "res = df.select([MASK:0])\n"
    assert [(s.index, s.kind, s.value) for s in masked.slots] == [(0, "column", "t.a")]


def test_case_study_masking_has_seven_slots():
    masked = mask_schema(parse_trajectory(golden("table9_bam_asprinted.traj")))
    assert len(masked.slots) == 7
    assert masked.slot_values() == [
        "schools.Year", "schools.SOC", "schools.County", "schools.Year",
        "schools.Year", "schools.County", "schools.Year",
    ]
    for name in ("schools", "County", "Year", "SOC"):
        assert name not in masked.template


def test_bare_template_strips_indices():
    masked = mask_schema(parse_trajectory("res = df.select(t.a, t.b)"))
    assert masked.bare_template() == "res = df.select([MASK], [MASK])\n"


def test_positions_point_at_original_occurrences():
    t = parse_trajectory("df1 = df.where(element = t.a, filter = 1)\nres = df1.select(t.b)")
    source = render_trajectory(t)
    masked = mask_schema(t)
    for slot in masked.slots:
        assert source[slot.position:slot.position + len(slot.value)] == slot.value


def test_fill_restores_case_study_correction(schools):
    masked = mask_schema(parse_trajectory(golden("table9_bam_asprinted.traj")))
    corrected = [v.replace("schools.Year", "schools.ClosedDate")
                 for v in masked.slot_values()]
    filled = fill_mask(masked, corrected, schools)
    assert render_trajectory(filled) == golden("table9_sam.traj")


def test_fill_arity_mismatch(schools):
    masked = mask_schema(parse_trajectory("res = df.select(schools.SOC)"))
    with pytest.raises(ArityMismatchError):
        fill_mask(masked, ["schools.SOC", "schools.County"], schools)


def test_fill_kind_mismatch(schools):
    masked = mask_schema(parse_trajectory("res = df.select(schools.SOC)"))
    with pytest.raises(KindMismatchError):
        fill_mask(masked, ["schools"], schools)


def test_fill_unknown_column_names_slot(schools):
    masked = mask_schema(parse_trajectory(golden("table9_bam_asprinted.traj")))
    wrong = list(masked.slot_values())
    wrong[0] = "schools.Bogus"
    with pytest.raises(SchemaMismatchError) as err:
        fill_mask(masked, wrong, schools)
    assert "slot 0" in str(err.value)


def test_literal_resembling_column_not_masked(schools):
    text = ("df1 = df.where(element = schools.County, filter = 'schools.County')\n"
            "res = df1.select(schools.County)")
    t = parse_trajectory(text)
    masked = mask_schema(t)
    assert len(masked.slots) == 2  # the quoted literal stays untouched
    assert "'schools.County'" in masked.template
    assert render_trajectory(fill_mask(masked, masked.slot_values(), schools)) == \
        render_trajectory(t)


def test_parse_masked_template_rejects_gaps():
    from sqlsteps.errors import FormatError
    with pytest.raises(FormatError):
        parse_masked_template("res = df.select([MASK:1])\n")


def test_recover_slot_values_roundtrip():
    t = parse_trajectory(golden("table9_bam_asprinted.traj"))
    masked = mask_schema(t)
    recovered = recover_slot_values(masked.template, render_trajectory(t))
    assert recovered == masked.slot_values()


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(min_value=0, max_value=10_000))
def test_mask_fill_inverse_property(seed):
    d = store_database()
    sql = random_queries(1, seed)[0]
    t = decompose(parse_sql(sql), d)
    masked = mask_schema(t)
    filled = fill_mask(masked, masked.slot_values(), d)
    assert render_trajectory(filled) == render_trajectory(t)


def test_masking_leaves_non_schema_tokens(schools):
    t = parse_trajectory(golden("table9_bam_asprinted.traj"))
    masked = mask_schema(t)
    for token in ("where", "groupby", "orderby", "limit(1)", "desc",
                  "'between 1980-01-01 and 1989-12-31'", "11"):
        assert token in masked.template
