import json
import threading
from http.server import BaseHTTPRequestHandler, HTTPServer

import pytest

from sqlsteps.bridge import decompose
from sqlsteps.errors import BackendUnavailableError, TemplateNotFoundError
from sqlsteps.pipeline import (
    IdentityBackend,
    RemoteBackend,
    RuleBackend,
    ScriptedBackend,
    build_backends,
    correct_batch,
    make_feedback,
    run_pipeline,
)
from sqlsteps.sqlast import SqlQuery, canonicalize, parse_sql
from sqlsteps.trajectory import parse_trajectory, render_trajectory

from conftest import FIXTURES, golden


def rule_backends():
    return build_backends({})


def identity_backends():
    return build_backends({stage: {"kind": "identity"}
                           for stage in ("bam", "sam_mask", "sam_fill", "lom")})


def table9_scripted():
    return build_backends({
        stage: {"kind": "scripted", "script_file": "backends/table9_script.json"}
        for stage in ("bam", "sam_mask", "sam_fill", "lom")
    }, base_dir=FIXTURES)


def test_rule_pipeline_is_identity_on_correct_sql(store):
    sql = "SELECT customers.name FROM customers WHERE customers.age > 30"
    trace = run_pipeline(store, "names of older customers", sql, rule_backends())
    assert trace.error is None
    assert trace.feedback is not None and trace.feedback.reverted_sql is not None
    assert canonicalize(SqlQuery.raw(trace.feedback.reverted_sql), store) == \
        canonicalize(parse_sql(sql), store)
    assert [s.stage for s in trace.stages] == ["bam", "sam_mask", "sam_fill", "lom"]


def test_identity_backends_reduce_to_decomposition(store):
    sql = "SELECT customers.name FROM customers WHERE customers.age > 30"
    trace = run_pipeline(store, "q", sql, identity_backends())
    expected = decompose(parse_sql(sql), store)
    assert render_trajectory(trace.trajectory_final) == render_trajectory(expected)
    assert render_trajectory(trace.trajectory_initial) == render_trajectory(expected)
    assert all(s.identity for s in trace.stages if s.stage != "bam")


def test_scripted_replay_of_case_study(schools):
    trace = run_pipeline(schools, "which county", golden("table9_initial.sql").strip(),
                         table9_scripted(), seed_id="s01")
    assert trace.error is None
    assert render_trajectory(trace.trajectory_initial) == golden("table9_bam_asprinted.traj")
    assert render_trajectory(trace.trajectory_schema) == golden("table9_sam.traj")
    assert render_trajectory(trace.trajectory_final) == golden("table9_lom.traj")
    reverted = SqlQuery.raw(trace.feedback.reverted_sql)
    gold = parse_sql(golden("table9_gold.sql"))
    assert canonicalize(reverted, schools) == canonicalize(gold, schools)


def test_pipeline_deterministic(store):
    sql = "SELECT customers.city FROM customers WHERE customers.age BETWEEN 20 AND 40"
    a = run_pipeline(store, "q", sql, rule_backends())
    b = run_pipeline(store, "q", sql, rule_backends())
    assert render_trajectory(a.trajectory_final) == render_trajectory(b.trajectory_final)
    assert a.feedback.prompt == b.feedback.prompt
    assert a.feedback.reverted_sql == b.feedback.reverted_sql


def test_degraded_mode_keeps_last_valid_trajectory(store):
    backends = rule_backends()
    backends["lom"] = ScriptedBackend("lom", {"*": "this is not a trajectory"})
    sql = "SELECT customers.name FROM customers WHERE customers.age > 30"
    trace = run_pipeline(store, "q", sql, backends)
    assert trace.error is not None and "lom" in trace.error
    assert trace.trajectory_final is None
    assert trace.trajectory_schema is not None
    assert trace.feedback is not None  # built from the last valid trajectory
    assert trace.feedback.trajectory_text == render_trajectory(trace.trajectory_schema)


def test_degraded_mode_stage_order_preserved(store):
    backends = rule_backends()
    backends["sam_mask"] = ScriptedBackend("sam_mask", {"*": "%%%"})
    sql = "SELECT customers.name FROM customers"
    trace = run_pipeline(store, "q", sql, backends)
    assert [s.stage for s in trace.stages][:2] == ["bam", "sam_mask"]
    assert trace.trajectory_initial is not None  # stage < k results intact
    assert trace.feedback.trajectory_text == render_trajectory(trace.trajectory_initial)


def test_unconvertible_initial_sql_yields_error_trace(store):
    trace = run_pipeline(store, "q", "SELECT bogus(x) FROM customers", rule_backends())
    assert trace.error is not None
    assert trace.feedback is None


def test_make_feedback_contains_trajectory_and_sql(store):
    t = decompose(parse_sql("SELECT customers.name FROM customers"), store)
    feedback = make_feedback(t, store)
    assert feedback.trajectory_text in feedback.prompt
    assert feedback.reverted_sql == "SELECT customers.name FROM customers"
    assert feedback.reverted_sql in feedback.prompt


def test_make_feedback_degrades_without_join_path(schemas):
    t = parse_trajectory("res = df.select(a.x, b.y)")
    from sqlsteps.schema import parse_database_text

    apart = parse_database_text(
        "database apart\ntable a\n  column id int pk\n  column x int\n"
        "table b\n  column id int pk\n  column y int")
    feedback = make_feedback(t, apart)
    assert feedback.reverted_sql is None
    assert feedback.trajectory_text


def test_make_feedback_unknown_template(store):
    t = decompose(parse_sql("SELECT customers.name FROM customers"), store)
    with pytest.raises(TemplateNotFoundError):
        make_feedback(t, store, template_id="no_such_template")


def test_template_dir_override(tmp_path, store):
    (tmp_path / "regenerate_sql.txt").write_text("OVERRIDE $trajectory")
    t = decompose(parse_sql("SELECT customers.name FROM customers"), store)
    feedback = make_feedback(t, store, template_dir=tmp_path)
    assert feedback.prompt.startswith("OVERRIDE res = df.select")


def test_correct_batch_feedback_only(fixture_seeds, schemas):
    results = correct_batch(fixture_seeds, rule_backends(), schemas, jobs=3)
    assert len(results) == 10
    assert [r.seed_id for r in results] == sorted(r.seed_id for r in results)
    with_feedback = [r for r in results if r.feedback is not None]
    assert len(with_feedback) == 10  # every fixture initial SQL decomposes


def test_correct_batch_echo_generator(fixture_seeds, schemas):
    def echo(payload):
        return payload["reverted_sql"]

    results = correct_batch(fixture_seeds, rule_backends(), schemas, generator=echo)
    for result in results:
        if result.feedback and result.feedback.reverted_sql:
            assert result.regenerated_sql == result.feedback.reverted_sql


def test_correct_batch_missing_schema_is_isolated(fixture_seeds, schemas):
    trimmed = {k: v for k, v in schemas.items() if k != "schools"}
    results = correct_batch(fixture_seeds, rule_backends(), trimmed)
    failed = [r for r in results if r.error and "schools" in r.error]
    assert len(failed) == 1 and failed[0].seed_id == "s01"
    assert len(results) == 10  # batch never aborts


def test_rule_pipeline_no_overcorrection_flags(fixture_seeds, schemas):
    results = correct_batch(fixture_seeds, rule_backends(), schemas)
    assert not any(r.overcorrection_flag for r in results)


def test_overcorrection_flag_set_when_correct_seed_is_rewritten(fixture_seeds, schemas):
    class MangleOne:
        stage = "lom"
        identity = False

        def describe(self):
            return "test:mangle"

        def invoke(self, payload):
            if payload.get("id") == "s02":  # s02's initial SQL equals its gold
                return "res = df.select(customers.city)\n"
            return payload["trajectory"]

    backends = rule_backends()
    backends["lom"] = MangleOne()
    results = correct_batch(fixture_seeds, backends, schemas)
    flagged = [r.seed_id for r in results if r.overcorrection_flag]
    assert flagged == ["s02"]


# --- remote backend -----------------------------------------------------------------

class _StubHandler(BaseHTTPRequestHandler):
    fail_times = 0
    seen: list = []

    def do_POST(self):
        body = json.loads(self.rfile.read(int(self.headers["Content-Length"])))
        type(self).seen.append(body)
        if type(self).fail_times > 0:
            type(self).fail_times -= 1
            self.send_response(500)
            self.end_headers()
            return
        reply = json.dumps({"text": body.get("trajectory", "res = df.select(t.a)")})
        self.send_response(200)
        self.send_header("Content-Type", "application/json")
        self.end_headers()
        self.wfile.write(reply.encode())

    def log_message(self, *args):
        pass


@pytest.fixture()
def stub_server():
    server = HTTPServer(("127.0.0.1", 0), _StubHandler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    _StubHandler.fail_times = 0
    _StubHandler.seen = []
    yield f"http://127.0.0.1:{server.server_port}/"
    server.shutdown()


def test_remote_backend_round_trip(stub_server):
    backend = RemoteBackend("lom", stub_server, timeout=5.0)
    out = backend.invoke({"trajectory": "res = df.select(t.a)\n", "question": "q"})
    assert out == "res = df.select(t.a)\n"
    assert _StubHandler.seen[0]["stage"] == "lom"


def test_remote_backend_retries_then_succeeds(stub_server):
    _StubHandler.fail_times = 2
    backend = RemoteBackend("lom", stub_server, timeout=5.0, retries=2, backoff=0.01)
    out = backend.invoke({"trajectory": "res = df.select(t.a)\n"})
    assert out == "res = df.select(t.a)\n"
    assert len(_StubHandler.seen) == 3


def test_remote_backend_unavailable():
    backend = RemoteBackend("lom", "http://127.0.0.1:1/", timeout=0.2, retries=1,
                            backoff=0.01)
    with pytest.raises(BackendUnavailableError):
        backend.invoke({"trajectory": "x"})


def test_remote_sam_fill_hides_source_trajectory(stub_server):
    backend = RemoteBackend("sam_fill", stub_server, timeout=5.0)
    backend.invoke({"masked": "res = df.select([MASK:0])\n",
                    "trajectory": "res = df.select(t.a)\n"})
    assert "trajectory" not in _StubHandler.seen[-1]


def test_backend_config_kinds():
    backends = build_backends({"bam": {"kind": "rule"},
                               "sam_mask": {"kind": "identity"},
                               "sam_fill": {"kind": "scripted", "outputs": {"*": "x"}},
                               "lom": {"kind": "remote", "endpoint": "http://x/"}})
    assert isinstance(backends["bam"], RuleBackend)
    assert isinstance(backends["sam_mask"], IdentityBackend)
    assert isinstance(backends["sam_fill"], ScriptedBackend)
    assert isinstance(backends["lom"], RemoteBackend)
