import json
from datetime import datetime, timezone

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from faultprof.ingest import (
    IncidentTicket,
    ServiceCategory,
    Severity,
    TicketError,
    UnprofilableTicket,
    build_incident_context,
    clean_text,
    parse_tickets,
    read_tickets,
    ticket_to_record,
    write_tickets,
)

RECORD = {
    "id": "INC-1",
    "title": "DB down",
    "symptom": "timeouts",
    "root_cause": "lock storm",
    "mitigation": "restart",
    "severity": "S2",
    "service": "storage",
    "created_at": "2023-03-01T10:00:00Z",
}


def _ticket(**fields):
    base = dict(id="t", title="", symptom="", root_cause="", mitigation="",
                severity=Severity.S3, service_category=ServiceCategory.OTHERS,
                created_at=datetime(2023, 1, 1, tzinfo=timezone.utc))
    base.update(fields)
    return IncidentTicket(**base)


def test_empty_stream_gives_empty_report():
    report = parse_tickets([])
    assert report.tickets == [] and report.errors == []


def test_single_record_fields():
    report = parse_tickets([json.dumps(RECORD)])
    assert report.errors == []
    (t,) = report.tickets
    assert (t.id, t.title, t.symptom, t.root_cause, t.mitigation) == (
        "INC-1", "DB down", "timeouts", "lock storm", "restart")
    assert t.severity is Severity.S2 and t.service_category is ServiceCategory.STORAGE
    assert t.created_at == datetime(2023, 3, 1, 10, tzinfo=timezone.utc)


def test_missing_id_is_recorded_and_skipped():
    record = dict(RECORD)
    del record["id"]
    report = parse_tickets([json.dumps(record)])
    assert report.tickets == []
    assert len(report.errors) == 1 and report.errors[0][0] == 1


def test_malformed_line_strict_mode_aborts():
    lines = [json.dumps(RECORD), "{not json"]
    assert len(parse_tickets(lines).errors) == 1
    with pytest.raises(TicketError, match="line 2"):
        parse_tickets(lines, strict=True)


def test_duplicate_id_names_both_lines():
    lines = [json.dumps(RECORD), "", json.dumps(RECORD)]
    with pytest.raises(TicketError, match="lines 1 and 3"):
        parse_tickets(lines)


def test_bad_enum_values_are_errors():
    for key, value in (("severity", "S9"), ("service", "mainframe"), ("created_at", "yesterday")):
        record = dict(RECORD, **{key: value})
        assert len(parse_tickets([json.dumps(record)]).errors) == 1


def test_naive_timestamp_read_as_utc():
    record = dict(RECORD, created_at="2023-03-01T10:00:00")
    (t,) = parse_tickets([json.dumps(record)]).tickets
    assert t.created_at.tzinfo is not None
    assert t.created_at.utcoffset().total_seconds() == 0


@pytest.mark.parametrize("raw, expected", [
    ("", ""),
    ("<p>disk  full</p>", "disk full"),
    ("see http://a.b/c for logs", "see for logs"),
    ("bare example.com stays", "bare example.com stays"),
    ("before\n```\nrm -rf /\n```\nafter", "before after"),
    ("ok\n$ systemctl restart db\n# tail log\nend", "ok end"),
    ("run `kill -9` now", "run now"),
    ("pic ![shot](a.png) [image] done", "pic done"),
    ("a\x00b​c", "abc"),
    ("x <!-- hidden --> y", "x y"),
    ("t\n| a | b |\n|---|---|\nz", "t z"),
])
def test_clean_text_examples(raw, expected):
    assert clean_text(raw) == expected


_markup = st.lists(
    st.sampled_from(list("ab <>/p`$#|\n[]()!:hts.") + ["http://", "```", "<!--", "-->", "<table>", "[image]"]),
    max_size=40,
).map("".join)


@settings(max_examples=300, deadline=None)
@given(st.one_of(st.text(max_size=80), _markup))
def test_clean_text_idempotent(raw):
    once = clean_text(raw)
    assert clean_text(once) == once


def test_context_full_template():
    t = _ticket(title="DB down", symptom="timeouts", root_cause="lock storm", mitigation="restart")
    assert build_incident_context(t).text == (
        "Incident ticket title: DB down. Symptoms of incidents: timeouts. "
        "Identified root cause: lock storm. Mitigation actions: restart"
    )


def test_context_omits_empty_segments():
    assert build_incident_context(_ticket(title="DB down")).text == "Incident ticket title: DB down"
    t = _ticket(title="<b></b>", mitigation="reboot")
    assert build_incident_context(t).text == "Mitigation actions: reboot"


def test_context_all_empty_is_unprofilable():
    with pytest.raises(UnprofilableTicket):
        build_incident_context(_ticket(symptom="<br/> http://x.y"))


@settings(max_examples=100, deadline=None)
@given(st.lists(st.text(max_size=30), min_size=4, max_size=4))
def test_context_has_no_placeholder_brackets(fields):
    t = _ticket(title=fields[0], symptom=fields[1], root_cause=fields[2], mitigation=fields[3])
    try:
        text = build_incident_context(t).text
    except UnprofilableTicket:
        return
    for placeholder in ("[Title]", "[Symptom]", "[Root cause]", "[Mitigation]"):
        assert placeholder not in text


_field_text = st.text(alphabet=st.characters(blacklist_categories=("Cs",)), max_size=20)


@settings(max_examples=100, deadline=None)
@given(
    title=_field_text.filter(lambda s: clean_text(s) != ""),
    symptom=_field_text,
    severity=st.sampled_from(list(Severity)),
    service=st.sampled_from(list(ServiceCategory)),
    seconds=st.integers(0, 2_000_000_000),
    labels=st.one_of(st.none(), st.frozensets(st.sampled_from(["a", "b", "c.d"]))),
)
def test_record_round_trip_is_lossless(title, symptom, severity, service, seconds, labels):
    ts = datetime.fromtimestamp(seconds, tz=timezone.utc)
    t = _ticket(title=title, symptom=symptom, severity=severity, service_category=service,
                created_at=ts, gold_labels=labels)
    (back,) = parse_tickets([json.dumps(ticket_to_record(t))]).tickets
    assert back == t


def test_write_then_read_file(tmp_path):
    tickets = parse_tickets([json.dumps(dict(RECORD, id=f"T{i}")) for i in range(3)]).tickets
    path = tmp_path / "tickets.jsonl"
    write_tickets(path, tickets)
    assert read_tickets(path).tickets == tickets
