"""Ticket parsing, text cleaning and incident-context assembly."""
from __future__ import annotations

import enum
import json
import re
import unicodedata
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import Iterable, Optional


class Severity(str, enum.Enum):
    S1 = "S1"
    S2 = "S2"
    S3 = "S3"
    S4 = "S4"
    S5 = "S5"


class ServiceCategory(str, enum.Enum):
    INFRASTRUCTURE = "infrastructure"
    COMPUTING = "computing"
    NETWORKING = "networking"
    STORAGE = "storage"
    OTHERS = "others"


TEXT_FIELDS = ("title", "symptom", "root_cause", "mitigation")


class TicketError(ValueError):
    pass


class UnprofilableTicket(TicketError):
    """All four text fields are empty after cleaning."""


@dataclass
class IncidentTicket:
    id: str
    title: str
    symptom: str
    root_cause: str
    mitigation: str
    severity: Severity
    service_category: ServiceCategory
    created_at: datetime
    gold_labels: Optional[frozenset] = None


@dataclass
class IncidentContext:
    text: str
    source_id: str


@dataclass
class ParseReport:
    tickets: list = field(default_factory=list)
    errors: list = field(default_factory=list)  # (line_no, message)


# --------------------------------------------------------------------------
# cleaning

_FENCED_RE = re.compile(r"```.*?(?:```|\Z)", re.DOTALL)
_INLINE_CODE_RE = re.compile(r"`[^`\n]*`")
_SHELL_LINE_RE = re.compile(r"^[ \t]*(?:\$|#) .*$", re.MULTILINE)
_HTML_COMMENT_RE = re.compile(r"<!--.*?(?:-->|\Z)", re.DOTALL)
_HTML_TABLE_RE = re.compile(r"<table\b.*?(?:</table\s*>|\Z)", re.DOTALL | re.IGNORECASE)
_TAG_RE = re.compile(r"</?[A-Za-z][^<>]*>")
_MD_IMAGE_RE = re.compile(r"!\[[^\]]*\]\([^)]*\)")
_MD_TABLE_LINE_RE = re.compile(r"^[ \t]*\|.*\|[ \t]*$", re.MULTILINE)
_PLACEHOLDER_RE = re.compile(
    r"\[(?:image|img|picture|table|screenshot|attachment|图片|表格)[^\]]*\]", re.IGNORECASE
)
_URL_RE = re.compile(r"(?:https?|ftp)://\S+", re.IGNORECASE)
_EMPTY_BRACES_RE = re.compile(r"\(\s*\)|\[\s*\]|\{\s*\}")
_WS_RE = re.compile(r"\s+")


def _drop_control(text: str) -> str:
    out = []
    for ch in text:
        if ch in "\t\n\r":
            out.append(ch)
        elif unicodedata.category(ch) in ("Cc", "Cf", "Cs"):
            continue
        else:
            out.append(ch)
    return "".join(out)


def _clean_once(text: str) -> str:
    text = _drop_control(text)
    text = _FENCED_RE.sub(" ", text)
    text = _HTML_COMMENT_RE.sub(" ", text)
    text = _HTML_TABLE_RE.sub(" ", text)
    text = _MD_TABLE_LINE_RE.sub(" ", text)
    text = _SHELL_LINE_RE.sub(" ", text)
    text = _INLINE_CODE_RE.sub(" ", text)
    text = _MD_IMAGE_RE.sub(" ", text)
    text = _TAG_RE.sub(" ", text)
    text = _PLACEHOLDER_RE.sub(" ", text)
    text = _URL_RE.sub(" ", text)
    text = _EMPTY_BRACES_RE.sub(" ", text)
    return _WS_RE.sub(" ", text).strip()


def clean_text(raw: str) -> str:
    """Strip markup, code, URLs and multimodal placeholders; collapse whitespace.

    The rules are applied until a fixpoint, so the function is idempotent
    even when one removal exposes a new match (e.g. a URL split by a tag).
    """
    if not raw:
        return ""
    text = raw
    while True:
        cleaned = _clean_once(text)
        if cleaned == text:
            return cleaned
        text = cleaned


# --------------------------------------------------------------------------
# context template

_SEGMENTS = (
    ("title", "Incident ticket title: {}"),
    ("symptom", "Symptoms of incidents: {}"),
    ("root_cause", "Identified root cause: {}"),
    ("mitigation", "Mitigation actions: {}"),
)


def build_incident_context(ticket: IncidentTicket) -> IncidentContext:
    parts = []
    for name, template in _SEGMENTS:
        value = clean_text(getattr(ticket, name))
        if value:
            parts.append(template.format(value))
    if not parts:
        raise UnprofilableTicket(f"ticket {ticket.id!r} has no usable text after cleaning")
    return IncidentContext(text=". ".join(parts), source_id=ticket.id)


# --------------------------------------------------------------------------
# records

def parse_timestamp(value: str) -> datetime:
    if not isinstance(value, str):
        raise TicketError(f"created_at must be a string, got {type(value).__name__}")
    text = value.strip()
    if text.endswith(("Z", "z")):
        text = text[:-1] + "+00:00"
    try:
        ts = datetime.fromisoformat(text)
    except ValueError as exc:
        raise TicketError(f"bad created_at {value!r}") from exc
    if ts.tzinfo is None:
        ts = ts.replace(tzinfo=timezone.utc)
    return ts.astimezone(timezone.utc)


def format_timestamp(ts: datetime) -> str:
    ts = ts.astimezone(timezone.utc)
    if ts.microsecond:
        return ts.strftime("%Y-%m-%dT%H:%M:%S.%fZ")
    return ts.strftime("%Y-%m-%dT%H:%M:%SZ")


def ticket_from_record(record: dict) -> IncidentTicket:
    if not isinstance(record, dict):
        raise TicketError("record is not an object")
    ticket_id = record.get("id")
    if not isinstance(ticket_id, str) or not ticket_id.strip():
        raise TicketError("missing or empty 'id'")
    texts = {}
    for name in TEXT_FIELDS:
        value = record.get(name, "")
        if value is None:
            value = ""
        if not isinstance(value, str):
            raise TicketError(f"field {name!r} must be a string")
        texts[name] = value
    try:
        severity = Severity(str(record.get("severity", "")).upper())
    except ValueError:
        raise TicketError(f"bad severity {record.get('severity')!r}") from None
    try:
        service = ServiceCategory(str(record.get("service", "")).lower())
    except ValueError:
        raise TicketError(f"bad service {record.get('service')!r}") from None
    if "created_at" not in record:
        raise TicketError("missing 'created_at'")
    created_at = parse_timestamp(record["created_at"])
    labels = record.get("labels")
    if labels is not None:
        if not isinstance(labels, list) or not all(isinstance(x, str) for x in labels):
            raise TicketError("'labels' must be an array of strings")
        labels = frozenset(labels)
    if not any(clean_text(v) for v in texts.values()):
        raise UnprofilableTicket("all text fields empty after cleaning")
    return IncidentTicket(
        id=ticket_id,
        severity=severity,
        service_category=service,
        created_at=created_at,
        gold_labels=labels,
        **texts,
    )


def ticket_to_record(ticket: IncidentTicket) -> dict:
    record = {
        "id": ticket.id,
        "title": ticket.title,
        "symptom": ticket.symptom,
        "root_cause": ticket.root_cause,
        "mitigation": ticket.mitigation,
        "severity": ticket.severity.value,
        "service": ticket.service_category.value,
        "created_at": format_timestamp(ticket.created_at),
    }
    if ticket.gold_labels is not None:
        record["labels"] = sorted(ticket.gold_labels)
    return record


def parse_tickets(lines: Iterable[str], strict: bool = False) -> ParseReport:
    """Parse line-delimited JSON ticket records.

    Malformed lines are recorded in ``report.errors`` as ``(line_no, message)``
    and skipped; with ``strict=True`` the first one raises. Duplicate ids
    always raise, naming both line numbers.
    """
    report = ParseReport()
    seen: dict[str, int] = {}
    for line_no, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
            ticket = ticket_from_record(record)
        except (json.JSONDecodeError, TicketError) as exc:
            if strict:
                raise TicketError(f"line {line_no}: {exc}") from exc
            report.errors.append((line_no, str(exc)))
            continue
        if ticket.id in seen:
            raise TicketError(
                f"duplicate ticket id {ticket.id!r} on lines {seen[ticket.id]} and {line_no}"
            )
        seen[ticket.id] = line_no
        report.tickets.append(ticket)
    return report


def read_tickets(path, strict: bool = False) -> ParseReport:
    with open(path, encoding="utf-8") as fh:
        return parse_tickets(fh, strict=strict)


def write_tickets(path, tickets: Iterable[IncidentTicket]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for ticket in tickets:
            fh.write(json.dumps(ticket_to_record(ticket), ensure_ascii=False, sort_keys=True))
            fh.write("\n")
