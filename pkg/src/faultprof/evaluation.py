"""Profiling metrics, per-slice breakdowns, label-embedding export and weekly trends."""
from __future__ import annotations

import csv
import io
from collections import defaultdict
from dataclasses import dataclass, field
from datetime import date, datetime, timedelta, timezone
from typing import Iterable, Optional, Sequence

import numpy as np


# --------------------------------------------------------------------------
# metrics

def _prf(tp: int, fp: int, fn: int) -> tuple:
    p = tp / (tp + fp) if tp + fp else 0.0
    r = tp / (tp + fn) if tp + fn else 0.0
    return p, r, f1_score(p, r)


def f1_score(p: float, r: float) -> float:
    return 2 * p * r / (p + r) if p + r else 0.0


def confusion_counts(predictions: Sequence[set], golds: Sequence[set]) -> tuple:
    tp = fp = fn = 0
    for pred, gold in zip(predictions, golds):
        pred, gold = set(pred), set(gold)
        tp += len(pred & gold)
        fp += len(pred - gold)
        fn += len(gold - pred)
    return tp, fp, fn


def micro_scores(predictions: Sequence[set], golds: Sequence[set]) -> dict:
    if len(predictions) != len(golds):
        raise ValueError(f"{len(predictions)} predictions for {len(golds)} gold sets")
    tp, fp, fn = confusion_counts(predictions, golds)
    p, r, f = _prf(tp, fp, fn)
    return {"precision": p, "recall": r, "f1": f, "tp": tp, "fp": fp, "fn": fn}


def example_scores(predictions: Sequence[set], golds: Sequence[set]) -> dict:
    """Per-example precision and recall averaged over examples; F1 from the averages.

    An empty prediction scores precision 0 unless the gold set is empty too.
    """
    if len(predictions) != len(golds):
        raise ValueError(f"{len(predictions)} predictions for {len(golds)} gold sets")
    if not predictions:
        return {"precision": 0.0, "recall": 0.0, "f1": 0.0}
    ps, rs = [], []
    for pred, gold in zip(predictions, golds):
        pred, gold = set(pred), set(gold)
        hit = len(pred & gold)
        ps.append(hit / len(pred) if pred else (1.0 if not gold else 0.0))
        rs.append(hit / len(gold) if gold else (1.0 if not pred else 0.0))
    p, r = float(np.mean(ps)), float(np.mean(rs))
    return {"precision": p, "recall": r, "f1": f1_score(p, r)}


@dataclass
class MetricsReport:
    micro: dict
    example: dict
    per_level: dict = field(default_factory=dict)
    slices: dict = field(default_factory=dict)  # key -> value -> MetricsReport

    def headline(self, mode: str = "micro") -> dict:
        return self.micro if mode == "micro" else self.example

    def to_dict(self) -> dict:
        return {
            "micro": self.micro,
            "example": self.example,
            "per_level": {str(k): v for k, v in self.per_level.items()},
            "slices": {
                key: {value: report.to_dict() for value, report in sorted(group.items())}
                for key, group in sorted(self.slices.items())
            },
        }


def metrics(predictions: Sequence[set], golds: Sequence[set], taxonomy=None) -> MetricsReport:
    """Micro and example-averaged scores; per-level breakdown when a taxonomy is given.

    Labels may be node ids or indices as long as both sides agree.
    """
    report = MetricsReport(micro_scores(predictions, golds), example_scores(predictions, golds))
    if taxonomy is not None:
        for level in sorted({n.level for n in taxonomy.nodes}):
            keep = _level_filter(taxonomy, level)
            lp = [{x for x in s if keep(x)} for s in predictions]
            lg = [{x for x in s if keep(x)} for s in golds]
            report.per_level[level] = micro_scores(lp, lg)
    return report


def _level_filter(taxonomy, level: int):
    def keep(label) -> bool:
        node = taxonomy.nodes[label] if isinstance(label, int) else taxonomy.node(label)
        return node.level == level
    return keep


SLICE_KEYS = ("severity", "service", "level")


def slice_metrics(predictions: Sequence[set], golds: Sequence[set], tickets: Sequence,
                  key: str, taxonomy=None) -> dict:
    """Metrics per severity, per service group, or per taxonomy level."""
    if key not in SLICE_KEYS:
        raise ValueError(f"unknown slice key {key!r}; choose from {list(SLICE_KEYS)}")
    if not len(predictions) == len(golds) == len(tickets):
        raise ValueError("predictions, golds and tickets must align")
    if key == "level":
        if taxonomy is None:
            raise ValueError("level slicing needs the taxonomy")
        out = {}
        for level in sorted({n.level for n in taxonomy.nodes}):
            keep = _level_filter(taxonomy, level)
            lp = [{x for x in s if keep(x)} for s in predictions]
            lg = [{x for x in s if keep(x)} for s in golds]
            out[level] = MetricsReport(micro_scores(lp, lg), example_scores(lp, lg))
        return out
    groups = defaultdict(list)
    for i, ticket in enumerate(tickets):
        value = ticket.severity.value if key == "severity" else ticket.service_category.value
        groups[value].append(i)
    return {
        value: metrics([predictions[i] for i in idx], [golds[i] for i in idx])
        for value, idx in sorted(groups.items())
    }


def full_report(predictions, golds, tickets, taxonomy) -> MetricsReport:
    report = metrics(predictions, golds, taxonomy)
    for key in ("severity", "service"):
        report.slices[key] = slice_metrics(predictions, golds, tickets, key)
    return report


def report_csv(report: MetricsReport) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["slice", "value", "mode", "precision", "recall", "f1"])

    def row(slice_name, value, mode, scores):
        writer.writerow([slice_name, value, mode] + [f"{scores[m]:.6f}" for m in ("precision", "recall", "f1")])

    row("all", "all", "micro", report.micro)
    row("all", "all", "example", report.example)
    for level, scores in sorted(report.per_level.items()):
        row("level", level, "micro", scores)
    for key, group in sorted(report.slices.items()):
        for value, sub in sorted(group.items()):
            row(key, value, "micro", sub.micro)
            row(key, value, "example", sub.example)
    return buf.getvalue()


# --------------------------------------------------------------------------
# label embeddings

def export_label_embeddings(checkpoint, path=None) -> tuple:
    """Classifier weight rows as fault-pattern vectors: ``(node_ids, matrix)``.

    When ``path`` is given the rows are also written as CSV
    ``node_id,d0,d1,...``.
    """
    weight = np.asarray(checkpoint.tensors["classifier.linear.weight"], dtype=np.float32)
    node_ids = [n.id for n in checkpoint.taxonomy.nodes]
    if path is not None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["node_id"] + [f"d{i}" for i in range(weight.shape[1])])
            for node_id, row in zip(node_ids, weight):
                writer.writerow([node_id] + [repr(float(x)) for x in row])
    return node_ids, weight


def read_label_embeddings(path) -> tuple:
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        next(reader)
        rows = list(reader)
    return [r[0] for r in rows], np.array([[float(x) for x in r[1:]] for r in rows], dtype=np.float32)


def cosine_similarity_matrix(matrix: np.ndarray) -> np.ndarray:
    m = np.asarray(matrix, dtype=np.float64)
    unit = m / np.linalg.norm(m, axis=1, keepdims=True)
    return unit @ unit.T


def sibling_cohesion(taxonomy, weight: np.ndarray) -> dict:
    """Mean cosine between rows sharing a parent vs rows with different parents.

    Only non-root nodes take part; the margin is ``same - different``.
    """
    sims = cosine_similarity_matrix(weight)
    rows = [j for j, n in enumerate(taxonomy.nodes) if n.parent_id is not None]
    same, diff = [], []
    for a_pos, a in enumerate(rows):
        for b in rows[a_pos + 1 :]:
            bucket = same if taxonomy.nodes[a].parent_id == taxonomy.nodes[b].parent_id else diff
            bucket.append(sims[a, b])
    s = float(np.mean(same)) if same else float("nan")
    d = float(np.mean(diff)) if diff else float("nan")
    return {"same_parent": s, "different_parent": d, "margin": s - d}


# --------------------------------------------------------------------------
# weekly trends

@dataclass(frozen=True)
class TrendPoint:
    week: str
    node_id: str
    count: int
    normalized: float


def iso_week(ts: datetime) -> str:
    year, week, _ = ts.astimezone(timezone.utc).isocalendar()
    return f"{year}-W{week:02d}"


def _week_start(label: str) -> date:
    year, week = label.split("-W")
    return date.fromisocalendar(int(year), int(week), 1)


def week_range(first: str, last: str) -> list:
    start, end = _week_start(first), _week_start(last)
    weeks = []
    while start <= end:
        weeks.append(iso_week(datetime(start.year, start.month, start.day, tzinfo=timezone.utc)))
        start += timedelta(days=7)
    return weeks


def weekly_trends(records: Iterable[tuple], nodes: Sequence[str],
                  since: Optional[datetime] = None, until: Optional[datetime] = None) -> list:
    """Count, per ISO week, the tickets whose predicted labels contain each node.

    ``records`` yields ``(created_at, predicted_node_ids)``. Weeks between the
    first and last ticket in range are filled with zero counts; each node's
    counts are normalised by that node's maximum.
    """
    if not nodes:
        raise ValueError("node filter must not be empty")
    counts = defaultdict(int)
    weeks_seen = set()
    for created_at, labels in records:
        if since is not None and created_at < since:
            continue
        if until is not None and created_at >= until:
            continue
        week = iso_week(created_at)
        weeks_seen.add(week)
        labels = set(labels)
        for node in nodes:
            if node in labels:
                counts[(week, node)] += 1
    if not weeks_seen:
        return []
    ordered = sorted(weeks_seen, key=_week_start)
    weeks = week_range(ordered[0], ordered[-1])
    series = []
    for node in nodes:
        peak = max(counts[(w, node)] for w in weeks)
        for w in weeks:
            c = counts[(w, node)]
            series.append(TrendPoint(w, node, c, c / peak if peak else 0.0))
    return series


def trends_csv(series: Sequence[TrendPoint]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["week", "node_id", "count", "normalized"])
    for pt in series:
        writer.writerow([pt.week, pt.node_id, pt.count, f"{pt.normalized:.6f}"])
    return buf.getvalue()


_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f")


def trends_svg(series: Sequence[TrendPoint], width: int = 720, height: int = 360) -> str:
    """One polyline per node, week on the x axis and normalised count on y."""
    weeks = sorted({pt.week for pt in series}, key=_week_start)
    nodes = list(dict.fromkeys(pt.node_id for pt in series))
    left, right, top, bottom = 50, 150, 20, 50
    pw, ph = width - left - right, height - top - bottom
    xpos = {w: left + (pw * i / max(len(weeks) - 1, 1)) for i, w in enumerate(weeks)}
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
        f'<line x1="{left}" y1="{top + ph}" x2="{left + pw}" y2="{top + ph}" stroke="black"/>',
        f'<line x1="{left}" y1="{top}" x2="{left}" y2="{top + ph}" stroke="black"/>',
        f'<text x="{left - 8}" y="{top + 4}" font-size="10" text-anchor="end">1.0</text>',
        f'<text x="{left - 8}" y="{top + ph + 4}" font-size="10" text-anchor="end">0.0</text>',
    ]
    step = max(1, len(weeks) // 8)
    for i, w in enumerate(weeks):
        if i % step == 0:
            out.append(f'<text x="{xpos[w]:.1f}" y="{top + ph + 16}" font-size="9" '
                       f'text-anchor="middle">{w}</text>')
    for n_i, node in enumerate(nodes):
        color = _PALETTE[n_i % len(_PALETTE)]
        pts = [pt for pt in series if pt.node_id == node]
        coords = " ".join(f"{xpos[pt.week]:.1f},{top + ph * (1 - pt.normalized):.1f}" for pt in pts)
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="2" '
                   f'data-node="{_escape(node)}" points="{coords}"/>')
        ly = top + 14 * (n_i + 1)
        out.append(f'<text x="{left + pw + 10}" y="{ly}" font-size="11" fill="{color}">'
                   f'{_escape(node)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _escape(text: str) -> str:
    return (text.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")
            .replace('"', "&quot;"))
