"""Command-line entry point: ``faultprof <subcommand> ...``.

Exit codes: 0 success, 1 validation or usage error, 2 runtime failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict
from pathlib import Path

import torch

from . import __version__
from .config import ABLATIONS, PRESETS, TrainConfig, preset_config
from .data import make_batch, make_examples
from .evaluation import (
    export_label_embeddings,
    full_report,
    report_csv,
    slice_metrics,
    trends_csv,
    trends_svg,
    weekly_trends,
)
from .ingest import (
    TicketError,
    UnprofilableTicket,
    build_incident_context,
    parse_timestamp,
    read_tickets,
)
from .taxonomy import TaxonomyError, description_texts, load_taxonomy
from .text_encoder import Vocabulary, build_vocab

log = logging.getLogger("faultprof")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}\n\n{self.format_usage()}")


VALIDATION_ERRORS = (UsageError, TaxonomyError, TicketError, ValueError, KeyError, FileNotFoundError)


# --------------------------------------------------------------------------
# helpers

def _write_json(path: Path, payload) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True, ensure_ascii=False)
        fh.write("\n")


def _write_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def _run_config(args, extra=None) -> dict:
    settings = {k: (str(v) if isinstance(v, Path) else v) for k, v in vars(args).items()
                if k not in ("handler",)}
    payload = {"command": args.command, "version": __version__, "settings": settings}
    if extra:
        payload.update(extra)
    return payload


def _save_run_config(args, out: Path, is_file: bool, extra=None) -> None:
    path = out.with_name(out.name + ".run.json") if is_file else out / "run_config.json"
    _write_json(path, _run_config(args, extra))


def _load_tickets(path, strict=False):
    report = read_tickets(path, strict=strict)
    for line_no, message in report.errors:
        log.warning("%s:%d: %s", path, line_no, message)
    return report


def _resolve_train_config(args) -> TrainConfig:
    overrides = {}
    if args.config:
        with open(args.config, encoding="utf-8") as fh:
            overrides.update(json.load(fh))
    preset = overrides.pop("preset", None) or args.preset
    for flag in ("seed", "epochs", "threshold"):
        value = getattr(args, flag, None)
        if value is not None:
            overrides[flag] = value
    if args.ablate:
        overrides["ablations"] = tuple(overrides.get("ablations", ())) + tuple(args.ablate)
    return preset_config(preset, **overrides)


def _hyperparameter_line(cfg: TrainConfig) -> str:
    return (f"preset={cfg.preset} lr={cfg.lr_peak:g} warmup={cfg.warmup_fraction:.0%} "
            f"batch={cfg.batch_size} epochs={cfg.epochs} alpha={cfg.alpha:g} gamma={cfg.gamma:g} "
            f"lambda={cfg.lam:g} tau={cfg.tau:g} d_t={cfg.d_model} heads={cfg.graph_heads} "
            f"max_len={cfg.max_len} ablations={','.join(cfg.ablations) or 'none'}")


# --------------------------------------------------------------------------
# subcommands

def cmd_ingest(args) -> int:
    out = Path(args.out)
    report = _load_tickets(args.tickets, strict=args.strict)
    contexts = []
    for ticket in report.tickets:
        ctx = build_incident_context(ticket)
        contexts.append(json.dumps({"id": ctx.source_id, "text": ctx.text}, ensure_ascii=False))
    _write_text(out / "contexts.jsonl", "".join(line + "\n" for line in contexts))
    _write_text(out / "errors.jsonl", "".join(
        json.dumps({"line": n, "error": msg}) + "\n" for n, msg in report.errors))
    _save_run_config(args, out, is_file=False)
    print(f"parsed {len(report.tickets)} tickets, {len(report.errors)} errors")
    return 1 if report.errors and args.strict else 0


def cmd_taxonomy_validate(args) -> int:
    taxonomy = load_taxonomy(args.taxonomy)
    leaves = sum(taxonomy.is_leaf(n.id) for n in taxonomy.nodes)
    roots = sum(n.parent_id is None for n in taxonomy.nodes)
    print(f"valid taxonomy: k={taxonomy.k} depth={taxonomy.depth} roots={roots} leaves={leaves} "
          f"fingerprint={taxonomy.fingerprint()[:12]}")
    if args.out:
        _save_run_config(args, Path(args.out), is_file=False)
    return 0


def cmd_vocab(args) -> int:
    out = Path(args.out)
    corpus = [build_incident_context(t).text for t in _load_tickets(args.tickets).tickets]
    if args.taxonomy:
        corpus += description_texts(load_taxonomy(args.taxonomy))
    vocab = build_vocab(corpus, args.size)
    out.parent.mkdir(parents=True, exist_ok=True)
    vocab.save(out)
    _save_run_config(args, out, is_file=True)
    print(f"vocabulary of {len(vocab)} tokens written to {out}")
    return 0


def cmd_train(args) -> int:
    from .trainer import save_checkpoint, set_threads, train

    cfg = _resolve_train_config(args)
    print(_hyperparameter_line(cfg), flush=True)
    if args.dry_run:
        print(json.dumps(cfg.to_dict(), sort_keys=True))
        return 0
    set_threads()
    out = Path(args.out)
    taxonomy = load_taxonomy(args.taxonomy)
    train_tickets = _load_tickets(args.tickets).tickets
    dev_tickets = _load_tickets(args.dev).tickets if args.dev else []
    if args.vocab:
        vocab = Vocabulary.load(args.vocab)
    else:
        corpus = [build_incident_context(t).text for t in train_tickets] + description_texts(taxonomy)
        vocab = build_vocab(corpus, cfg.vocab_size)
    train_set = make_examples(train_tickets, taxonomy, vocab, cfg.max_len, cfg.label_closure,
                              require_gold=True)
    dev_set = make_examples(dev_tickets, taxonomy, vocab, cfg.max_len, cfg.label_closure)
    out.mkdir(parents=True, exist_ok=True)
    log_path = out / "train_log.jsonl"
    with open(log_path, "w", encoding="utf-8", newline="\n") as fh:
        def on_epoch(record):
            fh.write(json.dumps(record, sort_keys=True) + "\n")
            fh.flush()
            print(" ".join(f"{k}={v:.4f}" if isinstance(v, float) else f"{k}={v}"
                           for k, v in record.items()), flush=True)

        result = train(cfg, train_set, dev_set, taxonomy, vocab, on_epoch=on_epoch)
    save_checkpoint(out / "checkpoint", result.checkpoint)
    _save_run_config(args, out, is_file=False, extra={"train_config": cfg.to_dict()})
    print(f"checkpoint written to {out / 'checkpoint'} (best epoch {result.checkpoint.metrics['best_epoch']})")
    return 0


def cmd_predict(args) -> int:
    from .classifier import predict_labels
    from .trainer import load_checkpoint, predict_examples, set_threads

    set_threads()
    out = Path(args.out)
    taxonomy = load_taxonomy(args.taxonomy) if args.taxonomy else None
    ckpt = load_checkpoint(args.checkpoint, taxonomy)
    model = ckpt.build_model()
    tickets = _load_tickets(args.tickets).tickets
    examples = make_examples(tickets, ckpt.taxonomy, ckpt.vocab, ckpt.config.max_len)
    probs = predict_examples(model, examples)
    threshold = args.threshold if args.threshold is not None else ckpt.config.threshold
    lines = []
    for ticket, row in zip(tickets, probs):
        labels = predict_labels(row, threshold, ckpt.taxonomy, closure=args.closure)
        entries = [{"node_id": ckpt.taxonomy.nodes[j].id, "prob": round(float(row[j]), 6)}
                   for j in sorted(labels)]
        lines.append(json.dumps({"ticket_id": ticket.id, "labels": entries}, sort_keys=True))
    _write_text(out, "".join(line + "\n" for line in lines))
    _save_run_config(args, out, is_file=True)
    print(f"wrote predictions for {len(lines)} tickets to {out}")
    return 0


def read_predictions(path) -> dict:
    predictions = {}
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
                predictions[record["ticket_id"]] = {e["node_id"] for e in record["labels"]}
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise ValueError(f"{path}:{line_no}: malformed prediction record ({exc})") from exc
    return predictions


def cmd_eval(args) -> int:
    from .taxonomy import ancestor_closure

    out = Path(args.out)
    taxonomy = load_taxonomy(args.taxonomy)
    predictions = read_predictions(args.predictions)
    tickets = [t for t in _load_tickets(args.tickets).tickets if t.gold_labels is not None]
    missing = [t.id for t in tickets if t.id not in predictions]
    if missing:
        raise ValueError(f"{len(missing)} gold tickets have no prediction, e.g. {missing[:3]}")
    preds = [predictions[t.id] for t in tickets]
    golds = [set(t.gold_labels) for t in tickets]
    if not args.raw_gold:
        golds = [ancestor_closure(taxonomy, g) for g in golds]
    report = full_report(preds, golds, tickets, taxonomy)
    report.slices["level"] = slice_metrics(preds, golds, tickets, "level", taxonomy)
    _write_json(out / "metrics.json", report.to_dict())
    _write_text(out / "metrics.csv", report_csv(report))
    _save_run_config(args, out, is_file=False)
    head = report.headline(args.metric_mode)
    print(f"{args.metric_mode}: precision={head['precision']:.4f} recall={head['recall']:.4f} "
          f"f1={head['f1']:.4f} over {len(tickets)} tickets")
    return 0


def cmd_trends(args) -> int:
    out = Path(args.out)
    predictions = read_predictions(args.predictions)
    tickets = {t.id: t for t in _load_tickets(args.tickets).tickets}
    records = [(tickets[tid].created_at, labels) for tid, labels in sorted(predictions.items())
               if tid in tickets]
    nodes = [n for group in args.nodes for n in group.split(",") if n]
    since = parse_timestamp(args.since) if args.since else None
    until = parse_timestamp(args.until) if args.until else None
    series = weekly_trends(records, nodes, since, until)
    _write_text(out / "trends.csv", trends_csv(series))
    if not args.no_svg:
        _write_text(out / "trends.svg", trends_svg(series))
    _save_run_config(args, out, is_file=False)
    print(f"{len({p.week for p in series})} weeks x {len(nodes)} nodes written to {out}")
    return 0


def cmd_synth(args) -> int:
    from .synth import SynthSpec, generate, write_corpus

    spec = SynthSpec(depth=args.depth, branching=args.branching, roots=args.roots,
                     tickets=args.n_tickets, keywords_per_leaf=args.keywords_per_leaf,
                     noise_tokens=args.noise_tokens, noise_vocab=args.noise_vocab,
                     max_leaves=args.max_leaves, skew=args.skew, seed=args.seed)
    out = Path(args.out)
    corpus = generate(spec)
    write_corpus(corpus, out, spec)
    _save_run_config(args, out, is_file=False, extra={"synth_spec": asdict(spec)})
    print(f"k={corpus.taxonomy.k} train={len(corpus.train)} dev={len(corpus.dev)} test={len(corpus.test)}")
    return 0


def cmd_gradcheck(args) -> int:
    from .model import FaultProfiler
    from .trainer import grad_check, load_checkpoint

    if args.checkpoint:
        ckpt = load_checkpoint(args.checkpoint)
        model, taxonomy, vocab, cfg = ckpt.build_model(), ckpt.taxonomy, ckpt.vocab, ckpt.config
    else:
        if not (args.taxonomy and args.tickets):
            raise UsageError("gradcheck needs --checkpoint or both --taxonomy and --tickets")
        cfg = _resolve_train_config(args)
        taxonomy = load_taxonomy(args.taxonomy)
        tickets = _load_tickets(args.tickets).tickets
        corpus = [build_incident_context(t).text for t in tickets] + description_texts(taxonomy)
        vocab = build_vocab(corpus, cfg.vocab_size)
        torch.manual_seed(cfg.seed)
        model = FaultProfiler(cfg, taxonomy, vocab)
        tickets = tickets[: args.examples]
    if args.checkpoint:
        tickets = _load_tickets(args.tickets).tickets[: args.examples] if args.tickets else []
        if not tickets:
            raise UsageError("gradcheck needs --tickets with gold labels")
    examples = make_examples(tickets, taxonomy, vocab, cfg.max_len, cfg.label_closure, require_gold=True)
    report = grad_check(model, make_batch(examples, taxonomy.k), eps=args.eps,
                        min_samples=args.samples, seed=cfg.seed, fail_above=float("inf"))
    print(report.summary())
    if args.out:
        out = Path(args.out)
        _write_json(out / "gradcheck.json", {
            "max_rel_error": report.max_rel_error,
            "resolution": report.resolution,
            "checked": report.checked,
            "tensors": report.tensors,
            "passed": report.passed,
            "per_tensor": report.per_tensor,
            "worst": [list(w) for w in report.worst],
        })
        _save_run_config(args, out, is_file=False)
    return 0 if report.passed else 1


def cmd_export_embeddings(args) -> int:
    from .trainer import load_checkpoint

    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    ckpt = load_checkpoint(args.checkpoint)
    node_ids, weight = export_label_embeddings(ckpt, out)
    _save_run_config(args, out, is_file=True)
    print(f"exported {len(node_ids)} x {weight.shape[1]} label embeddings to {out}")
    return 0


# --------------------------------------------------------------------------
# parser

def _train_options(p):
    p.add_argument("--preset", choices=sorted(PRESETS), default="desk")
    p.add_argument("--config", help="JSON file of TrainConfig overrides")
    p.add_argument("--seed", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--ablate", action="append", choices=ABLATIONS, default=[])


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="faultprof", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("ingest", help="parse and clean tickets, emit incident contexts")
    p.add_argument("--tickets", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--strict", action="store_true")
    p.set_defaults(handler=cmd_ingest)

    p = sub.add_parser("taxonomy-validate", help="validate a taxonomy file")
    p.add_argument("--taxonomy", required=True)
    p.add_argument("--out")
    p.set_defaults(handler=cmd_taxonomy_validate)

    p = sub.add_parser("vocab", help="build a vocabulary file")
    p.add_argument("--tickets", required=True)
    p.add_argument("--taxonomy")
    p.add_argument("--size", type=int, default=TrainConfig.vocab_size)
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_vocab)

    p = sub.add_parser("train", help="train a profiler")
    p.add_argument("--taxonomy", required=True)
    p.add_argument("--tickets", required=True)
    p.add_argument("--dev")
    p.add_argument("--vocab")
    p.add_argument("--out", required=True)
    p.add_argument("--threshold", type=float)
    p.add_argument("--dry-run", action="store_true", help="print the resolved config and exit")
    _train_options(p)
    p.set_defaults(handler=cmd_train)

    p = sub.add_parser("predict", help="profile tickets with a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--tickets", required=True)
    p.add_argument("--taxonomy", help="verify the checkpoint against this taxonomy")
    p.add_argument("--out", required=True)
    p.add_argument("--threshold", type=float)
    p.add_argument("--closure", action="store_true", help="add ancestors of predicted nodes")
    p.set_defaults(handler=cmd_predict)

    p = sub.add_parser("eval", help="score predictions against gold labels")
    p.add_argument("--predictions", required=True)
    p.add_argument("--tickets", required=True)
    p.add_argument("--taxonomy", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--metric-mode", choices=("micro", "example"), default="micro")
    p.add_argument("--raw-gold", action="store_true", help="do not close gold labels upwards")
    p.set_defaults(handler=cmd_eval)

    p = sub.add_parser("trends", help="weekly fault-pattern occurrence")
    p.add_argument("--predictions", required=True)
    p.add_argument("--tickets", required=True)
    p.add_argument("--nodes", action="append", required=True, help="node ids, comma separated")
    p.add_argument("--since")
    p.add_argument("--until")
    p.add_argument("--no-svg", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_trends)

    p = sub.add_parser("synth", help="generate a synthetic taxonomy and ticket corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--depth", type=int, default=3)
    p.add_argument("--branching", type=int, default=3)
    p.add_argument("--roots", type=int, default=2)
    p.add_argument("--n-tickets", type=int, default=1000)
    p.add_argument("--keywords-per-leaf", type=int, default=2)
    p.add_argument("--noise-tokens", type=int, default=12)
    p.add_argument("--noise-vocab", type=int, default=300)
    p.add_argument("--max-leaves", type=int, default=3)
    p.add_argument("--skew", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=7)
    p.set_defaults(handler=cmd_synth)

    p = sub.add_parser("gradcheck", help="finite-difference gradient check (float64)")
    p.add_argument("--checkpoint")
    p.add_argument("--taxonomy")
    p.add_argument("--tickets")
    p.add_argument("--examples", type=int, default=3)
    p.add_argument("--samples", type=int, default=200)
    p.add_argument("--eps", type=float, default=1e-5)
    p.add_argument("--out")
    _train_options(p)
    p.set_defaults(handler=cmd_gradcheck)

    p = sub.add_parser("export-embeddings", help="write classifier rows as node embeddings (CSV)")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_export_embeddings)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.handler(args)
    except UnprofilableTicket as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except VALIDATION_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001
        log.debug("runtime failure", exc_info=True)
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
