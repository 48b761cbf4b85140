"""Joint optimisation, checkpoint persistence and finite-difference gradient checks."""
from __future__ import annotations

import copy
import hashlib
import json
import logging
import math
import os
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np
import torch

from .config import TrainConfig
from .data import Example, make_batch
from .evaluation import micro_scores
from .model import FaultProfiler
from .taxonomy import Taxonomy, load_taxonomy, save_taxonomy
from .text_encoder import Vocabulary

log = logging.getLogger(__name__)


# --------------------------------------------------------------------------
# schedule and optimiser

def lr_schedule(step: int, total_steps: int, config: TrainConfig) -> float:
    """Linear warm-up to ``lr_peak`` then linear decay to zero at ``total_steps``."""
    if total_steps < 1 or not 0 <= step <= total_steps:
        raise ValueError(f"need 0 <= step <= total_steps and total_steps >= 1, got {step}/{total_steps}")
    warmup = math.ceil(config.warmup_fraction * total_steps)
    if step < warmup:
        return config.lr_peak * step / warmup
    if total_steps == warmup:
        return config.lr_peak
    return config.lr_peak * (total_steps - step) / (total_steps - warmup)


@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: dict, grads: dict, state: AdamState, lr: float) -> None:
    """One bias-corrected Adam update, applied in place to ``params``.

    ``params`` and ``grads`` map parameter names to tensors. A non-finite
    gradient aborts before anything is modified.
    """
    for name, g in grads.items():
        if g is not None and not bool(torch.isfinite(g).all()):
            raise FloatingPointError(f"non-finite gradient for parameter {name!r}")
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    with torch.no_grad():
        for name, p in params.items():
            g = grads.get(name)
            if g is None:
                continue
            if g.shape != p.shape:
                raise ValueError(f"gradient shape {tuple(g.shape)} != parameter shape {tuple(p.shape)} for {name!r}")
            m = state.m.setdefault(name, torch.zeros_like(p))
            v = state.v.setdefault(name, torch.zeros_like(p))
            m.mul_(state.beta1).add_(g, alpha=1.0 - state.beta1)
            v.mul_(state.beta2).addcmul_(g, g, value=1.0 - state.beta2)
            p.sub_(lr * (m / c1) / ((v / c2).sqrt() + state.eps))


def clip_global_norm(grads: dict, max_norm: float) -> float:
    norm = math.sqrt(sum(float((g.double() ** 2).sum()) for g in grads.values()))
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / (norm + 1e-6)
        for g in grads.values():
            g.mul_(scale)
    return norm


# --------------------------------------------------------------------------
# checkpoint

@dataclass
class ModelCheckpoint:
    tensors: dict            # name -> float32 numpy array
    vocab: Vocabulary
    taxonomy: Taxonomy
    config: TrainConfig
    step: int = 0
    metrics: dict = field(default_factory=dict)

    @property
    def taxonomy_fingerprint(self) -> str:
        return self.taxonomy.fingerprint()

    @classmethod
    def from_model(cls, model: FaultProfiler, vocab: Vocabulary, taxonomy: Taxonomy,
                   step: int = 0, metrics: Optional[dict] = None) -> "ModelCheckpoint":
        tensors = {
            name: p.detach().cpu().to(torch.float32).numpy().copy()
            for name, p in model.named_parameters()
        }
        return cls(tensors, vocab, taxonomy, model.config, step, dict(metrics or {}))

    def build_model(self) -> FaultProfiler:
        model = FaultProfiler(self.config, self.taxonomy, self.vocab)
        expected = dict(model.named_parameters())
        missing = set(expected) - set(self.tensors)
        extra = set(self.tensors) - set(expected)
        if missing or extra:
            raise ValueError(f"checkpoint tensors do not match model: missing {sorted(missing)}, extra {sorted(extra)}")
        with torch.no_grad():
            for name, p in expected.items():
                value = self.tensors[name]
                if tuple(value.shape) != tuple(p.shape):
                    raise ValueError(f"shape mismatch for {name}: {value.shape} vs {tuple(p.shape)}")
                p.copy_(torch.from_numpy(value))
        model.eval()
        return model


class CheckpointError(ValueError):
    pass


MANIFEST = "manifest.json"
PAYLOAD = "weights.bin"
VOCAB = "vocab.txt"
TAXONOMY = "taxonomy.json"


def save_checkpoint(path, checkpoint: ModelCheckpoint) -> None:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    entries = []
    offset = 0
    payload = hashlib.sha256()
    with open(path / PAYLOAD, "wb") as fh:
        for name in sorted(checkpoint.tensors):
            data = np.ascontiguousarray(checkpoint.tensors[name], dtype="<f4").tobytes()
            fh.write(data)
            payload.update(data)
            entries.append({
                "name": name,
                "shape": list(checkpoint.tensors[name].shape),
                "dtype": "float32",
                "offset": offset,
                "nbytes": len(data),
                "sha256": hashlib.sha256(data).hexdigest(),
            })
            offset += len(data)
    checkpoint.vocab.save(path / VOCAB)
    save_taxonomy(path / TAXONOMY, checkpoint.taxonomy)
    manifest = {
        "format": "faultprof-checkpoint/1",
        "config": checkpoint.config.to_dict(),
        "step": checkpoint.step,
        "metrics": checkpoint.metrics,
        "taxonomy_fingerprint": checkpoint.taxonomy_fingerprint,
        "vocab": VOCAB,
        "taxonomy": TAXONOMY,
        "payload": PAYLOAD,
        "payload_sha256": payload.hexdigest(),
        "tensors": entries,
    }
    with open(path / MANIFEST, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_checkpoint(path, taxonomy: Optional[Taxonomy] = None) -> ModelCheckpoint:
    """Load and verify a checkpoint directory.

    When ``taxonomy`` is given its fingerprint must match the one recorded
    at training time.
    """
    path = Path(path)
    try:
        with open(path / MANIFEST, encoding="utf-8") as fh:
            manifest = json.load(fh)
        tensors_meta = manifest["tensors"]
        recorded = manifest["taxonomy_fingerprint"]
    except (OSError, json.JSONDecodeError, KeyError, TypeError) as exc:
        raise CheckpointError(f"corrupt or missing manifest in {path}: {exc}") from exc
    raw = (path / manifest.get("payload", PAYLOAD)).read_bytes()
    if hashlib.sha256(raw).hexdigest() != manifest.get("payload_sha256"):
        raise CheckpointError("weights payload checksum mismatch")
    tensors = {}
    for entry in tensors_meta:
        chunk = raw[entry["offset"] : entry["offset"] + entry["nbytes"]]
        if hashlib.sha256(chunk).hexdigest() != entry["sha256"]:
            raise CheckpointError(f"checksum mismatch for tensor {entry['name']}")
        shape = tuple(entry["shape"])
        array = np.frombuffer(chunk, dtype="<f4")
        if array.size != int(np.prod(shape, dtype=np.int64)):
            raise CheckpointError(f"shape mismatch for tensor {entry['name']}")
        tensors[entry["name"]] = array.reshape(shape).astype(np.float32)
    stored_taxonomy = load_taxonomy(path / manifest.get("taxonomy", TAXONOMY))
    if stored_taxonomy.fingerprint() != recorded:
        raise CheckpointError("stored taxonomy does not match the recorded fingerprint")
    if taxonomy is not None and taxonomy.fingerprint() != recorded:
        raise CheckpointError(
            f"taxonomy fingerprint mismatch: checkpoint {recorded[:12]}, given {taxonomy.fingerprint()[:12]}"
        )
    vocab = Vocabulary.load(path / manifest.get("vocab", VOCAB))
    config = TrainConfig.from_dict(manifest["config"])
    return ModelCheckpoint(tensors, vocab, stored_taxonomy, config,
                           manifest.get("step", 0), manifest.get("metrics", {}))


# --------------------------------------------------------------------------
# training

def set_threads(default: int = 1) -> int:
    threads = int(os.environ.get("FAULTPROF_THREADS", default))
    threads = max(1, threads)
    torch.set_num_threads(threads)
    return threads


def predict_examples(model: FaultProfiler, examples: Sequence[Example],
                     batch_size: int = 64) -> np.ndarray:
    out = []
    for start in range(0, len(examples), batch_size):
        batch = make_batch(examples[start : start + batch_size], model.k)
        out.append(model.predict_proba(batch).double().numpy())
    if not out:
        return np.zeros((0, model.k))
    return np.concatenate(out)


def label_sets(probs: np.ndarray, threshold: float) -> list:
    return [set(np.flatnonzero(row > threshold).tolist()) for row in probs]


def evaluate_micro_f1(model: FaultProfiler, examples: Sequence[Example], threshold: float) -> float:
    preds = label_sets(predict_examples(model, examples), threshold)
    return micro_scores(preds, [set(e.gold) for e in examples])["f1"]


@dataclass
class TrainResult:
    checkpoint: ModelCheckpoint
    log: list          # one dict per epoch
    model: FaultProfiler


def train(config: TrainConfig, train_set: Sequence[Example], dev_set: Sequence[Example],
          taxonomy: Taxonomy, vocab: Vocabulary,
          on_epoch: Optional[Callable[[dict], None]] = None) -> TrainResult:
    """Train every module jointly and keep the best-dev-F1 weights."""
    if not train_set:
        raise ValueError("empty training set")
    for e in train_set:
        if not e.gold:
            raise ValueError(f"training example {e.ticket_id!r} has an empty gold label set")
    torch.manual_seed(config.seed)
    model = FaultProfiler(config, taxonomy, vocab)
    generator = torch.Generator().manual_seed(config.seed)
    shuffler = random.Random(config.seed)
    params = dict(model.named_parameters())
    state = AdamState()
    steps_per_epoch = math.ceil(len(train_set) / config.batch_size)
    total_steps = steps_per_epoch * config.epochs
    order = list(range(len(train_set)))
    best = None
    history = []
    step = 0
    for epoch in range(1, config.epochs + 1):
        model.train()
        shuffler.shuffle(order)
        sums = {"total": 0.0, "cls": 0.0, "pos_cls": 0.0, "contra": 0.0}
        for start in range(0, len(order), config.batch_size):
            batch = make_batch([train_set[i] for i in order[start : start + config.batch_size]], model.k)
            parts, _ = model.loss(batch, generator)
            if not math.isfinite(float(parts.total.detach())):
                raise FloatingPointError(f"non-finite loss at step {step}")
            model.zero_grad(set_to_none=True)
            parts.total.backward()
            grads = {n: p.grad for n, p in params.items() if p.grad is not None}
            for name, g in grads.items():
                if not bool(torch.isfinite(g).all()):
                    raise FloatingPointError(f"non-finite gradient for parameter {name!r}")
            clip_global_norm(grads, config.grad_clip)
            adam_step(params, grads, state, lr_schedule(step, total_steps, config))
            step += 1
            for key, value in parts.as_floats().items():
                sums[key] += value
        record = {"epoch": epoch, "step": step}
        record.update({f"loss_{k}": v / steps_per_epoch for k, v in sums.items()})
        if dev_set:
            model.eval()
            record["dev_micro_f1"] = evaluate_micro_f1(model, dev_set, config.threshold)
        history.append(record)
        log.info("epoch %d %s", epoch, record)
        if on_epoch:
            on_epoch(record)
        score = record.get("dev_micro_f1", -record["loss_total"])
        if best is None or score > best[0]:
            best = (score, epoch, step, copy.deepcopy(model.state_dict()))
    _, best_epoch, best_step, best_state = best
    model.load_state_dict(best_state)
    model.eval()
    metrics = {"best_epoch": best_epoch}
    if dev_set:
        metrics["dev_micro_f1"] = history[best_epoch - 1]["dev_micro_f1"]
    checkpoint = ModelCheckpoint.from_model(model, vocab, taxonomy, best_step, metrics)
    return TrainResult(checkpoint, history, model)


# --------------------------------------------------------------------------
# gradient checking

class GradCheckError(AssertionError):
    pass


@dataclass
class GradCheckReport:
    max_rel_error: float
    resolution: float
    checked: int
    tensors: int
    per_tensor: dict                 # name -> worst relative error
    worst: list                      # [(name, index, analytic, numeric, rel)]
    passed: bool

    def summary(self) -> str:
        return (f"checked {self.checked} scalars over {self.tensors} tensors; "
                f"max relative error {self.max_rel_error:.3e} "
                f"(fd resolution {self.resolution:.1e}; {'pass' if self.passed else 'FAIL'})")


def relative_error(analytic: float, numeric: float, floor: float) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def grad_check(model: FaultProfiler, batch, eps: float = 1e-5, min_samples: int = 200,
               per_tensor: int = 3, tolerance: float = 1e-4, fail_above: float = 1e-3,
               floor: Optional[float] = None, noise_units: float = 4.0, seed: int = 0,
               grad_transform: Optional[Callable[[dict], dict]] = None) -> GradCheckReport:
    """Compare autograd gradients with central finite differences.

    Runs in float64 with dropout off; the gumbel noise, the positive-token
    selection and the straight-through anchor are drawn once and reused for
    every evaluation. ``grad_transform`` lets tests inject a corrupted
    gradient.

    Relative errors use ``max(|a|, |n|, floor)`` as denominator. By default
    the floor is derived from the finite-difference resolution
    ``spacing(|L|) / eps`` (the smallest loss change float64 can register,
    per unit step): gradients that differ by less than ``noise_units``
    resolution steps are treated as agreeing.
    """
    model = copy.deepcopy(model).double()
    model.eval()
    if batch.gold is not None:
        batch = type(batch)(batch.ids, batch.mask, batch.gold.double())
    generator = torch.Generator().manual_seed(seed)
    parts, draw = model.loss(batch, generator)
    params = dict(model.named_parameters())
    model.zero_grad(set_to_none=True)
    resolution = float(np.spacing(abs(float(parts.total.detach())))) / eps
    if floor is None:
        floor = noise_units * resolution / tolerance
    parts.total.backward()
    analytic = {n: (p.grad.clone() if p.grad is not None else torch.zeros_like(p))
                for n, p in params.items()}
    if grad_transform is not None:
        analytic = grad_transform(analytic)

    def loss_value() -> float:
        with torch.no_grad():
            return float(model.loss(batch, None, draw)[0].total)

    rng = np.random.default_rng(seed)
    counts = {n: min(p.numel(), per_tensor) for n, p in params.items()}
    budget = min_samples - sum(counts.values())
    names = list(params)
    while budget > 0:
        growable = [n for n in names if counts[n] < params[n].numel()]
        if not growable:
            break
        name = growable[int(rng.integers(len(growable)))]
        counts[name] += 1
        budget -= 1

    results = []
    per_tensor_worst = {}
    for name, p in params.items():
        flat = p.data.view(-1)
        picks = rng.choice(p.numel(), size=counts[name], replace=False)
        worst = 0.0
        for idx in sorted(int(i) for i in picks):
            orig = float(flat[idx])
            flat[idx] = orig + eps
            up = loss_value()
            flat[idx] = orig - eps
            down = loss_value()
            flat[idx] = orig
            numeric = (up - down) / (2 * eps)
            a = float(analytic[name].reshape(-1)[idx])
            rel = relative_error(a, numeric, floor)
            worst = max(worst, rel)
            results.append((name, idx, a, numeric, rel))
        per_tensor_worst[name] = worst
    results.sort(key=lambda r: -r[4])
    max_rel = results[0][4] if results else 0.0
    report = GradCheckReport(max_rel, resolution, len(results), len(params), per_tensor_worst,
                             results[:10], max_rel <= tolerance)
    if max_rel > fail_above:
        name, idx, a, numeric, rel = results[0]
        raise GradCheckError(
            f"gradient mismatch for {name}[{idx}]: analytic {a:.6e}, numeric {numeric:.6e}, "
            f"relative error {rel:.3e}"
        )
    return report
