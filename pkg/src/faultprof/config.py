"""Training configuration and the two scale presets (desk and full scale)."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

ABLATIONS = (
    "no_graphormer",
    "no_description_embedding",
    "no_contrastive_loss",
    "no_augmented_loss",
    "no_contrastive_module",
)


@dataclass
class TrainConfig:
    preset: str = "desk"
    # optimisation
    lr_peak: float = 1e-3
    warmup_fraction: float = 0.05
    batch_size: int = 16
    epochs: int = 30
    grad_clip: float = 1.0
    seed: int = 0
    # objective
    alpha: float = 0.1
    gamma: float = 5.0
    lam: float = 0.01
    tau: float = 1.0
    gumbel_temperature: float = 1.0
    threshold: float = 0.5
    # text encoder
    vocab_size: int = 4000
    d_model: int = 64
    num_layers: int = 2
    num_heads: int = 4
    max_len: int = 128
    dropout: float = 0.1
    # hierarchy encoder
    graph_layers: int = 2
    graph_heads: int = 8
    degree_encoding: bool = True
    # switches
    raw_attention: bool = False
    straight_through: bool = True
    freeze_descriptions: bool = False
    label_closure: bool = True
    ablations: tuple = field(default_factory=tuple)

    def __post_init__(self):
        self.ablations = tuple(sorted(set(self.ablations)))
        problems = []
        if self.batch_size < 1:
            problems.append("batch_size must be >= 1")
        if not 0.0 <= self.warmup_fraction < 1.0:
            problems.append("warmup_fraction must lie in [0, 1)")
        if self.epochs < 1:
            problems.append("epochs must be >= 1")
        for name in ("tau", "gumbel_temperature", "gamma", "lr_peak"):
            if getattr(self, name) <= 0:
                problems.append(f"{name} must be positive")
        if self.alpha < 0:
            problems.append("alpha must be non-negative")
        unknown = set(self.ablations) - set(ABLATIONS)
        if unknown:
            problems.append(f"unknown ablations {sorted(unknown)}; choose from {list(ABLATIONS)}")
        if problems:
            raise ValueError("; ".join(problems))

    def ablated(self, name: str) -> bool:
        return name in self.ablations

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["ablations"] = list(self.ablations)
        return d

    @classmethod
    def from_dict(cls, payload: dict) -> "TrainConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(payload) - names
        if unknown:
            raise ValueError(f"unknown config keys {sorted(unknown)}")
        payload = dict(payload)
        if "ablations" in payload:
            payload["ablations"] = tuple(payload["ablations"])
        return cls(**payload)


PRESETS = {
    "desk": {},
    # hyperparameters reported for the production model
    "paper": dict(
        lr_peak=1e-5,
        warmup_fraction=0.05,
        batch_size=8,
        epochs=100,
        alpha=0.1,
        gamma=5.0,
        lam=0.01,
        tau=1.0,
        vocab_size=30000,
        d_model=768,
        num_layers=12,
        num_heads=8,
        max_len=512,
        graph_heads=8,
    ),
}


def preset_config(name: str = "desk", **overrides) -> TrainConfig:
    if name not in PRESETS:
        raise ValueError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    return TrainConfig(preset=name, **{**PRESETS[name], **overrides})
