"""Run configuration: one JSON document holding every tunable setting."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

from ..acoustics import CorpusRecipe
from ..dsp import StftConfig
from ..networks import BeamformerNetConfig, EstimatorConfig


@dataclass
class TrainConfig:
    chunk_seconds: float = 4.0
    batch_size: int = 8
    lr: float = 1e-4
    clip_norm: float = 10.0
    max_epochs: int = 100
    patience: int = 5
    seed: int = 0
    precision: str = "float64"
    max_steps: int | None = None
    time_budget_s: float | None = None
    log_every: int = 1

    def validate(self) -> None:
        if self.chunk_seconds <= 0 or self.batch_size <= 0 or self.lr < 0 or self.clip_norm <= 0:
            raise ValueError("chunk_seconds, batch_size, clip_norm must be > 0 and lr >= 0")
        if self.max_epochs <= 0 or self.patience < 1:
            raise ValueError("max_epochs must be positive and patience >= 1")
        if self.precision not in ("float32", "float64"):
            raise ValueError("precision must be float32 or float64")


@dataclass
class RunConfig:
    stft: StftConfig = field(default_factory=StftConfig)
    recipe: CorpusRecipe = field(default_factory=CorpusRecipe)
    estimator: EstimatorConfig = field(default_factory=EstimatorConfig)
    beamformer: BeamformerNetConfig = field(default_factory=BeamformerNetConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    num_speakers: int = 3
    corpus_sizes: tuple = (153800, 500, 1053)
    ref_channel: int = 0
    model_seed: int = 0

    @property
    def num_mics(self) -> int:
        return len(self.recipe.mic_x)

    def to_dict(self) -> dict:
        return {
            "stft": self.stft.to_dict(),
            "recipe": self.recipe.to_dict(),
            "estimator": asdict(self.estimator),
            "beamformer": asdict(self.beamformer),
            "train": asdict(self.train),
            "num_speakers": self.num_speakers,
            "corpus_sizes": list(self.corpus_sizes),
            "ref_channel": self.ref_channel,
            "model_seed": self.model_seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        base = cls()
        return cls(
            stft=StftConfig(**d.get("stft", {})) if "stft" in d else base.stft,
            recipe=CorpusRecipe.from_dict(d["recipe"]) if "recipe" in d else base.recipe,
            estimator=EstimatorConfig(**d.get("estimator", {})),
            beamformer=BeamformerNetConfig(**d.get("beamformer", {})),
            train=TrainConfig(**d.get("train", {})),
            num_speakers=d.get("num_speakers", base.num_speakers),
            corpus_sizes=tuple(d.get("corpus_sizes", base.corpus_sizes)),
            ref_channel=d.get("ref_channel", 0),
            model_seed=d.get("model_seed", 0),
        )

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))

    @classmethod
    def load(cls, path) -> "RunConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def with_variant(self, variant: str) -> "RunConfig":
        d = self.to_dict()
        d["beamformer"]["variant"] = variant
        return RunConfig.from_dict(d)


def desk_config(**overrides) -> RunConfig:
    """Small profile that trains on one CPU: 4 mics, up to 2 speakers, 200/20/20 utterances."""
    cfg = RunConfig(
        recipe=CorpusRecipe(speakers=(1, 2), duration_s=2.0, t60=(0.05, 0.3), max_order=6),
        estimator=EstimatorConfig(num_blocks=8, num_stacks=2, channels=128),
        beamformer=BeamformerNetConfig(fc1=256, gru_hidden=128, attention_dim=64),
        train=TrainConfig(chunk_seconds=1.0, batch_size=4, lr=1e-3, max_epochs=20,
                          precision="float32"),
        num_speakers=2,
        corpus_sizes=(200, 20, 20),
    )
    d = cfg.to_dict()
    for key, val in overrides.items():
        section, _, name = key.partition("__")
        if name:
            d[section][name] = val
        else:
            d[section] = val
    return RunConfig.from_dict(d)
