"""Chunk-wise Adam training with early stopping."""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..autodiff import Adam, Tape
from .config import RunConfig
from .data import Batch, Utterance, epoch_batches
from .evaluate import evaluate_systems
from .metrics import si_snr_loss
from .system import SeparationSystem


class NumericFailure(RuntimeError):
    """Raised when the training loss or gradients stop being finite."""

    def __init__(self, message: str, batch_ids=None):
        super().__init__(message)
        self.batch_ids = list(batch_ids or [])


@dataclass
class TrainResult:
    steps: int = 0
    epochs: int = 0
    best_val: float = -np.inf
    best_checkpoint: Path | None = None
    stopped_early: bool = False
    history: list = field(default_factory=list)  # per-step dicts
    val_history: list = field(default_factory=list)


class MetricsLog:
    """Append-only JSON-lines log (one object per step or epoch)."""

    def __init__(self, path=None):
        self.path = Path(path) if path else None
        if self.path:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self.path.write_text("")

    def write(self, obj: dict) -> None:
        if self.path:
            with open(self.path, "a") as fh:
                fh.write(json.dumps(obj) + "\n")


def train_step(model: SeparationSystem, opt: Adam, batch: Batch) -> tuple[float, float]:
    """Forward, backward and one optimiser update. Returns (loss, pre-clip grad norm)."""
    Y, feats = model.analyse(batch.mixture, batch.doas)
    opt.zero_grad()
    with Tape() as tape:
        out = model.forward(Y, feats, batch.mixture.shape[-1])
        loss = si_snr_loss(out, batch.refs, batch.active)
    value = float(loss.data)
    if not np.isfinite(value):
        raise NumericFailure(f"non-finite loss {value}", batch.ids)
    tape.backward(loss)
    norm = opt.step()
    if not np.isfinite(norm):
        raise NumericFailure(f"non-finite gradient norm {norm}", batch.ids)
    return value, norm


def validation_score(model: SeparationSystem, utts: list[Utterance]) -> float:
    """Mean per-utterance Si-SNR of the network on whole utterances."""
    variant = model.cfg.beamformer.variant
    report = evaluate_systems(utts, [variant], models={"default": model})
    return report.rows[variant].average


def train(cfg: RunConfig, train_utts: list[Utterance], val_utts: list[Utterance] | None = None,
          out_dir=None, model: SeparationSystem | None = None, log_path=None) -> tuple[SeparationSystem, TrainResult]:
    """Train ``model`` (built from ``cfg`` if omitted) and keep the best checkpoint.

    Stops after ``max_epochs``, on patience exhaustion, at ``max_steps`` or
    when ``time_budget_s`` is spent.  A non-finite loss raises
    :class:`NumericFailure` after writing the offending batch ids to
    ``out_dir/numeric_failure.json``.
    """
    tc = cfg.train
    tc.validate()
    if not train_utts:
        raise ValueError("empty training set")
    model = model or SeparationSystem(cfg)
    out_dir = Path(out_dir) if out_dir else None
    if out_dir:
        out_dir.mkdir(parents=True, exist_ok=True)
    log = MetricsLog(log_path or (out_dir / "metrics.jsonl" if out_dir else None))
    opt = Adam(model.parameters(), lr=tc.lr, clip_norm=tc.clip_norm)
    rng = np.random.default_rng(tc.seed)
    chunk = int(round(tc.chunk_seconds * cfg.stft.sample_rate))
    res = TrainResult()
    t0 = time.perf_counter()
    bad_epochs = 0
    done = False
    for epoch in range(tc.max_epochs):
        for batch in epoch_batches(train_utts, chunk, tc.batch_size, rng, cfg.num_speakers):
            try:
                loss, norm = train_step(model, opt, batch)
            except (NumericFailure, FloatingPointError) as exc:
                ids = getattr(exc, "batch_ids", batch.ids)
                if out_dir:
                    (out_dir / "numeric_failure.json").write_text(json.dumps(
                        {"step": res.steps, "epoch": epoch, "batch_ids": ids, "error": str(exc)}))
                raise NumericFailure(f"step {res.steps}: {exc} (batch {ids})", ids) from exc
            rec = {"kind": "step", "step": res.steps, "epoch": epoch, "loss": loss,
                   "grad_norm": norm, "elapsed_s": time.perf_counter() - t0}
            res.history.append(rec)
            if res.steps % max(tc.log_every, 1) == 0:
                log.write(rec)
            res.steps += 1
            if tc.max_steps is not None and res.steps >= tc.max_steps:
                done = True
            if tc.time_budget_s is not None and time.perf_counter() - t0 >= tc.time_budget_s:
                done = True
            if done:
                break
        res.epochs = epoch + 1
        if val_utts:
            score = validation_score(model, val_utts)
            res.val_history.append(score)
            log.write({"kind": "epoch", "epoch": epoch, "steps": res.steps, "val_si_snr": score,
                       "elapsed_s": time.perf_counter() - t0})
            if score > res.best_val:
                res.best_val = score
                bad_epochs = 0
                if out_dir:
                    res.best_checkpoint = out_dir / "best.ckpt"
                    model.save(res.best_checkpoint)
            else:
                bad_epochs += 1
                if bad_epochs >= tc.patience:
                    res.stopped_early = True
                    done = True
        if done:
            break
    if out_dir:
        model.save(out_dir / "last.ckpt")
        if res.best_checkpoint is None:
            res.best_checkpoint = out_dir / "last.ckpt"
    return model, res
