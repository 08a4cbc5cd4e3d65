"""Evaluation harness producing the per-slot Si-SNR table for each system."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..dsp import StftConfig
from ..networks import VARIANTS, canonical_variant
from .data import Utterance
from .metrics import si_snr
from .system import SeparationSystem, oracle_mvdr

MAX_SLOTS = 3
NEURAL_SYSTEMS = ("grnn", "rnn_temporal", "rnn_spatial", "ts_sa", "rnn_ts_sa")
ESTIMATOR_SYSTEMS = ("conv_tasnet_stft", "mvdr")
SYSTEMS = ("mixture",) + ESTIMATOR_SYSTEMS + NEURAL_SYSTEMS
EXTRA_SYSTEMS = ("mvdr_oracle",)
TABLE_LABELS = {
    "mixture": "Mixture",
    "conv_tasnet_stft": "(i) cRF only",
    "mvdr": "(ii) MVDR",
    "mvdr_oracle": "MVDR (oracle masks)",
}
for _name, _spec in VARIANTS.items():
    TABLE_LABELS.setdefault("ts_sa" if _name == "ts_sa_only" else _name, f"({_spec[0]}) {_name}")


@dataclass
class SystemRow:
    system: str
    per_utt: list            # mean over active slots, one value per utterance
    per_slot: list           # per utterance, a list of C values (None where inactive)

    def slot_mean(self, k: int) -> float | None:
        vals = [u[k] for u in self.per_slot if k < len(u) and u[k] is not None]
        return float(np.mean(vals)) if vals else None

    @property
    def average(self) -> float:
        return float(np.mean(self.per_utt))


@dataclass
class EvalReport:
    rows: dict = field(default_factory=dict)  # system -> SystemRow
    num_utts: int = 0

    def add(self, row: SystemRow) -> None:
        self.rows[row.system] = row

    def table_rows(self) -> list[dict]:
        """Machine-readable rows with SPK1..SPK3 and Ave columns (None where no data)."""
        out = []
        for name in self._ordered():
            r = self.rows[name]
            d = {"system": name, "label": TABLE_LABELS.get(name, name)}
            for k in range(MAX_SLOTS):
                d[f"SPK{k + 1}"] = r.slot_mean(k)
            d["Ave"] = r.average
            d["utterances"] = len(r.per_utt)
            out.append(d)
        return out

    def _ordered(self) -> list[str]:
        order = list(SYSTEMS) + list(EXTRA_SYSTEMS)
        known = [s for s in order if s in self.rows]
        return known + sorted(s for s in self.rows if s not in order)

    def to_text(self) -> str:
        rows = self.table_rows()
        head = ["System", "SPK1", "SPK2", "SPK3", "Ave"]
        body = [[r["label"]] + ["-" if r[c] is None else f"{r[c]:.2f}" for c in head[1:]] for r in rows]
        widths = [max(len(x[i]) for x in [head] + body) for i in range(len(head))]
        lines = ["  ".join(h.ljust(w) if i == 0 else h.rjust(w) for i, (h, w) in enumerate(zip(head, widths)))]
        lines.append("  ".join("-" * w for w in widths))
        for b in body:
            lines.append("  ".join(x.ljust(w) if i == 0 else x.rjust(w) for i, (x, w) in enumerate(zip(b, widths))))
        return "\n".join(lines)

    def to_json(self) -> str:
        return json.dumps({"num_utts": self.num_utts, "rows": self.table_rows()}, indent=2)


def score_estimates(est: np.ndarray, utt: Utterance) -> list:
    """Si-SNR per slot (slots follow ascending DOA); None beyond the active speakers."""
    vals = []
    for k in range(est.shape[0]):
        vals.append(si_snr(est[k], utt.refs[k]) if k < utt.refs.shape[0] else None)
    return vals


def _estimates(system: str, utt: Utterance, model: SeparationSystem | None, ref_channel: int) -> np.ndarray:
    S = utt.refs.shape[0]
    if system == "mixture":
        return np.repeat(utt.mixture[ref_channel][None], S, axis=0)
    if system == "mvdr_oracle":
        raise ValueError("oracle MVDR needs the multichannel references (oracle_refs)")
    kind = "network" if canonical_variant_or_none(system) else system
    out = model.separate_arrays(utt.mixture[None], [utt.doas], system=kind)[0]
    return out[:S]


def canonical_variant_or_none(name: str) -> str | None:
    try:
        return canonical_variant(name)
    except ValueError:
        return None


def resolve_checkpoint(system: str, checkpoints: dict) -> Path:
    """Checkpoint for a neural system: its own entry, else ``default``."""
    path = checkpoints.get(system) or checkpoints.get("default")
    if path is None:
        raise FileNotFoundError(f"no checkpoint given for system {system!r}")
    return Path(path)


def evaluate_systems(utts: list[Utterance], systems, checkpoints: dict | None = None,
                     models: dict | None = None, ref_channel: int = 0,
                     oracle_refs: dict | None = None, stft: StftConfig | None = None) -> EvalReport:
    """Score each system on ``utts``.

    ``models`` may hold already-built :class:`SeparationSystem` objects keyed by
    system name (or ``default``); otherwise checkpoints are loaded from disk.
    ``oracle_refs`` maps utterance id to the multichannel references [S, M, N]
    and is only needed for ``mvdr_oracle`` (which analyses with ``stft``).
    """
    checkpoints = checkpoints or {}
    models = dict(models or {})
    report = EvalReport(num_utts=len(utts))
    for system in systems:
        if system not in SYSTEMS and system not in EXTRA_SYSTEMS and canonical_variant_or_none(system) is None:
            raise ValueError(f"unknown system {system!r}")
        model = None
        if system not in ("mixture", "mvdr_oracle"):
            model = models.get(system) or models.get("default")
            if model is None:
                model = SeparationSystem.load(resolve_checkpoint(system, checkpoints))
            if canonical_variant_or_none(system) and \
                    canonical_variant(model.cfg.beamformer.variant) != canonical_variant(system):
                raise ValueError(f"checkpoint for {system!r} holds variant {model.cfg.beamformer.variant!r}")
        per_utt, per_slot = [], []
        for u in utts:
            if system == "mvdr_oracle":
                if oracle_refs is None or u.uid not in oracle_refs:
                    raise ValueError("mvdr_oracle needs multichannel references")
                est = oracle_mvdr(u.mixture, oracle_refs[u.uid], stft or StftConfig(), ref_channel)
            else:
                est = _estimates(system, u, model, ref_channel)
            vals = score_estimates(est, u)
            per_slot.append(vals)
            per_utt.append(float(np.mean([v for v in vals if v is not None])))
        report.add(SystemRow(system, per_utt, per_slot))
    return report
