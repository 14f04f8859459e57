"""Dice evaluation under the sequence-out and surgery-out protocols."""
from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .losses import dice_score, switch_count
from .model import forward
from .train import split_dataset


@dataclass
class EvalReport:
    per_sequence: list = field(default_factory=list)  # dicts: sequence, scene, dice, switches, gt_switches
    per_scene: dict = field(default_factory=dict)
    overall: float = float("nan")
    wall_clock: float = 0.0
    config: dict = field(default_factory=dict)

    @classmethod
    def from_predictions(cls, rows, wall_clock=0.0, config=None) -> "EvalReport":
        scenes: dict[int, list[float]] = {}
        for r in rows:
            scenes.setdefault(int(r["scene"]), []).append(r["dice"])
        per_scene = {s: float(np.mean(v)) for s, v in sorted(scenes.items())}
        # overall is the mean of scene means, not of sequences
        overall = float(np.mean(list(per_scene.values()))) if per_scene else float("nan")
        return cls(list(rows), per_scene, overall, wall_clock, dict(config or {}))

    def write_csv(self, path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["level", "scene", "sequence", "dice", "switches", "gt_switches"])
            for r in self.per_sequence:
                w.writerow(["sequence", r["scene"], r["sequence"], f"{r['dice']:.6f}", r["switches"], r["gt_switches"]])
            for s, d in self.per_scene.items():
                w.writerow(["scene", s, "", f"{d:.6f}", "", ""])
            w.writerow(["overall", "", "", f"{self.overall:.6f}", "", ""])


def score_sequences(seqs, predict) -> list[dict]:
    """Dice of ``predict(seq) -> labels`` against each sequence's ground truth."""
    rows = []
    for s in seqs:
        pred = np.asarray(predict(s))
        rows.append(
            {
                "sequence": s.seq_id,
                "scene": int(s.scene_id),
                "dice": dice_score(pred, s.labels, s.num_cameras),
                "switches": switch_count(pred),
                "gt_switches": switch_count(s.labels),
            }
        )
    return rows


def evaluate_sequences(params, model_cfg, seqs, config=None) -> EvalReport:
    t0 = time.perf_counter()
    rows = score_sequences(seqs, lambda s: forward(s, params, model_cfg).labels)
    return EvalReport.from_predictions(rows, time.perf_counter() - t0, config)


def evaluate(params, model_cfg, seqs, protocol: str, train_fraction: float = 0.8, heldout=None) -> EvalReport:
    """Split ``seqs`` by protocol and score the model on the held-out side."""
    _, test = split_dataset(seqs, protocol, train_fraction, heldout)
    cfg = {"protocol": protocol, "train_fraction": train_fraction, "variant": model_cfg.variant}
    return evaluate_sequences(params, model_cfg, test, cfg)
