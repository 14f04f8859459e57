"""Training loop and train/test splits."""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import nn
from .losses import LossConfig, focal_loss, one_hot
from .model import ModelConfig, MultiCamSequence, forward_frames
from .synthdata import subsample

log = logging.getLogger(__name__)

PROTOCOLS = ("sequence-out", "surgery-out")


class ConfigError(ValueError):
    pass


class DataError(ValueError):
    pass


class NumericError(FloatingPointError):
    pass


@dataclass
class TrainConfig:
    lr: float = 1e-4
    batch_size: int = 2
    fragment_len: int = 40
    epochs: int = 15
    gamma: float = 2.0
    dropout: float = 0.5
    seed: int = 0
    use_spatial: bool = True
    use_sequential: bool = True
    protocol: str = "sequence-out"
    train_fraction: float = 0.8
    heldout_scenes: list | None = None
    subsample_stride: int = 1
    steps_per_epoch: int | None = None
    model: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.lr >= 0 or self.batch_size < 1 or self.fragment_len < 1 or self.epochs < 0:
            raise ConfigError("lr >= 0, batch_size >= 1, fragment_len >= 1, epochs >= 0 required")
        if self.protocol not in PROTOCOLS:
            raise ConfigError(f"protocol must be one of {PROTOCOLS}, got {self.protocol!r}")
        if not 0 < self.train_fraction < 1:
            raise ConfigError(f"train_fraction must lie in (0, 1), got {self.train_fraction}")
        if self.subsample_stride < 1:
            raise ConfigError("subsample_stride must be >= 1")
        if self.steps_per_epoch is not None and self.steps_per_epoch < 1:
            raise ConfigError("steps_per_epoch must be >= 1")
        if not 0 <= self.dropout < 1 or self.gamma < 0:
            raise ConfigError("dropout in [0, 1) and gamma >= 0 required")
        for key in ("use_spatial", "use_sequential", "dropout", "window_len"):
            if key in self.model:
                raise ConfigError(f"set {key!r} at the top level of the train config, not under 'model'")
        try:
            self.model_config()
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid model section: {exc}") from None

    def model_config(self) -> ModelConfig:
        return ModelConfig.from_dict(
            dict(
                self.model,
                use_spatial=self.use_spatial,
                use_sequential=self.use_sequential,
                dropout=self.dropout,
                window_len=self.fragment_len,
            )
        )

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown train config keys: {sorted(unknown)}")
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None


# ---------------------------------------------------------------------------
# splits


def heldout_scene_ids(seqs, heldout=None) -> list[int]:
    scenes = sorted({int(s.scene_id) for s in seqs})
    if heldout is not None:
        missing = set(heldout) - set(scenes)
        if missing:
            raise DataError(f"held-out scenes {sorted(missing)} not in dataset scenes {scenes}")
        return sorted(int(h) for h in heldout)
    # a third of the scenes, like training on four of six surgeries
    return scenes[-max(1, math.ceil(len(scenes) / 3)):]


def split_dataset(seqs, protocol: str, train_fraction: float = 0.8, heldout=None):
    """Return (train, test) lists of sequences for ``protocol``."""
    seqs = list(seqs)
    if not seqs:
        raise DataError("dataset is empty")
    if protocol == "sequence-out":
        train, test = [], []
        for s in seqs:
            cut = int(math.floor(train_fraction * s.num_frames))
            if cut < 1 or cut >= s.num_frames:
                raise DataError(f"{s.seq_id}: {s.num_frames} frames cannot be split {train_fraction:.0%}/rest")
            train.append(s.window(0, cut))
            test.append(s.window(cut, s.num_frames))
        return train, test
    if protocol == "surgery-out":
        scenes = sorted({int(s.scene_id) for s in seqs})
        if len(scenes) < 2:
            raise DataError(f"surgery-out needs at least two scenes, dataset has {scenes}")
        held = set(heldout_scene_ids(seqs, heldout))
        if held == set(scenes):
            raise DataError("surgery-out would hold out every scene")
        train = [s for s in seqs if s.scene_id not in held]
        test = [s for s in seqs if s.scene_id in held]
        return train, test
    raise DataError(f"unknown protocol {protocol!r}")


# ---------------------------------------------------------------------------
# training


class Trainer:
    """Owns parameters, optimizer state, rng and loss log for one run."""

    def __init__(self, cfg: TrainConfig, train_seqs, params=None, adam=None, rng_state=None, epoch=0, loss_log=None):
        self.cfg = cfg
        self.model_cfg = cfg.model_config()
        self.loss_cfg = LossConfig(gamma=cfg.gamma)
        seqs = [subsample(s, cfg.subsample_stride) for s in train_seqs]
        if not seqs:
            raise DataError("training set is empty")
        short = min(s.num_frames for s in seqs)
        if cfg.fragment_len > short:
            raise DataError(f"fragment_len {cfg.fragment_len} exceeds shortest training sequence ({short} frames)")
        cams = {s.num_cameras for s in seqs}
        if len(cams) != 1:
            raise DataError(f"training sequences mix camera counts {sorted(cams)}")
        self.seqs = seqs
        self.params = params if params is not None else nn.init_params(self.model_cfg, cfg.seed)
        self.adam = adam if adam is not None else nn.AdamState(lr=cfg.lr)
        self.rng = np.random.default_rng(cfg.seed)
        if rng_state is not None:
            self.rng.bit_generator.state = rng_state
        self.epoch = epoch
        self.loss_log: list[tuple[int, float]] = list(loss_log or [])
        starts = np.array([s.num_frames - cfg.fragment_len + 1 for s in seqs], dtype=np.float64)
        self._weights = starts / starts.sum()
        self._masks = [one_hot(s.labels, s.num_cameras) for s in seqs]

    @property
    def steps_per_epoch(self) -> int:
        if self.cfg.steps_per_epoch:
            return self.cfg.steps_per_epoch
        total = sum(s.num_frames for s in self.seqs)
        return max(1, total // (self.cfg.batch_size * self.cfg.fragment_len))

    def sample_batch(self):
        L = self.cfg.fragment_len
        frames, masks = [], []
        for _ in range(self.cfg.batch_size):
            i = int(self.rng.choice(len(self.seqs), p=self._weights))
            start = int(self.rng.integers(0, self.seqs[i].num_frames - L + 1))
            frames.append(self.seqs[i].frames[start:start + L])
            masks.append(self._masks[i][start:start + L])
        return np.stack(frames), np.stack(masks)

    def step(self) -> float:
        frames, masks = self.sample_batch()
        probs = forward_frames(frames, self.params, self.model_cfg, training=True, rng=self.rng)
        loss = focal_loss(probs, masks, self.loss_cfg)
        value = loss.item()
        if not math.isfinite(value):
            raise NumericError(f"non-finite loss {value} at epoch {self.epoch + 1}")
        loss.backward()
        nn.adam_step(self.params, self.adam)
        return value

    def run_epoch(self) -> float:
        losses = [self.step() for _ in range(self.steps_per_epoch)]
        self.epoch += 1
        mean = float(np.mean(losses))
        self.loss_log.append((self.epoch, mean))
        log.info("epoch %d loss %.6f", self.epoch, mean)
        return mean

    def fit(self, epochs: int | None = None, callback=None) -> list[tuple[int, float]]:
        target = self.cfg.epochs if epochs is None else epochs
        while self.epoch < target:
            self.run_epoch()
            if callback is not None:
                callback(self)
        return self.loss_log


def train(cfg: TrainConfig, seqs, callback=None) -> Trainer:
    """Split ``seqs`` by ``cfg.protocol`` and train on the training side."""
    train_seqs, _ = split_dataset(seqs, cfg.protocol, cfg.train_fraction, cfg.heldout_scenes)
    trainer = Trainer(cfg, train_seqs)
    trainer.fit(callback=callback)
    return trainer


def format_loss_log(loss_log) -> str:
    lines = ["epoch,loss"] + [f"{e},{v!r}" for e, v in loss_log]
    return "\n".join(lines) + "\n"
