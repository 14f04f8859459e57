"""The camera selection network.

Per-camera encoder features are max-pooled across cameras, concatenated back
onto each camera, run through a shared bidirectional LSTM per camera, and
mapped by an MLP head to an independent sigmoid probability per camera and
frame.  The label for a frame is the camera with the highest probability.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import nn
from . import tensor as T
from .tensor import ShapeError, Tensor


@dataclass
class ModelConfig:
    feature_dim: int = 128
    rnn_hidden: int = 128
    head_widths: tuple = (128, 64)
    conv_channels: tuple = (8, 16, 32)
    frame_shape: tuple = (1, 32, 32)
    dropout: float = 0.5
    use_spatial: bool = True
    use_sequential: bool = True
    window_len: int = 40

    def __post_init__(self):
        self.head_widths = tuple(int(w) for w in self.head_widths)
        self.conv_channels = tuple(int(c) for c in self.conv_channels)
        self.frame_shape = tuple(int(s) for s in self.frame_shape)
        if self.feature_dim < 1 or self.rnn_hidden < 1 or self.window_len < 1:
            raise ValueError("feature_dim, rnn_hidden and window_len must be >= 1")
        if len(self.frame_shape) != 3:
            raise ValueError(f"frame_shape must be (C, H, W), got {self.frame_shape}")
        scale = 2 ** len(self.conv_channels)
        if self.frame_shape[1] % scale or self.frame_shape[2] % scale:
            raise ValueError(f"frame height/width must be divisible by {scale}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout must lie in [0, 1), got {self.dropout}")

    @property
    def variant(self) -> str:
        return {
            (True, True): "full",
            (False, True): "no_spatial",
            (True, False): "no_sequential",
            (False, False): "no_spatial_no_sequential",
        }[(self.use_spatial, self.use_sequential)]

    def to_dict(self) -> dict:
        d = asdict(self)
        for k in ("head_widths", "conv_channels", "frame_shape"):
            d[k] = list(d[k])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown ModelConfig keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class MultiCamSequence:
    """Frames are uint8 [T, N, C, H, W]; labels int [T]; visibility float [T, N] or None."""

    frames: np.ndarray
    labels: np.ndarray
    visibility: np.ndarray | None = None
    seq_id: str = "seq"
    scene_id: int = 0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.frames = np.asarray(self.frames)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.frames.ndim != 5:
            raise ShapeError(f"frames must be [T,N,C,H,W], got {self.frames.shape}")
        T_, N = self.frames.shape[:2]
        if T_ < 1 or N < 2:
            raise ShapeError(f"need T >= 1 and N >= 2 cameras, got T={T_}, N={N}")
        if self.labels.shape != (T_,):
            raise ShapeError(f"labels shape {self.labels.shape} != ({T_},)")
        if np.any(self.labels < 0) or np.any(self.labels >= N):
            raise ValueError(f"labels must lie in [0, {N})")
        if self.visibility is not None:
            self.visibility = np.asarray(self.visibility, dtype=np.float64)
            if self.visibility.shape != (T_, N):
                raise ShapeError(f"visibility shape {self.visibility.shape} != ({T_}, {N})")

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def num_cameras(self) -> int:
        return self.frames.shape[1]

    def label_mask(self) -> np.ndarray:
        mask = np.zeros((self.num_frames, self.num_cameras))
        mask[np.arange(self.num_frames), self.labels] = 1.0
        return mask

    def window(self, start: int, stop: int) -> "MultiCamSequence":
        vis = None if self.visibility is None else self.visibility[start:stop]
        return MultiCamSequence(
            self.frames[start:stop], self.labels[start:stop], vis, self.seq_id, self.scene_id, dict(self.meta)
        )

    def permute_cameras(self, perm) -> "MultiCamSequence":
        """Reorder cameras so new camera j is old camera perm[j]."""
        perm = np.asarray(perm)
        inv = np.argsort(perm)
        vis = None if self.visibility is None else self.visibility[:, perm]
        return MultiCamSequence(
            self.frames[:, perm], inv[self.labels], vis, self.seq_id, self.scene_id, dict(self.meta)
        )


@dataclass
class SelectionOutput:
    probs: np.ndarray
    labels: np.ndarray


def decode_labels(probs) -> np.ndarray:
    """Argmax over cameras, lowest index on ties."""
    return np.argmax(np.asarray(probs), axis=-1)


def normalize_frames(frames) -> np.ndarray:
    """uint8 pixels to [-1, 1]; float input is taken as already normalized."""
    frames = np.asarray(frames)
    if frames.dtype == np.uint8:
        return frames.astype(np.float64) / 127.5 - 1.0
    return frames.astype(np.float64)


# ---------------------------------------------------------------------------
# pipeline stages; all accept an optional leading batch axis


def extract_features(frames, params, config: ModelConfig) -> Tensor:
    """[.., T, N, C, H, W] frames -> [.., T, N, D] features with one shared encoder."""
    if isinstance(frames, MultiCamSequence):
        frames = frames.frames
    x = frames if isinstance(frames, Tensor) else Tensor(normalize_frames(frames))
    if x.ndim < 5 or tuple(x.shape[-3:]) != tuple(config.frame_shape):
        raise ShapeError(f"frames {x.shape} do not end in frame_shape {tuple(config.frame_shape)}")
    lead = x.shape[:-3]
    flat = T.reshape(x, (int(np.prod(lead)),) + tuple(config.frame_shape))
    feats = nn.conv_encoder_forward(flat, params, config)
    return T.reshape(feats, lead + (config.feature_dim,))


def aggregate_spatial(features: Tensor, config: ModelConfig | None = None) -> Tensor:
    """Concatenate the elementwise max over cameras onto every camera's feature.

    Input [.., N, D] -> [.., N, 2D]; identity when ``config.use_spatial`` is off.
    """
    if config is not None and not config.use_spatial:
        return features
    if features.ndim < 2 or features.shape[-2] < 1:
        raise ShapeError(f"aggregate_spatial: expected [..., N, D], got {features.shape}")
    pooled = T.max_over_axis(features, axis=features.ndim - 2, keepdims=True)
    pooled = T.broadcast(pooled, features.shape)
    return T.concat([features, pooled], axis=features.ndim - 1)


def aggregate_sequential(context: Tensor, params, config: ModelConfig) -> Tensor:
    """One shared BiLSTM over time for each camera: [(B,) T, N, F] -> [(B,) T, N, 2H]."""
    if not config.use_sequential:
        return context
    single = context.ndim == 3
    x = T.reshape(context, (1,) + context.shape) if single else context
    if x.ndim != 4 or x.shape[1] < 1:
        raise ShapeError(f"aggregate_sequential: expected [T,N,F] or [B,T,N,F], got {context.shape}")
    B, steps, N, F = x.shape
    seq = T.reshape(T.transpose(x, (1, 0, 2, 3)), (steps, B * N, F))
    out = nn.bilstm_forward(seq, params)
    width = out.shape[-1]
    out = T.transpose(T.reshape(out, (steps, B, N, width)), (1, 0, 2, 3))
    return T.reshape(out, (steps, N, width)) if single else out


def predict_probabilities(aggregated: Tensor, params, config: ModelConfig, training: bool = False, rng=None) -> Tensor:
    """MLP head + sigmoid on the last axis: [.., F] -> [..] probabilities."""
    lead = aggregated.shape[:-1]
    width = aggregated.shape[-1]
    expected = params["head.fc0.weight"].shape[0] if config.head_widths else params["head.out.weight"].shape[0]
    if width != expected:
        raise ShapeError(
            f"head expects width {expected} but got {width}; ablation flags disagree with the parameters"
        )
    x = T.reshape(aggregated, (int(np.prod(lead)), width))
    for i in range(len(config.head_widths)):
        x = T.leaky_relu(nn.linear_forward(x, params[f"head.fc{i}.weight"], params[f"head.fc{i}.bias"]))
        if i == 0:
            x = nn.dropout_forward(x, config.dropout, training, rng)
    logits = nn.linear_forward(x, params["head.out.weight"], params["head.out.bias"])
    return T.reshape(T.sigmoid(logits), lead)


def forward_frames(frames, params, config: ModelConfig, training: bool = False, rng=None) -> Tensor:
    """Full differentiable pipeline on one window, [(B,) T, N, C, H, W] -> [(B,) T, N]."""
    feats = extract_features(frames, params, config)
    ctx = aggregate_spatial(feats, config)
    seq = aggregate_sequential(ctx, params, config)
    return predict_probabilities(seq, params, config, training, rng)


def forward(seq, params, config: ModelConfig, training: bool = False, rng=None) -> SelectionOutput:
    """Probabilities and decoded labels for a whole sequence.

    Outside training the sequence is cut into consecutive non-overlapping
    windows of ``config.window_len`` frames; the last may be shorter.
    """
    frames = seq.frames if isinstance(seq, MultiCamSequence) else np.asarray(seq)
    if frames.ndim != 5:
        raise ShapeError(f"forward expects frames [T,N,C,H,W], got {frames.shape}")
    if frames.shape[1] < 2:
        raise ShapeError(f"forward needs N >= 2 cameras, got {frames.shape[1]}")
    steps = frames.shape[0]
    if training:
        probs = forward_frames(frames, params, config, True, rng).data
    else:
        parts = []
        with T.no_grad():
            for start in range(0, steps, config.window_len):
                parts.append(forward_frames(frames[start:start + config.window_len], params, config).data)
        probs = np.concatenate(parts, axis=0)
    return SelectionOutput(probs=probs, labels=decode_labels(probs))
