"""Layers, parameter initialization and the Adam optimizer."""
from __future__ import annotations

import math
from collections.abc import MutableMapping
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .tensor import ShapeError, Tensor


class ParamStore(MutableMapping):
    """Named parameters, iterated in lexicographic path order."""

    def __init__(self, items=None):
        self._params: dict[str, Tensor] = {}
        for k, v in dict(items or {}).items():
            self[k] = v

    def __getitem__(self, path: str) -> Tensor:
        return self._params[path]

    def __setitem__(self, path: str, value) -> None:
        t = value if isinstance(value, Tensor) else Tensor(value)
        t.requires_grad = True
        self._params[path] = t

    def __delitem__(self, path: str) -> None:
        del self._params[path]

    def __iter__(self):
        return iter(sorted(self._params))

    def __len__(self) -> int:
        return len(self._params)

    def __repr__(self):
        return f"ParamStore({len(self)} tensors, {self.num_values()} values)"

    def num_values(self) -> int:
        return sum(t.data.size for t in self._params.values())

    def subset(self, prefix: str) -> "ParamStore":
        return ParamStore({k: v for k, v in self._params.items() if k.startswith(prefix)})

    def zero_grad(self) -> None:
        for t in self._params.values():
            t.grad = None

    def copy(self) -> "ParamStore":
        return ParamStore({k: Tensor(v.data.copy()) for k, v in self._params.items()})


# ---------------------------------------------------------------------------
# layers


def linear_forward(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """``x @ weight + bias`` for x of shape [batch, in]."""
    if x.ndim != 2 or weight.ndim != 2 or bias.ndim != 1:
        raise ShapeError(f"linear: expected x [b,in], W [in,out], b [out]; got {x.shape}, {weight.shape}, {bias.shape}")
    if x.shape[1] != weight.shape[0] or weight.shape[1] != bias.shape[0]:
        raise ShapeError(f"linear: width mismatch x {x.shape}, W {weight.shape}, b {bias.shape}")
    y = T.matmul(x, weight)
    b = T.broadcast(T.reshape(bias, (1, bias.shape[0])), y.shape)
    return T.add(y, b)


def max_pool2x2(x: Tensor) -> Tensor:
    B, C, H, W = x.shape
    if H % 2 or W % 2:
        raise ShapeError(f"max_pool2x2: spatial extents must be even, got {x.shape}")
    y = T.reshape(x, (B, C, H // 2, 2, W // 2, 2))
    y = T.max_over_axis(y, axis=5)
    return T.max_over_axis(y, axis=3)


def conv_block(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    y = T.conv2d(x, weight, stride=1, padding=weight.shape[-1] // 2)
    b = T.broadcast(T.reshape(bias, (1, bias.shape[0], 1, 1)), y.shape)
    return max_pool2x2(T.leaky_relu(T.add(y, b)))


def conv_encoder_forward(frames: Tensor, params, config, prefix: str = "encoder") -> Tensor:
    """Map frames [C,H,W] (or a batch [B,C,H,W]) to features [D] (or [B,D]).

    Conv 3x3 -> leaky_relu -> 2x2 max-pool, once per entry of
    ``config.conv_channels``, then a linear layer to ``config.feature_dim``.
    """
    single = frames.ndim == 3
    x = T.reshape(frames, (1,) + frames.shape) if single else frames
    if x.ndim != 4 or tuple(x.shape[1:]) != tuple(config.frame_shape):
        raise ShapeError(f"encoder: frames {frames.shape} do not match frame_shape {tuple(config.frame_shape)}")
    for i in range(len(config.conv_channels)):
        x = conv_block(x, params[f"{prefix}.conv{i}.weight"], params[f"{prefix}.conv{i}.bias"])
    B = x.shape[0]
    x = T.reshape(x, (B, int(np.prod(x.shape[1:]))))
    feat = T.leaky_relu(linear_forward(x, params[f"{prefix}.fc.weight"], params[f"{prefix}.fc.bias"]))
    return T.reshape(feat, (feat.shape[1],)) if single else feat


def lstm_direction(seq: Tensor, w_ih: Tensor, w_hh: Tensor, bias: Tensor, reverse: bool = False) -> list[Tensor]:
    """Run one LSTM direction over seq [T,B,F]; returns per-step hidden states [B,H].

    Gate order in the 4H axis: input, forget, cell, output.
    """
    steps, B, F = seq.shape
    H = w_hh.shape[0]
    if w_ih.shape != (F, 4 * H) or w_hh.shape != (H, 4 * H) or bias.shape != (4 * H,):
        raise ShapeError(f"lstm: weights {w_ih.shape}, {w_hh.shape}, {bias.shape} do not fit input width {F}")
    # input projection for all steps in one matmul
    proj = T.matmul(T.reshape(seq, (steps * B, F)), w_ih)
    proj = T.add(proj, T.broadcast(T.reshape(bias, (1, 4 * H)), proj.shape))
    proj = T.reshape(proj, (steps, B, 4 * H))
    h = c = None
    outs: list[Tensor] = [None] * steps
    order = range(steps - 1, -1, -1) if reverse else range(steps)
    for t in order:
        gates = T.slice_(proj, (t,))
        if h is not None:
            gates = T.add(gates, T.matmul(h, w_hh))
        i = T.sigmoid(T.slice_(gates, (slice(None), slice(0, H))))
        f = T.sigmoid(T.slice_(gates, (slice(None), slice(H, 2 * H))))
        g = T.tanh(T.slice_(gates, (slice(None), slice(2 * H, 3 * H))))
        o = T.sigmoid(T.slice_(gates, (slice(None), slice(3 * H, 4 * H))))
        c = T.mul(i, g) if c is None else T.add(T.mul(f, c), T.mul(i, g))
        h = T.mul(o, T.tanh(c))
        outs[t] = h
    return outs


def bilstm_forward(sequence: Tensor, params, prefix: str = "rnn") -> Tensor:
    """Bidirectional LSTM: [T,F] -> [T,2H], or batched [T,B,F] -> [T,B,2H].

    Row t is concat(forward state after steps 0..t, backward state after steps T-1..t).
    """
    if sequence.ndim not in (2, 3) or sequence.shape[0] < 1:
        raise ShapeError(f"bilstm: expected a non-empty [T,F] or [T,B,F] sequence, got {sequence.shape}")
    single = sequence.ndim == 2
    seq = T.reshape(sequence, (sequence.shape[0], 1, sequence.shape[1])) if single else sequence
    fwd = lstm_direction(seq, params[f"{prefix}.fwd.w_ih"], params[f"{prefix}.fwd.w_hh"], params[f"{prefix}.fwd.bias"])
    bwd = lstm_direction(
        seq, params[f"{prefix}.bwd.w_ih"], params[f"{prefix}.bwd.w_hh"], params[f"{prefix}.bwd.bias"], reverse=True
    )
    H = fwd[0].shape[1]
    B = seq.shape[1]
    rows = [T.reshape(T.concat([hf, hb], axis=1), (1, B, 2 * H)) for hf, hb in zip(fwd, bwd)]
    out = T.concat(rows, axis=0) if len(rows) > 1 else rows[0]
    return T.reshape(out, (out.shape[0], 2 * H)) if single else out


def dropout_forward(x: Tensor, p: float, training: bool, rng: np.random.Generator | None) -> Tensor:
    """Inverted dropout; identity outside training or when p == 0."""
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability must lie in [0, 1), got {p}")
    if not training or p == 0.0:
        return x
    if rng is None:
        raise ValueError("dropout in training mode needs an rng")
    keep = rng.random(x.shape) >= p
    return T.mul(x, Tensor(keep / (1.0 - p)))


# ---------------------------------------------------------------------------
# initialization


def _uniform(rng, shape, fan_in):
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def param_shapes(config) -> dict[str, tuple[tuple, int]]:
    """Parameter path -> (shape, fan_in) for the variant selected by ``config``."""
    shapes: dict[str, tuple[tuple, int]] = {}
    C, Hf, Wf = config.frame_shape
    cin = C
    for i, cout in enumerate(config.conv_channels):
        fan = cin * 9
        shapes[f"encoder.conv{i}.weight"] = ((cout, cin, 3, 3), fan)
        shapes[f"encoder.conv{i}.bias"] = ((cout,), fan)
        cin = cout
    scale = 2 ** len(config.conv_channels)
    flat = cin * (Hf // scale) * (Wf // scale)
    D = config.feature_dim
    shapes["encoder.fc.weight"] = ((flat, D), flat)
    shapes["encoder.fc.bias"] = ((D,), flat)
    width = 2 * D if config.use_spatial else D
    if config.use_sequential:
        H = config.rnn_hidden
        for d in ("fwd", "bwd"):
            shapes[f"rnn.{d}.w_ih"] = ((width, 4 * H), H)
            shapes[f"rnn.{d}.w_hh"] = ((H, 4 * H), H)
            shapes[f"rnn.{d}.bias"] = ((4 * H,), H)
        width = 2 * H
    for i, hidden in enumerate(config.head_widths):
        shapes[f"head.fc{i}.weight"] = ((width, hidden), width)
        shapes[f"head.fc{i}.bias"] = ((hidden,), width)
        width = hidden
    shapes["head.out.weight"] = ((width, 1), width)
    shapes["head.out.bias"] = ((1,), width)
    return shapes


def init_params(config, seed: int) -> ParamStore:
    """Uniform(+-1/sqrt(fan_in)) for every tensor; LSTM forget-gate bias shifted by +1."""
    rng = np.random.default_rng(seed)
    store = ParamStore()
    for path, (shape, fan_in) in sorted(param_shapes(config).items()):
        arr = _uniform(rng, shape, fan_in)
        if path.startswith("rnn.") and path.endswith(".bias"):
            H = shape[0] // 4
            arr[H:2 * H] += 1.0
        store[path] = arr
    return store


# ---------------------------------------------------------------------------
# Adam


class MissingGradientError(RuntimeError):
    pass


@dataclass
class AdamState:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps_stab: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: ParamStore, state: AdamState) -> None:
    """Bias-corrected Adam update in place, then clear gradients."""
    missing = [p for p in params if params[p].grad is None]
    if missing:
        raise MissingGradientError("no gradient for: " + ", ".join(missing))
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for path in params:
        p = params[path]
        g = p.grad
        m = state.m.get(path)
        v = state.v.get(path)
        m = (1.0 - b1) * g if m is None else b1 * m + (1.0 - b1) * g
        v = (1.0 - b2) * g * g if v is None else b2 * v + (1.0 - b2) * g * g
        state.m[path] = m
        state.v[path] = v
        p.data = p.data - state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps_stab)
        p.grad = None
