"""Fully convolutional encoder built from time-depth separable blocks.

The encoder alternates strided sub-sampling convolutions with groups of TDS
blocks and ends in a linear projection whose output splits in half into
attention keys and values. Features enter as (T, 1, input_dim); the leading
sub-sampling layer lifts them to the (T/2, width, channels) layout of the
first group. The block width stays constant across groups while the channel
count grows at each sub-sampling boundary.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .nn import LayerNorm, Linear, Module, uniform_init
from .rng import Rng
from .tensor import (
    Tensor,
    add,
    conv2d_time,
    conv2d_time_batch,
    dropout,
    no_grad,
    relu,
    reshape,
    slice_last,
)


@dataclass(frozen=True)
class TDSBlockConfig:
    channels: int
    width: int
    kernel: int
    dropout: float = 0.0

    def __post_init__(self):
        if self.kernel % 2 == 0:
            raise ValueError(f"kernel must be odd to preserve length, got {self.kernel}")
        if self.channels < 1 or self.width < 1:
            raise ValueError("channels and width must be >= 1")


@dataclass(frozen=True)
class EncoderConfig:
    """Architecture of the conv stack.

    groups: (block_count, channels) per group; a stride-2 sub-sampling conv
    precedes the first group and sits between consecutive groups, so the
    total sub-sampling factor is stride ** len(groups).
    """

    input_dim: int = 80
    width: int = 80
    groups: tuple[tuple[int, int], ...] = ((2, 10), (3, 14), (6, 18))
    kernel: int = 21
    stride: int = 2
    dim: int = 512
    dropout: float = 0.2
    subsample_dropout: bool = True

    def __post_init__(self):
        if self.kernel % 2 == 0:
            raise ValueError("kernel must be odd")
        if not self.groups:
            raise ValueError("need at least one group")

    @property
    def total_subsampling(self) -> int:
        return self.stride ** len(self.groups)

    def to_dict(self) -> dict:
        return {
            "input_dim": self.input_dim,
            "width": self.width,
            "groups": [list(g) for g in self.groups],
            "kernel": self.kernel,
            "stride": self.stride,
            "dim": self.dim,
            "dropout": self.dropout,
            "subsample_dropout": self.subsample_dropout,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EncoderConfig":
        d = dict(d)
        d["groups"] = tuple(tuple(g) for g in d["groups"])
        return cls(**d)


@dataclass
class EncoderOutput:
    keys: Tensor  # (T', d)
    values: Tensor  # (T', d)
    frame_positions: np.ndarray  # original center frame per encoded step

    @property
    def length(self) -> int:
        return self.keys.shape[0]


class TDSBlock(Module):
    """Temporal conv + channel-mixing FC, each with residual and layer norm."""

    def __init__(self, cfg: TDSBlockConfig, rng: Rng):
        self.cfg = cfg
        k, c, w = cfg.kernel, cfg.channels, cfg.width
        self.conv_w = uniform_init(rng, (k, c, c), fan_in=k * c)
        self.conv_b = uniform_init(rng, (c,), fan_in=k * c)
        self.norm1 = LayerNorm()
        wc = w * c
        self.fc1 = Linear(wc, wc, rng)
        self.fc2 = Linear(wc, wc, rng)
        self.norm2 = LayerNorm()

    def conv_param_count(self, with_bias: bool = False) -> int:
        return self.conv_w.size + (self.conv_b.size if with_bias else 0)

    def __call__(self, x: Tensor, rng: Rng, training: bool) -> Tensor:
        cfg = self.cfg
        pad = (cfg.kernel - 1) // 2
        a = relu(conv2d_time(x, self.conv_w, self.conv_b, stride=1, padding=pad))
        a = dropout(a, cfg.dropout, rng, training)
        y = self.norm1(add(x, a))
        t = y.shape[0]
        flat = reshape(y, (t, cfg.width * cfg.channels))
        f = self.fc2(relu(self.fc1(flat)))
        f = dropout(f, cfg.dropout, rng, training)
        z = self.norm2(add(flat, f))
        return reshape(z, (t, cfg.width, cfg.channels))

    def batched(self, x: Tensor, mask: np.ndarray) -> Tensor:
        """Inference-mode forward on a padded batch (B, T, w, c)."""
        cfg = self.cfg
        pad = (cfg.kernel - 1) // 2
        a = relu(conv2d_time_batch(x, self.conv_w, self.conv_b, stride=1, padding=pad))
        y = self.norm1.masked(add(x, a), mask)
        b, t = y.shape[:2]
        flat = reshape(y, (b, t, cfg.width * cfg.channels))
        f = self.fc2(relu(self.fc1(flat)))
        z = self.norm2.masked(add(flat, f), mask)
        return reshape(z, (b, t, cfg.width, cfg.channels))


class SubsampleLayer(Module):
    """Strided temporal conv over flattened channels, then ReLU and layer
    norm; no residual."""

    def __init__(self, n_in: int, n_out: int, kernel: int, stride: int, p_drop: float, rng: Rng):
        self.n_in, self.n_out = n_in, n_out
        self.kernel, self.stride = kernel, stride
        self.p_drop = p_drop
        self.weight = uniform_init(rng, (kernel, n_in, n_out), fan_in=kernel * n_in)
        self.bias = uniform_init(rng, (n_out,), fan_in=kernel * n_in)
        self.norm = LayerNorm()

    def __call__(self, x: Tensor, rng: Rng, training: bool) -> Tensor:
        # x: (T, n_in) -> (ceil(T/stride), n_out)
        t = x.shape[0]
        pad = (self.kernel - 1) // 2
        v = reshape(x, (t, 1, self.n_in))
        v = relu(conv2d_time(v, self.weight, self.bias, stride=self.stride, padding=pad))
        v = dropout(v, self.p_drop, rng, training)
        v = self.norm(v)
        return reshape(v, (v.shape[0], self.n_out))

    def batched(self, x: Tensor, mask: np.ndarray) -> tuple[Tensor, np.ndarray]:
        b, t = x.shape[:2]
        pad = (self.kernel - 1) // 2
        v = reshape(x, (b, t, 1, self.n_in))
        v = relu(conv2d_time_batch(v, self.weight, self.bias, stride=self.stride, padding=pad))
        t_out = v.shape[1]
        lengths = _strided_length(mask.sum(axis=1), self.stride)
        new_mask = _lengths_to_mask(lengths, t_out)
        v = self.norm.masked(v, new_mask)
        return reshape(v, (b, t_out, self.n_out)), new_mask


def _strided_length(lengths, stride: int):
    # symmetric (k-1)/2 padding makes the output length ceil(T/stride)
    return -(-np.asarray(lengths) // stride)


def _lengths_to_mask(lengths, t: int) -> np.ndarray:
    return np.arange(t)[None, :] < np.asarray(lengths)[:, None]


class Encoder(Module):
    def __init__(self, cfg: EncoderConfig, rng: Rng):
        self.cfg = cfg
        self.subsamplers: list[SubsampleLayer] = []
        self.groups: list[list[TDSBlock]] = []
        p_sub = cfg.dropout if cfg.subsample_dropout else 0.0
        n_in = cfg.input_dim
        for blocks, channels in cfg.groups:
            n_out = cfg.width * channels
            self.subsamplers.append(
                SubsampleLayer(n_in, n_out, cfg.kernel, cfg.stride, p_sub, rng)
            )
            block_cfg = TDSBlockConfig(channels, cfg.width, cfg.kernel, cfg.dropout)
            self.groups.append([TDSBlock(block_cfg, rng) for _ in range(blocks)])
            n_in = n_out
        self.proj = Linear(n_in, 2 * cfg.dim, rng)

    def min_input_frames(self) -> int:
        return 1

    def __call__(self, features, rng: Rng | None = None, training: bool = False) -> EncoderOutput:
        """Encode one utterance of shape (T, input_dim) into keys/values."""
        cfg = self.cfg
        feats = features if isinstance(features, Tensor) else Tensor(features)
        if feats.ndim != 2 or feats.shape[1] != cfg.input_dim:
            raise ValueError(f"expected (T, {cfg.input_dim}) features, got {feats.shape}")
        if feats.shape[0] < self.min_input_frames():
            raise ValueError("utterance too short to produce one encoded frame")
        if training and rng is None:
            raise ValueError("training mode needs an rng for dropout")
        x = feats
        for sub, blocks, (_, channels) in zip(self.subsamplers, self.groups, cfg.groups):
            x = sub(x, rng, training)
            x = reshape(x, (x.shape[0], cfg.width, channels))
            for block in blocks:
                x = block(x, rng, training)
            x = reshape(x, (x.shape[0], cfg.width * channels))
        out = self.proj(x)
        keys = out_slice(out, 0, cfg.dim)
        values = out_slice(out, cfg.dim, 2 * cfg.dim)
        positions = self.frame_positions(feats.shape[0])
        return EncoderOutput(keys, values, positions)

    def encode_batch(self, features_list) -> list[EncoderOutput]:
        """Inference-mode batched encode over padded utterances.

        Padded frames stay zero through every layer (masked layer norm
        recomputes statistics over valid frames only), so each result matches
        the per-utterance encode.
        """
        cfg = self.cfg
        arrays = [np.asarray(f, dtype=np.float64) for f in features_list]
        lengths = np.array([a.shape[0] for a in arrays])
        t_max = int(lengths.max())
        batch = np.zeros((len(arrays), t_max, cfg.input_dim))
        for i, a in enumerate(arrays):
            batch[i, : a.shape[0]] = a
        with no_grad():
            x = Tensor(batch)
            mask = _lengths_to_mask(lengths, t_max)
            for sub, blocks, (_, channels) in zip(self.subsamplers, self.groups, cfg.groups):
                x, mask = sub.batched(x, mask)
                b, t = x.shape[:2]
                x = reshape(x, (b, t, cfg.width, channels))
                for block in blocks:
                    x = block.batched(x, mask)
                x = reshape(x, (b, t, cfg.width * channels))
            out = self.proj(x)
        results = []
        for i, n_frames in enumerate(lengths):
            t_i = int(_strided_length(n_frames, cfg.total_subsampling))
            row = Tensor(out.data[i, :t_i])
            results.append(
                EncoderOutput(
                    out_slice(row, 0, cfg.dim),
                    out_slice(row, cfg.dim, 2 * cfg.dim),
                    self.frame_positions(int(n_frames)),
                )
            )
        return results

    def frame_positions(self, t_in: int) -> np.ndarray:
        """Center input frame of each encoded step."""
        factor = self.cfg.total_subsampling
        t_out = int(_strided_length(t_in, factor))
        return np.minimum(np.arange(t_out) * factor, t_in - 1)

    def conv_layers(self) -> list[tuple[int, int]]:
        """(kernel, stride) of every temporal conv in execution order."""
        layers = []
        for blocks, _ in self.cfg.groups:
            layers.append((self.cfg.kernel, self.cfg.stride))
            layers.extend((self.cfg.kernel, 1) for _ in range(blocks))
        return layers

def out_slice(t: Tensor, start: int, stop: int) -> Tensor:
    return slice_last(t, start, stop)


def receptive_field(cfg: EncoderConfig) -> int:
    """Input frames feeding one encoded step, by closed-form accumulation."""
    rf, jump = 1, 1
    for blocks, _ in cfg.groups:
        rf += (cfg.kernel - 1) * jump
        jump *= cfg.stride
        for _ in range(blocks):
            rf += (cfg.kernel - 1) * jump
    return rf
