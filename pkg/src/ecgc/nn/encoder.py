"""Residual 1-D convolutional encoder and linear probe."""

from __future__ import annotations

import math
from collections import OrderedDict
from dataclasses import asdict, dataclass, field

import numpy as np

from ecgc.errors import ShapeMismatch
from ecgc.nn import ops
from ecgc.nn.tensor import Tensor, parameter

N_CLASSES = 4


@dataclass
class EncoderConfig:
    """Encoder shape. ``n_blocks`` residual blocks are grouped two per stage;
    every stage after the first halves the time axis and doubles channels."""

    n_blocks: int = 4
    base_channels: int = 16
    embed_dim: int = 128
    input_leads: int = 12
    input_len: int = 5000
    stem_kernel: int = 15
    stem_stride: int = 8
    kernel_size: int = 3
    projection_head: bool = False
    dtype: str = "float32"
    seed: int = 0

    def __post_init__(self):
        for name in ("n_blocks", "base_channels", "embed_dim", "input_leads", "input_len", "stem_kernel", "stem_stride", "kernel_size"):
            if int(getattr(self, name)) < 1:
                raise ShapeMismatch(f"EncoderConfig.{name} must be positive")
        if self.embed_dim < 4:
            raise ShapeMismatch("EncoderConfig.embed_dim must be >= 4")
        if self.dtype not in ("float32", "float64"):
            raise ShapeMismatch(f"unsupported dtype {self.dtype!r}")

    @classmethod
    def resnet18(cls, **overrides) -> "EncoderConfig":
        """ResNet-18 shaped variant: stem + 8 blocks x 2 convs + affine = 18 weighted layers."""
        params = dict(n_blocks=8, base_channels=64, stem_kernel=15, stem_stride=4)
        params.update(overrides)
        return cls(**params)

    def to_dict(self) -> dict:
        return asdict(self)

    @property
    def stage_channels(self) -> list[int]:
        n_stages = math.ceil(self.n_blocks / 2)
        return [self.base_channels * 2**s for s in range(n_stages)]


def _he_uniform(rng: np.random.Generator, shape, fan_in: int, dtype) -> np.ndarray:
    bound = math.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Encoder:
    """f(x): stem conv -> residual blocks -> global average pool -> affine.

    Parameters live in ``self.params`` (insertion-ordered name -> Tensor), the
    canonical order used by checkpoints and optimizers.
    """

    def __init__(self, config: EncoderConfig | None = None):
        self.config = config or EncoderConfig()
        self.params: "OrderedDict[str, Tensor]" = OrderedDict()
        self._blocks: list[dict] = []
        self._min_len: int | None = None
        self._init_params()

    # -- construction -------------------------------------------------------
    def _add(self, name: str, value: np.ndarray) -> None:
        self.params[name] = parameter(value, name=name)

    def _init_params(self) -> None:
        cfg = self.config
        dt = np.dtype(cfg.dtype)
        rng = np.random.default_rng(cfg.seed)
        c = cfg.base_channels
        self._add("stem.weight", _he_uniform(rng, (c, cfg.input_leads, cfg.stem_kernel), cfg.input_leads * cfg.stem_kernel, dt))
        self._add("stem.norm.scale", np.ones(c, dt))
        self._add("stem.norm.shift", np.zeros(c, dt))

        k = cfg.kernel_size
        in_ch = c
        for i in range(cfg.n_blocks):
            stage = i // 2
            out_ch = cfg.stage_channels[stage]
            stride = 2 if (stage > 0 and i % 2 == 0) else 1
            p = f"block{i}"
            self._add(f"{p}.conv1.weight", _he_uniform(rng, (out_ch, in_ch, k), in_ch * k, dt))
            self._add(f"{p}.norm1.scale", np.ones(out_ch, dt))
            self._add(f"{p}.norm1.shift", np.zeros(out_ch, dt))
            self._add(f"{p}.conv2.weight", _he_uniform(rng, (out_ch, out_ch, k), out_ch * k, dt))
            self._add(f"{p}.norm2.scale", np.ones(out_ch, dt))
            self._add(f"{p}.norm2.shift", np.zeros(out_ch, dt))
            shortcut = stride != 1 or in_ch != out_ch
            if shortcut:
                self._add(f"{p}.shortcut.weight", _he_uniform(rng, (out_ch, in_ch, 1), in_ch, dt))
            self._blocks.append({"prefix": p, "stride": stride, "shortcut": shortcut})
            in_ch = out_ch

        self._add("head.weight", (rng.standard_normal((in_ch, cfg.embed_dim)) * 0.01).astype(dt))
        self._add("head.bias", np.zeros(cfg.embed_dim, dt))

        if cfg.projection_head:
            d = cfg.embed_dim
            self._add("proj.fc1.weight", _he_uniform(rng, (d, d), d, dt))
            self._add("proj.fc1.bias", np.zeros(d, dt))
            self._add("proj.fc2.weight", (rng.standard_normal((d, d)) * (1.0 / math.sqrt(d))).astype(dt))
            self._add("proj.fc2.bias", np.zeros(d, dt))

    # -- forward ------------------------------------------------------------
    def _conv_norm(self, h: Tensor, conv: str, norm: str, stride: int, padding: int) -> Tensor:
        P = self.params
        h = ops.conv1d(h, P[conv], stride=stride, padding=padding)
        return ops.layer_norm(h, P[f"{norm}.scale"], P[f"{norm}.shift"])

    def forward(self, x) -> Tensor:
        """Embed a batch x [B, leads, L] -> [B, embed_dim]."""
        cfg = self.config
        if not isinstance(x, Tensor):
            x = Tensor(np.asarray(x, dtype=cfg.dtype))
        elif x.dtype != np.dtype(cfg.dtype):
            x = Tensor(x.data.astype(cfg.dtype))
        if x.ndim != 3 or x.shape[1] != cfg.input_leads:
            raise ShapeMismatch(f"encoder expects [B, {cfg.input_leads}, L], got {x.shape}")
        if x.shape[2] < self.min_length():
            raise ShapeMismatch(f"input length {x.shape[2]} shorter than encoder minimum {self.min_length()}")

        h = self._conv_norm(x, "stem.weight", "stem.norm", cfg.stem_stride, cfg.stem_kernel // 2)
        h = ops.relu(h)
        pad = cfg.kernel_size // 2
        for blk in self._blocks:
            p, stride = blk["prefix"], blk["stride"]
            out = ops.relu(self._conv_norm(h, f"{p}.conv1.weight", f"{p}.norm1", stride, pad))
            out = self._conv_norm(out, f"{p}.conv2.weight", f"{p}.norm2", 1, pad)
            skip = ops.conv1d(h, self.params[f"{p}.shortcut.weight"], stride=stride) if blk["shortcut"] else h
            h = ops.relu(ops.add(out, skip))
        pooled = ops.global_avg_pool(h)
        return ops.linear(pooled, self.params["head.weight"], self.params["head.bias"])

    __call__ = forward

    def project(self, z: Tensor) -> Tensor:
        """Optional two-layer head applied to embeddings before the contrastive loss."""
        if not self.config.projection_head:
            return z
        P = self.params
        h = ops.relu(ops.linear(z, P["proj.fc1.weight"], P["proj.fc1.bias"]))
        return ops.linear(h, P["proj.fc2.weight"], P["proj.fc2.bias"])

    def embed(self, x, batch_size: int = 256) -> np.ndarray:
        """Inference-only embeddings as a numpy array (no graph retained)."""
        x = np.asarray(x)
        chunks = []
        frozen = {name: t.requires_grad for name, t in self.params.items()}
        try:
            for t in self.params.values():
                t.requires_grad = False
            for start in range(0, x.shape[0], batch_size):
                chunks.append(self.forward(x[start : start + batch_size]).data)
        finally:
            for name, t in self.params.items():
                t.requires_grad = frozen[name]
        if not chunks:
            return np.zeros((0, self.config.embed_dim), dtype=self.config.dtype)
        return np.concatenate(chunks, axis=0)

    def min_length(self) -> int:
        """Smallest input length for which every conv produces >= 1 sample."""
        if self._min_len is None:
            self._min_len = next(n for n in range(1, 1 << 16) if self._out_len(n) >= 1)
        return self._min_len

    def _out_len(self, length: int) -> int:
        cfg = self.config
        length = (length + 2 * (cfg.stem_kernel // 2) - cfg.stem_kernel) // cfg.stem_stride + 1
        pad = cfg.kernel_size // 2
        for blk in self._blocks:
            length = (length + 2 * pad - cfg.kernel_size) // blk["stride"] + 1
            if length < 1:
                return 0
        return length

    def encoder_params(self) -> list[Tensor]:
        return [t for name, t in self.params.items() if not name.startswith("proj.")]

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def zero_grad(self) -> None:
        for t in self.params.values():
            t.grad = None

    def state_dict(self) -> "OrderedDict[str, np.ndarray]":
        return OrderedDict((k, v.data.copy()) for k, v in self.params.items())

    def load_state_dict(self, state) -> None:
        for name, t in self.params.items():
            if name not in state:
                raise ShapeMismatch(f"missing parameter {name}")
            arr = np.asarray(state[name])
            if arr.shape != t.shape:
                raise ShapeMismatch(f"{name}: expected {t.shape}, got {arr.shape}")
            t.data = arr.astype(t.dtype, copy=True)
        extra = set(state) - set(self.params)
        if extra:
            raise ShapeMismatch(f"unexpected parameters: {sorted(extra)}")


@dataclass
class LinearProbe:
    """Linear classifier H [embed_dim x 4] plus bias on top of embeddings."""

    embed_dim: int
    n_classes: int = N_CLASSES
    seed: int = 0
    dtype: str = "float32"
    weight: Tensor = field(init=False)
    bias: Tensor = field(init=False)

    def __post_init__(self):
        rng = np.random.default_rng(self.seed)
        bound = 1.0 / math.sqrt(self.embed_dim)
        self.weight = parameter(rng.uniform(-bound, bound, (self.embed_dim, self.n_classes)).astype(self.dtype), name="probe.weight")
        self.bias = parameter(np.zeros(self.n_classes, self.dtype), name="probe.bias")

    def __call__(self, z) -> Tensor:
        if not isinstance(z, Tensor):
            z = Tensor(np.asarray(z, dtype=self.dtype))
        if z.ndim != 2 or z.shape[1] != self.embed_dim:
            raise ShapeMismatch(f"probe expects embeddings of width {self.embed_dim}, got {z.shape}")
        return ops.linear(z, self.weight, self.bias)

    def parameters(self) -> list[Tensor]:
        return [self.weight, self.bias]

    def attach(self, encoder: Encoder) -> None:
        """Check that this probe fits the encoder's embedding width."""
        if encoder.config.embed_dim != self.embed_dim:
            raise ShapeMismatch(
                f"probe expects embed_dim {self.embed_dim}, encoder produces {encoder.config.embed_dim}"
            )
