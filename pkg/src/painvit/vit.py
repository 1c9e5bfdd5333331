"""Vision transformer: patch embedding, CLS token, pre-norm encoder blocks and a
binary classification head.

The video variant uses the very same network; its inputs are 2x2 grids of
consecutive frames built by :func:`painvit.data.make_grids`.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace
from typing import Iterator

import numpy as np

from . import tensor as T
from .errors import ConfigError, ContractError, DimensionError
from .rng import make_rng
from .tensor import Tensor

INIT_STD = 0.02


@dataclass(frozen=True)
class ModelConfig:
    image_size: int = 224
    patch_size: int = 16
    channels: int = 3
    hidden_dim: int = 768
    num_layers: int = 12
    num_heads: int = 12
    mlp_dim: int = 3072
    head_dropout: float = 0.10
    num_classes: int = 2
    layer_norm_eps: float = 1e-6

    def __post_init__(self):
        for name in ("image_size", "patch_size", "channels", "hidden_dim", "num_layers", "num_heads", "mlp_dim"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.image_size % self.patch_size:
            raise ConfigError(f"image_size {self.image_size} is not divisible by patch_size {self.patch_size}")
        if self.hidden_dim % self.num_heads:
            raise ConfigError(f"hidden_dim {self.hidden_dim} is not divisible by num_heads {self.num_heads}")
        if not 0.0 <= self.head_dropout < 1.0:
            raise ConfigError(f"head_dropout must be in [0, 1), got {self.head_dropout}")
        if self.num_classes != 2:
            raise ConfigError("only binary classification (num_classes=2) is supported")

    @property
    def grid_side(self) -> int:
        return self.image_size // self.patch_size

    @property
    def num_patches(self) -> int:
        return self.grid_side ** 2

    @property
    def num_tokens(self) -> int:
        return self.num_patches + 1

    @property
    def head_dim(self) -> int:
        return self.hidden_dim // self.num_heads

    @property
    def patch_dim(self) -> int:
        return self.channels * self.patch_size ** 2

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)


PRESETS = {
    # ViT-Base/16 at 224x224 resolution
    "paper": ModelConfig(),
    "tiny": ModelConfig(image_size=32, patch_size=8, channels=1, hidden_dim=64,
                        num_layers=4, num_heads=4, mlp_dim=128),
}


def preset(name: str, **overrides) -> ModelConfig:
    try:
        base = PRESETS[name]
    except KeyError:
        raise ConfigError(f"unknown model preset {name!r}; choose from {sorted(PRESETS)}") from None
    return replace(base, **overrides) if overrides else base


def attention_names(layer: int) -> list[str]:
    return [f"blocks.{layer}.attn.{proj}.{kind}" for proj in ("q", "k", "v", "out") for kind in ("weight", "bias")]


def parameter_shapes(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    """Ordered mapping of parameter name to shape."""
    d, m = config.hidden_dim, config.mlp_dim
    shapes: dict[str, tuple[int, ...]] = {
        "patch_embed.weight": (config.patch_dim, d),
        "patch_embed.bias": (d,),
        "cls_token": (1, d),
        "pos_embed": (config.num_tokens, d),
    }
    for i in range(config.num_layers):
        p = f"blocks.{i}"
        shapes[f"{p}.norm1.gain"] = (d,)
        shapes[f"{p}.norm1.bias"] = (d,)
        for proj in ("q", "k", "v", "out"):
            shapes[f"{p}.attn.{proj}.weight"] = (d, d)
            shapes[f"{p}.attn.{proj}.bias"] = (d,)
        shapes[f"{p}.norm2.gain"] = (d,)
        shapes[f"{p}.norm2.bias"] = (d,)
        shapes[f"{p}.mlp.fc1.weight"] = (d, m)
        shapes[f"{p}.mlp.fc1.bias"] = (m,)
        shapes[f"{p}.mlp.fc2.weight"] = (m, d)
        shapes[f"{p}.mlp.fc2.bias"] = (d,)
    shapes["norm.gain"] = (d,)
    shapes["norm.bias"] = (d,)
    shapes["head.weight"] = (d, config.num_classes)
    shapes["head.bias"] = (config.num_classes,)
    return shapes


def count_parameters(config: ModelConfig) -> int:
    return int(sum(np.prod(s) for s in parameter_shapes(config).values()))


def _truncated_normal(rng: np.random.Generator, shape, std: float) -> np.ndarray:
    # redraw anything beyond two standard deviations
    out = rng.standard_normal(shape)
    bad = np.abs(out) > 2.0
    while bad.any():
        out[bad] = rng.standard_normal(int(bad.sum()))
        bad = np.abs(out) > 2.0
    return out * std


@dataclass
class ForwardOutput:
    logits: Tensor
    attentions: list[np.ndarray] = field(default_factory=list)


class ViTModel:
    """Named parameter tensors plus the forward pass.

    Each parameter's ``requires_grad`` flag doubles as its trainable flag.
    """

    def __init__(self, config: ModelConfig, params: dict[str, Tensor]):
        expected = parameter_shapes(config)
        if list(params) != list(expected):
            missing = [n for n in expected if n not in params]
            extra = [n for n in params if n not in expected]
            if missing or extra:
                raise ContractError(f"parameter names do not match config (missing={missing[:3]}, extra={extra[:3]})")
            params = {n: params[n] for n in expected}
        for name, shape in expected.items():
            if params[name].shape != shape:
                raise DimensionError(f"parameter {name} has shape {params[name].shape}, expected {shape}")
        self.config = config
        self.params = params

    @property
    def dtype(self):
        return self.params["patch_embed.weight"].dtype

    def named_parameters(self) -> Iterator[tuple[str, Tensor]]:
        return iter(self.params.items())

    def trainable(self) -> dict[str, Tensor]:
        return {n: p for n, p in self.params.items() if p.requires_grad}

    def trainable_flags(self) -> dict[str, bool]:
        return {n: p.requires_grad for n, p in self.params.items()}

    def num_trainable(self) -> int:
        return int(sum(p.size for p in self.params.values() if p.requires_grad))

    def zero_grad(self) -> None:
        T.zero_grads(self.params.values())

    def state_dict(self) -> dict[str, np.ndarray]:
        return {n: p.data.copy() for n, p in self.params.items()}

    def forward(self, batch, training: bool = False, rng: np.random.Generator | None = None) -> ForwardOutput:
        return forward(self, batch, training, rng)

    __call__ = forward


def init_parameters(config: ModelConfig, seed: int, dtype=np.float64) -> ViTModel:
    """Random initialization; every tensor starts trainable."""
    rng = make_rng(seed, "init")
    params = {}
    for name, shape in parameter_shapes(config).items():
        if name.endswith(".gain"):
            data = np.ones(shape)
        elif name.endswith(".bias") or name == "cls_token":
            data = np.zeros(shape)
        else:
            data = _truncated_normal(rng, shape, INIT_STD)
        params[name] = Tensor(data.astype(dtype), requires_grad=True)
    return ViTModel(config, params)


def set_trainable(model: ViTModel, unfrozen_attention_layers: int) -> ViTModel:
    """Freeze everything except the head and the attention of the top-most n layers."""
    n = unfrozen_attention_layers
    layers = model.config.num_layers
    if not 0 <= n <= layers:
        raise ContractError(f"unfrozen_attention_layers must be in [0, {layers}], got {n}")
    trainable = {"head.weight", "head.bias"}
    for i in range(layers - n, layers):
        trainable.update(attention_names(i))
    for name, p in model.params.items():
        p.requires_grad = name in trainable
        if not p.requires_grad:
            p.grad = None
    return model


def patchify(image: np.ndarray, patch_size: int) -> np.ndarray:
    """C x H x W image -> (num_patches, C * patch_size**2), patches row-major."""
    image = np.asarray(image)
    if image.ndim != 3:
        raise DimensionError(f"patchify expects C x H x W, got shape {image.shape}")
    return patchify_batch(image[None], patch_size)[0]


def patchify_batch(batch: np.ndarray, patch_size: int) -> np.ndarray:
    b, c, h, w = batch.shape
    if h % patch_size or w % patch_size:
        raise DimensionError(f"image size {h}x{w} is not divisible by patch size {patch_size}")
    gh, gw = h // patch_size, w // patch_size
    x = batch.reshape(b, c, gh, patch_size, gw, patch_size)
    x = x.transpose(0, 2, 4, 1, 3, 5)
    return x.reshape(b, gh * gw, c * patch_size * patch_size)


def forward(model: ViTModel, batch, training: bool = False,
            rng: np.random.Generator | None = None) -> ForwardOutput:
    cfg, P = model.config, model.params
    batch = np.asarray(batch.data if isinstance(batch, Tensor) else batch, dtype=model.dtype)
    expected = (cfg.channels, cfg.image_size, cfg.image_size)
    if batch.ndim != 4 or batch.shape[1:] != expected:
        raise DimensionError(f"batch shape {batch.shape} does not match B x {expected[0]} x {expected[1]} x {expected[2]}")
    b, t, d, heads = batch.shape[0], cfg.num_tokens, cfg.hidden_dim, cfg.num_heads
    dh = cfg.head_dim
    eps = cfg.layer_norm_eps

    patches = Tensor(patchify_batch(batch, cfg.patch_size))
    tokens = T.linear(patches, P["patch_embed.weight"], P["patch_embed.bias"])
    cls = T.broadcast_to(T.reshape(P["cls_token"], (1, 1, d)), (b, 1, d))
    h = T.add(T.concat([cls, tokens], axis=1), P["pos_embed"])

    attentions = []
    scale = 1.0 / np.sqrt(dh)
    for i in range(cfg.num_layers):
        p = f"blocks.{i}"
        y = T.layer_norm(h, P[f"{p}.norm1.gain"], P[f"{p}.norm1.bias"], eps)

        def heads_first(x):
            return T.transpose(T.reshape(x, (b, t, heads, dh)), (0, 2, 1, 3))

        q = heads_first(T.mul(T.linear(y, P[f"{p}.attn.q.weight"], P[f"{p}.attn.q.bias"]), scale))
        k = heads_first(T.linear(y, P[f"{p}.attn.k.weight"], P[f"{p}.attn.k.bias"]))
        v = heads_first(T.linear(y, P[f"{p}.attn.v.weight"], P[f"{p}.attn.v.bias"]))
        attn = T.softmax(T.matmul(q, T.transpose(k, (0, 1, 3, 2))), axis=-1)
        attentions.append(attn.data)
        ctx = T.reshape(T.transpose(T.matmul(attn, v), (0, 2, 1, 3)), (b, t, d))
        h = T.add(h, T.linear(ctx, P[f"{p}.attn.out.weight"], P[f"{p}.attn.out.bias"]))

        y = T.layer_norm(h, P[f"{p}.norm2.gain"], P[f"{p}.norm2.bias"], eps)
        y = T.gelu(T.linear(y, P[f"{p}.mlp.fc1.weight"], P[f"{p}.mlp.fc1.bias"]))
        h = T.add(h, T.linear(y, P[f"{p}.mlp.fc2.weight"], P[f"{p}.mlp.fc2.bias"]))

    h = T.layer_norm(h, P["norm.gain"], P["norm.bias"], eps)
    cls_out = T.dropout(h[:, 0], cfg.head_dropout, training, rng)
    logits = T.linear(cls_out, P["head.weight"], P["head.bias"])
    return ForwardOutput(logits=logits, attentions=attentions)


def predict(logits) -> tuple[np.ndarray, np.ndarray]:
    """Softmax probabilities (no-pain, pain) and hard labels; ties go to pain."""
    z = np.asarray(logits.data if isinstance(logits, Tensor) else logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    probs = np.exp(z)
    probs /= probs.sum(axis=-1, keepdims=True)
    labels = (probs[..., 1] >= 0.5).astype(int)
    return probs, labels
