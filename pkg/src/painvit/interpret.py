"""Attention maps: single heads, last-layer head maximum, and attention rollout.

An attention stack is the per-layer attention of one sample, each layer an
array of shape (heads, tokens, tokens) with token 0 the CLS token.  Every
map returned here is the CLS-query row over patch tokens, reshaped to the
patch grid and divided by its maximum.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .errors import ContractError, DimensionError
from .pnm import write_ppm

BLUE = np.array([0.0, 0.0, 255.0])
RED = np.array([255.0, 0.0, 0.0])


def sample_stack(attentions, index: int) -> list[np.ndarray]:
    """Slice one batch element out of a forward pass's per-layer attentions."""
    return [np.asarray(a[index]) for a in attentions]


def _as_stack(stack) -> list[np.ndarray]:
    layers = [np.asarray(a, dtype=np.float64) for a in stack]
    if not layers:
        raise ContractError("attention stack is empty")
    for a in layers:
        if a.ndim != 3 or a.shape[1] != a.shape[2]:
            raise DimensionError(f"each layer must be heads x tokens x tokens, got {a.shape}")
    return layers


def _to_grid(cls_row: np.ndarray) -> np.ndarray:
    patches = cls_row[1:]
    side = int(round(np.sqrt(patches.size)))
    if side * side != patches.size:
        raise DimensionError(f"{patches.size} patch tokens do not form a square grid")
    return max_normalize(patches.reshape(side, side))


def max_normalize(values: np.ndarray) -> np.ndarray:
    values = np.asarray(values, dtype=np.float64)
    peak = values.max()
    return values / peak if peak > 0 else np.zeros_like(values)


def head_map(stack, layer: int, head: int) -> np.ndarray:
    layers = _as_stack(stack)
    if not -len(layers) <= layer < len(layers):
        raise ContractError(f"layer {layer} out of range for {len(layers)} layers")
    a = layers[layer]
    if not 0 <= head < a.shape[0]:
        raise ContractError(f"head {head} out of range for {a.shape[0]} heads")
    return _to_grid(a[head, 0])


def last_layer_max(stack) -> np.ndarray:
    a = _as_stack(stack)[-1]
    return _to_grid(a[:, 0, :].max(axis=0))


def fuse_heads(layer: np.ndarray, fusion: str) -> np.ndarray:
    if fusion == "max":
        return layer.max(axis=0)
    if fusion == "mean":
        return layer.mean(axis=0)
    raise ContractError(f"fusion must be 'max' or 'mean', got {fusion!r}")


def rollout_matrices(stack, fusion: str = "max") -> list[np.ndarray]:
    """Cumulative rollout after each layer (each row-stochastic).

    Layer l's residual-adjusted attention is applied on the left of the
    rollout so far, so row i of the result traces output token i back to
    the input tokens.
    """
    layers = _as_stack(stack)
    eye = np.eye(layers[0].shape[-1])
    out = []
    joint = None
    for a in layers:
        fused = 0.5 * fuse_heads(a, fusion) + 0.5 * eye
        fused = fused / fused.sum(axis=-1, keepdims=True)
        joint = fused if joint is None else fused @ joint
        out.append(joint)
    return out


def rollout(stack, fusion: str = "max") -> np.ndarray:
    return _to_grid(rollout_matrices(stack, fusion)[-1][0])


def region_mass(saliency: np.ndarray, patch_mask: np.ndarray) -> float:
    """Share of the saliency mass that falls on the patches flagged in ``patch_mask``."""
    total = float(saliency.sum())
    return float(saliency[patch_mask].sum()) / total if total > 0 else 0.0


def overlay_colors(saliency: np.ndarray, lo: float = 0.7, hi: float = 1.0) -> tuple[np.ndarray, np.ndarray]:
    """Per-patch RGB colour and a mask of patches that receive it."""
    if not hi > lo:
        raise ContractError(f"threshold_hi must exceed threshold_lo ({lo}, {hi})")
    t = np.clip((saliency - lo) / (hi - lo), 0.0, 1.0)
    colors = (1.0 - t)[..., None] * BLUE + t[..., None] * RED
    return colors, saliency >= lo


def render_overlay(saliency: np.ndarray, image, out_path, threshold_lo: float = 0.7,
                   threshold_hi: float = 1.0) -> np.ndarray:
    """Paint patches whose saliency lies in [lo, hi] blue-to-red over a grey copy of ``image``.

    ``image`` is C x H x W in [0, 1].  Returns the uint8 H x W x 3 array
    written to ``out_path`` as binary PPM.
    """
    image = np.asarray(image, dtype=np.float64)
    if image.ndim == 2:
        image = image[None]
    c, h, w = image.shape
    side_y, side_x = saliency.shape
    if h % side_y or w % side_x:
        raise DimensionError(f"saliency grid {saliency.shape} does not tile image {h}x{w}")
    py, px = h // side_y, w // side_x
    gray = image[0] if c == 1 else image[:3].T.dot([0.299, 0.587, 0.114]).T
    rgb = np.repeat(np.round(np.clip(gray, 0, 1) * 255.0)[..., None], 3, axis=-1)
    colors, painted = overlay_colors(saliency, threshold_lo, threshold_hi)
    for gy, gx in zip(*np.nonzero(painted)):
        rgb[gy * py:(gy + 1) * py, gx * px:(gx + 1) * px] = np.round(colors[gy, gx])
    out = rgb.astype(np.uint8)
    write_ppm(Path(out_path), out)
    return out
