"""Occlusion-based importance maps and convolutional filter visualization.

An occlusion map slides a gray box over the image on a stride grid, rescores
the occluded image, and adds the absolute score change to every pixel under
the box, repeating over a coarse-to-fine schedule of box sizes. Importance is
attributed uniformly to the whole footprint (not the box center), which makes
maps dense and lets a brute-force oracle reproduce them exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from matplotlib import colormaps
from PIL import Image

from .errors import ConfigError, ShapeMismatchError


def default_scales(side: int) -> tuple[int, ...]:
    """Coarse-to-fine box sides: side/2, side/4, side/8, side/16 (floor 1)."""
    return tuple(max(1, side // d) for d in (2, 4, 8, 16))


@dataclass(frozen=True)
class OcclusionConfig:
    """Box schedule for occlusion probing.

    ``stride`` of None steps each box by half its side; an integer applies to
    every scale. ``fill_value`` is the gray level written into the box.
    """

    scales: tuple[int, ...]
    stride: int | None = None
    fill_value: float = 0.5

    def __post_init__(self):
        object.__setattr__(self, "scales", tuple(int(s) for s in self.scales))
        if not self.scales or any(s < 1 for s in self.scales):
            raise ConfigError("scales must be a nonempty list of box sides >= 1")
        if self.stride is not None and self.stride < 1:
            raise ConfigError(f"stride must be >= 1, got {self.stride}")
        if not 0.0 <= self.fill_value <= 1.0:
            raise ConfigError(f"fill_value must be in [0, 1], got {self.fill_value}")

    def stride_for(self, scale: int) -> int:
        return self.stride if self.stride is not None else max(1, scale // 2)

    @classmethod
    def for_side(cls, side: int) -> "OcclusionConfig":
        return cls(scales=default_scales(side))


@dataclass
class Heatmap:
    """Accumulated absolute score differences, same shape as the source image."""

    values: np.ndarray
    n_images: int
    config: OcclusionConfig

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)

    @property
    def total_mass(self) -> float:
        return float(self.values.sum())


@dataclass
class FilterGrid:
    """Per-filter activation maps of one convolutional layer for one image."""

    values: np.ndarray  # (filters, h, w)
    layer: int
    filter_count: int = field(init=False)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        self.filter_count = self.values.shape[0]


def _positions(side: int, scale: int, stride: int) -> list[int]:
    return list(range(0, side - scale + 1, stride))


def occlusion_map(model, image, config: OcclusionConfig | None = None,
                  batch_size: int = 128) -> Heatmap:
    """Slide gray boxes over one image, accumulating |score - baseline|.

    `model` needs only a predict() accepting (H, W) and (N, H, W) arrays.
    Accumulation order is the fixed scan order per scale, so results are
    bit-reproducible regardless of internal prediction batching.
    """
    pixels = np.asarray(getattr(image, "pixels", image), dtype=np.float64)
    if pixels.ndim != 2 or pixels.shape[0] != pixels.shape[1]:
        raise ShapeMismatchError(f"need one square (H, W) image, got {pixels.shape}")
    side = pixels.shape[0]
    config = config or OcclusionConfig.for_side(side)
    if max(config.scales) > side:
        raise ConfigError(
            f"box side {max(config.scales)} exceeds image side {side}"
        )
    baseline = float(model.predict(pixels))
    per_scale = []
    for scale in config.scales:
        stride = config.stride_for(scale)
        coords = [(r, c) for r in _positions(side, scale, stride)
                  for c in _positions(side, scale, stride)]
        deltas = np.empty(len(coords))
        for start in range(0, len(coords), batch_size):
            chunk = coords[start : start + batch_size]
            batch = np.repeat(pixels[None, :, :], len(chunk), axis=0)
            for j, (r, c) in enumerate(chunk):
                batch[j, r : r + scale, c : c + scale] = config.fill_value
            deltas[start : start + len(chunk)] = np.abs(
                np.asarray(model.predict(batch)) - baseline
            )
        layer = np.zeros_like(pixels)
        for (r, c), d in zip(coords, deltas):
            layer[r : r + scale, c : c + scale] += d
        per_scale.append((scale, layer))
    # combine per-scale maps in canonical order: reordering config.scales
    # cannot change the result, not even in the last ulp
    heat = np.zeros_like(pixels)
    for _, layer in sorted(per_scale, key=lambda sl: sl[0]):
        heat += layer
    return Heatmap(values=heat, n_images=1, config=config)


def average_heatmap(model, images, config: OcclusionConfig | None = None,
                    batch_size: int = 128):
    """Pixel-wise mean occlusion map over a set plus the pixel-wise mean face.

    Contributions are sorted before reduction so the result is bit-identical
    under any reordering of the image list.
    """
    imgs = [np.asarray(getattr(im, "pixels", im), dtype=np.float64) for im in images]
    if not imgs:
        raise ValueError("need at least one image")
    shapes = {im.shape for im in imgs}
    if len(shapes) != 1:
        raise ShapeMismatchError(f"images have mixed shapes: {sorted(shapes)}")
    config = config or OcclusionConfig.for_side(imgs[0].shape[0])
    maps = np.stack([
        occlusion_map(model, im, config, batch_size=batch_size).values for im in imgs
    ])
    mean_heat = np.sort(maps, axis=0).sum(axis=0) / len(imgs)
    mean_face = np.sort(np.stack(imgs), axis=0).sum(axis=0) / len(imgs)
    heat = Heatmap(values=mean_heat, n_images=len(imgs), config=config)
    return heat, mean_face


def filter_responses(model, image, layer: int | None = None) -> FilterGrid:
    """Activation maps of one conv layer (default: the last one) for one image.

    `layer` indexes the model's convolutional layers in forward order. Values
    are the raw post-activation maps; use save_filter_montage for a
    contrast-normalized rendering.
    """
    import torch

    conv_positions = model.conv_layers()
    if not conv_positions:
        raise ConfigError("model has no convolutional layers")
    if layer is None:
        layer = len(conv_positions) - 1
    if not 0 <= layer < len(conv_positions):
        raise ConfigError(
            f"layer {layer} is not a convolutional layer; valid indices: "
            f"0..{len(conv_positions) - 1}"
        )
    pixels = np.asarray(getattr(image, "pixels", image), dtype=np.float64)
    if pixels.shape != (model.side, model.side):
        raise ShapeMismatchError(
            f"expected a ({model.side}, {model.side}) image, got {pixels.shape}"
        )
    stop_at = conv_positions[layer] + 1  # the activation right after the conv
    x = torch.from_numpy(pixels[None, None, :, :])
    model.module.eval()
    with torch.no_grad():
        for i, m in enumerate(model.module):
            x = m(x)
            if i == stop_at:
                break
    return FilterGrid(values=x[0].numpy(), layer=layer)


def _normalize01(values: np.ndarray) -> np.ndarray:
    lo = float(values.min())
    hi = float(values.max())
    if hi == lo:
        return np.zeros_like(values)  # degenerate range renders as all-zero
    return (values - lo) / (hi - lo)


def render_overlay(heatmap, face, out_path, alpha: float = 0.5,
                   colormap: str = "jet") -> Path:
    """Min-max normalize, colorize, alpha-blend over the face, write 8-bit PNG."""
    heat = np.asarray(getattr(heatmap, "values", heatmap), dtype=np.float64)
    face = np.asarray(getattr(face, "pixels", face), dtype=np.float64)
    if heat.shape != face.shape:
        raise ShapeMismatchError(f"heatmap {heat.shape} vs face {face.shape}")
    norm = _normalize01(heat)
    rgb_heat = colormaps[colormap](norm)[..., :3]
    gray = np.repeat(np.clip(face, 0.0, 1.0)[..., None], 3, axis=2)
    blended = (1.0 - alpha) * gray + alpha * rgb_heat
    out = np.round(np.clip(blended, 0.0, 1.0) * 255.0).astype(np.uint8)
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(out, mode="RGB").save(out_path)
    return out_path


def save_heatmap(heatmap, path) -> None:
    """Raw numeric grid as delimited text (one row per pixel row)."""
    values = np.asarray(getattr(heatmap, "values", heatmap), dtype=np.float64)
    np.savetxt(path, values, delimiter=",")


def load_heatmap(path) -> np.ndarray:
    return np.atleast_2d(np.loadtxt(path, delimiter=","))


def save_filter_grid(grid: FilterGrid, path) -> None:
    """Raw per-filter maps as an npz archive keyed filter_000, filter_001, ..."""
    arrays = {f"filter_{i:03d}": grid.values[i] for i in range(grid.filter_count)}
    np.savez(path, layer=np.array(grid.layer), **arrays)


def save_filter_montage(grid: FilterGrid, path, pad: int = 1) -> Path:
    """Contrast-normalized montage of all filter maps in one PNG."""
    f, h, w = grid.values.shape
    cols = int(np.ceil(np.sqrt(f)))
    rows = int(np.ceil(f / cols))
    canvas = np.ones((rows * (h + pad) + pad, cols * (w + pad) + pad))
    for i in range(f):
        r, c = divmod(i, cols)
        tile = _normalize01(grid.values[i])
        y = pad + r * (h + pad)
        x = pad + c * (w + pad)
        canvas[y : y + h, x : x + w] = tile
    out = np.round(canvas * 255.0).astype(np.uint8)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(out, mode="L").save(path)
    return path
