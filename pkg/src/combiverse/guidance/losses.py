"""Reference-view reconstruction loss and the depth-guidance baseline."""

from __future__ import annotations

import numpy as np
import torch
import torch.nn.functional as F

from combiverse.diff_render.rasterizer import RenderOutput
from combiverse.errors import ValidationError
from combiverse.spatial_init.depth import DepthMap

NORMALIZE_EPS = 1e-8


def _rgba(value: RenderOutput | torch.Tensor | np.ndarray, dtype: torch.dtype) -> torch.Tensor:
    if isinstance(value, RenderOutput):
        return value.rgba
    tensor = torch.as_tensor(np.array(value) if isinstance(value, np.ndarray) else value, dtype=dtype)
    if tensor.ndim != 3 or tensor.shape[-1] != 4:
        raise ValidationError(f"expected an (H, W, 4) raster, got {tuple(tensor.shape)}")
    return tensor


def resize_raster(raster: torch.Tensor, size: tuple[int, int]) -> torch.Tensor:
    """Area-resample an ``(H, W)`` or ``(H, W, C)`` raster to ``size = (width, height)``."""
    width, height = size
    if tuple(raster.shape[:2]) == (height, width):
        return raster
    squeeze = raster.ndim == 2
    chw = raster[None, None] if squeeze else raster.permute(2, 0, 1)[None]
    out = F.interpolate(chw, size=(height, width), mode="area")[0]
    return out[0] if squeeze else out.permute(1, 2, 0)


def target_from_image(
    image: np.ndarray, size: tuple[int, int], dtype: torch.dtype = torch.float64
) -> torch.Tensor:
    """Premultiplied ``(h, w, 4)`` target from an 8-bit RGBA input image.

    Premultiplying before resampling keeps transparent pixels from bleeding color.
    """
    rgba = torch.as_tensor(np.asarray(image, dtype=np.float64) / 255.0, dtype=dtype)
    if rgba.ndim != 3 or rgba.shape[-1] != 4:
        raise ValidationError(f"target image must be RGBA, got {tuple(rgba.shape)}")
    premultiplied = torch.cat([rgba[..., :3] * rgba[..., 3:], rgba[..., 3:]], dim=-1)
    return resize_raster(premultiplied, size)


def reference_loss(
    render: RenderOutput | torch.Tensor,
    target: RenderOutput | torch.Tensor | np.ndarray,
    lambda_rgb: float = 1000.0,
    lambda_alpha: float = 1000.0,
) -> torch.Tensor:
    """``lambda_rgb * mean|dRGB| + lambda_alpha * mean|dA|`` between two premultiplied rasters."""
    if lambda_rgb < 0 or lambda_alpha < 0:
        raise ValidationError("reference loss weights must be non-negative")
    ours = _rgba(render, torch.float64)
    theirs = _rgba(target, ours.dtype).to(ours.dtype)
    if ours.shape != theirs.shape:
        raise ValidationError(
            f"render {tuple(ours.shape)} and target {tuple(theirs.shape)} differ in size"
        )
    rgb = (ours[..., :3] - theirs[..., :3]).abs().mean()
    alpha = (ours[..., 3] - theirs[..., 3]).abs().mean()
    return lambda_rgb * rgb + lambda_alpha * alpha


def normalize_depth(depth: torch.Tensor, mask: torch.Tensor, eps: float = NORMALIZE_EPS) -> torch.Tensor:
    """Shift-and-scale normalize the masked values: ``(d - mean) / max(std, eps)``."""
    values = depth[mask]
    mean = values.mean()
    std = torch.clamp(((values - mean) ** 2).mean(), min=eps**2).sqrt()
    return (values - mean) / std


def depth_guidance_loss(
    rendered_depth: torch.Tensor,
    predicted: DepthMap | np.ndarray | torch.Tensor,
    mask: np.ndarray | torch.Tensor,
) -> torch.Tensor:
    """Mean absolute error between normalized rendered and predicted depth over ``mask``.

    Raises:
        ValidationError: Sizes differ or the mask is empty.
    """
    values = predicted.values if isinstance(predicted, DepthMap) else predicted
    target = torch.as_tensor(np.array(values) if isinstance(values, np.ndarray) else values)
    target = target.to(rendered_depth.dtype)
    mask_t = torch.as_tensor(np.array(mask) if isinstance(mask, np.ndarray) else mask).bool()
    if target.shape != rendered_depth.shape or mask_t.shape != rendered_depth.shape:
        raise ValidationError(
            f"depth shapes differ: rendered {tuple(rendered_depth.shape)}, "
            f"predicted {tuple(target.shape)}, mask {tuple(mask_t.shape)}"
        )
    if not bool(mask_t.any()):
        raise ValidationError("depth guidance needs a non-empty foreground mask")
    ours = normalize_depth(rendered_depth, mask_t)
    theirs = normalize_depth(target, mask_t)
    return (ours - theirs).abs().mean()


__all__ = [
    "depth_guidance_loss",
    "normalize_depth",
    "reference_loss",
    "resize_raster",
    "target_from_image",
]
