"""Per-object decomposition: segment, replace background, build inpaint mask, complete, lift to 3D.

Workflow for object ``i`` with box ``b_i``:

1. Segment the object inside its box: cutout ``O_i`` and binary mask ``M_i``.
2. Replace everything outside ``M_i`` with seeded uniform noise: ``I_i``.
3. Mark pixels inside ``b_i`` but outside ``M_i`` for inpainting: ``m_i``.
4. Inpaint ``I_i`` under ``m_i``: completed image ``Î_i``.
5. Reconstruct a mesh from ``Î_i`` and normalize it to the unit cube.

Raster conventions:

- Images are ``uint8``; masks are ``bool``; shape is ``(H, W[, C])``.
- The full image is passed to every backend (no cropping).
"""

from __future__ import annotations

import numpy as np

from combiverse.backend_http import RetryPolicy, call_backend
from combiverse.decomposition.clients import InpainterClient, ReconstructorClient, SegmenterClient
from combiverse.errors import DegenerateSegmentationError, MeshValidationError, ValidationError
from combiverse.scene_model.mesh import TriangleMesh
from combiverse.scene_model.types import ObjectRecord, ObjectSpec, SceneInput
from combiverse.utils_logger import logger

DEFAULT_PROMPT = "a complete 3D model"


def derive_seed(seed: int, index: int) -> int:
    """Independent 32-bit seed for object ``index`` under a run seed."""
    return int(np.random.SeedSequence([int(seed), int(index)]).generate_state(1)[0])


def _require_shape(name: str, array: np.ndarray, shape: tuple[int, int]) -> None:
    if array.shape[:2] != shape:
        raise ValidationError(f"{name} is {array.shape[:2]}, expected {shape}")


# -------------------------------------------------------------------
# Segmentation and background replacement
# -------------------------------------------------------------------


def segment_object(
    image: np.ndarray,
    bbox: ObjectSpec,
    client: SegmenterClient,
    *,
    index: int | None = None,
    retry: RetryPolicy | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Segment one object and cut it out of the image.

    The backend mask is clipped to ``bbox``. The cutout keeps the object's
    RGB, zeroes the rest and carries the mask as alpha.

    Returns:
        tuple: ``(cutout, mask)`` as an RGBA ``uint8`` raster and a ``bool`` raster.

    Raises:
        BackendError: The segmenter failed after retries.
        DegenerateSegmentationError: No foreground pixel remains inside the box.
    """
    image = np.asarray(image)
    height, width = image.shape[:2]
    if not bbox.fits((width, height)):
        raise ValidationError(f"bbox {bbox.bbox} lies outside the {width}x{height} image")
    raw = call_backend(lambda: client.segment(image, bbox), stage="segment", index=index, policy=retry)
    raw = np.asarray(raw)
    _require_shape("segmentation mask", raw, (height, width))

    mask = raw.astype(bool) & bbox.indicator((width, height))
    if not mask.any():
        raise DegenerateSegmentationError("segmentation mask is empty inside the bbox", index)

    cutout = np.zeros((height, width, 4), dtype=np.uint8)
    cutout[..., :3] = np.where(mask[..., None], image[..., :3], 0)
    cutout[..., 3] = mask.astype(np.uint8) * 255
    return cutout, mask


def noise_background(cutout: np.ndarray, mask: np.ndarray, rng_seed: int) -> np.ndarray:
    """Keep foreground pixels and fill the background with i.i.d. uniform 8-bit noise."""
    cutout = np.asarray(cutout)
    mask = np.asarray(mask, dtype=bool)
    _require_shape("cutout", cutout, mask.shape)
    rng = np.random.default_rng(rng_seed)
    noise = rng.integers(0, 256, size=(*mask.shape, 3), dtype=np.uint8)
    return np.where(mask[..., None], cutout[..., :3], noise).astype(np.uint8)


def build_inpaint_mask(mask: np.ndarray, bbox: ObjectSpec) -> np.ndarray:
    """Pixels inside the box that are not foreground."""
    mask = np.asarray(mask, dtype=bool)
    height, width = mask.shape
    if not bbox.fits((width, height)):
        raise ValidationError(f"bbox {bbox.bbox} lies outside the {width}x{height} mask")
    return bbox.indicator((width, height)) & ~mask


# -------------------------------------------------------------------
# Backend-driven completion and reconstruction
# -------------------------------------------------------------------


def inpaint_object(
    noised: np.ndarray,
    inpaint_mask: np.ndarray,
    client: InpainterClient,
    prompt: str | None = None,
    *,
    index: int | None = None,
    retry: RetryPolicy | None = None,
) -> np.ndarray:
    """Complete the occluded part of an object.

    Pixels outside ``inpaint_mask`` are copied back from ``noised`` so the
    backend can only change the requested region.
    """
    noised = np.asarray(noised)
    inpaint_mask = np.asarray(inpaint_mask, dtype=bool)
    _require_shape("inpaint mask", noised, inpaint_mask.shape)
    if prompt is None:
        prompt = DEFAULT_PROMPT
    if not prompt.strip():
        raise ValidationError("inpainting prompt must be non-empty")

    if not inpaint_mask.any():
        logger.warning(f"object {index}: nothing to inpaint, keeping the noised image")
        return np.array(noised[..., :3], dtype=np.uint8)

    filled = call_backend(
        lambda: client.inpaint(
            noised, inpaint_mask, prompt, client.guidance_scale, client.num_steps
        ),
        stage="inpaint",
        index=index,
        policy=retry,
    )
    filled = np.asarray(filled)
    _require_shape("inpainted image", filled, inpaint_mask.shape)
    return np.where(inpaint_mask[..., None], filled[..., :3], noised[..., :3]).astype(np.uint8)


def reconstruct_object(
    completed: np.ndarray,
    client: ReconstructorClient,
    *,
    index: int | None = None,
    retry: RetryPolicy | None = None,
) -> TriangleMesh:
    """Lift a completed image to a mesh normalized to the unit cube."""
    if completed is None:
        raise ValidationError(f"object {index}: completed image is missing")
    mesh = call_backend(
        lambda: client.reconstruct(np.asarray(completed)),
        stage="reconstruct",
        index=index,
        policy=retry,
    )
    if not isinstance(mesh, TriangleMesh):
        raise MeshValidationError(f"object {index}: reconstructor returned {type(mesh).__name__}")
    return mesh.normalized()


def decompose_object(
    scene: SceneInput,
    index: int,
    segmenter: SegmenterClient,
    inpainter: InpainterClient,
    *,
    seed: int = 0,
    prompt: str | None = None,
    retry: RetryPolicy | None = None,
) -> ObjectRecord:
    """Run segmentation, noise replacement, inpaint-mask construction and inpainting."""
    spec = scene.objects[index]
    logger.info(f"Decomposing object {index} with bbox {spec.bbox}")
    cutout, mask = segment_object(scene.image, spec, segmenter, index=index, retry=retry)
    noised = noise_background(cutout, mask, derive_seed(seed, index))
    inpaint_mask = build_inpaint_mask(mask, spec)
    completed = inpaint_object(noised, inpaint_mask, inpainter, prompt, index=index, retry=retry)
    return ObjectRecord(
        index=index,
        spec=spec,
        image_size=scene.image_size,
        mask=mask,
        cutout=cutout,
        noised=noised,
        inpaint_mask=inpaint_mask,
        completed=completed,
    )


__all__ = [
    "DEFAULT_PROMPT",
    "build_inpaint_mask",
    "decompose_object",
    "derive_seed",
    "inpaint_object",
    "noise_background",
    "reconstruct_object",
    "segment_object",
]
