from combiverse.decomposition.clients import (
    InpainterClient,
    ReconstructorClient,
    SegmenterClient,
)
from combiverse.decomposition.decompose import (
    DEFAULT_PROMPT,
    build_inpaint_mask,
    decompose_object,
    inpaint_object,
    noise_background,
    reconstruct_object,
    segment_object,
)
from combiverse.decomposition.mesh_ops import DEFAULT_FACE_BUDGET, decimate_mesh

__all__ = [
    "DEFAULT_FACE_BUDGET",
    "DEFAULT_PROMPT",
    "InpainterClient",
    "ReconstructorClient",
    "SegmenterClient",
    "build_inpaint_mask",
    "decimate_mesh",
    "decompose_object",
    "inpaint_object",
    "noise_background",
    "reconstruct_object",
    "segment_object",
]
