from combiverse.diff_render.camera import look_at, reference_camera, render_size
from combiverse.diff_render.rasterizer import (
    ComposedScene,
    RendererSettings,
    RenderOutput,
    render,
    render_depth,
)
from combiverse.diff_render.transforms import Placement, apply_transform, euler_matrix
from combiverse.diff_render.views import ViewSampler, dump_views, sample_novel_views

__all__ = [
    "ComposedScene",
    "Placement",
    "RenderOutput",
    "RendererSettings",
    "ViewSampler",
    "apply_transform",
    "dump_views",
    "euler_matrix",
    "look_at",
    "reference_camera",
    "render",
    "render_depth",
    "render_size",
    "sample_novel_views",
]
