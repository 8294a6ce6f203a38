from combiverse.spatial_init.depth import (
    DepthClient,
    DepthMap,
    HttpDepth,
    MockDepth,
    load_depth,
    save_depth,
)
from combiverse.spatial_init.initialization import (
    average_object_depth,
    init_rotation,
    init_scale,
    init_translation,
    initialize_placements,
)

__all__ = [
    "DepthClient",
    "DepthMap",
    "HttpDepth",
    "MockDepth",
    "average_object_depth",
    "init_rotation",
    "init_scale",
    "init_translation",
    "initialize_placements",
    "load_depth",
    "save_depth",
]
