from combiverse.pipeline_cli.config import (
    BACKEND_KINDS,
    BACKEND_NAMES,
    RUN_DIR_ENV,
    BackendConfig,
    DecompositionConfig,
    RunConfig,
    SpatialInitConfig,
    default_config_document,
    load_run_config,
    parse_run_config,
    save_run_config,
)
from combiverse.pipeline_cli.examples import (
    EXAMPLES,
    ToyBenchmark,
    toy_benchmark,
    two_cubes_scene,
    write_example,
)
from combiverse.pipeline_cli.manifest import RunManifest, run_lock
from combiverse.pipeline_cli.stages import (
    cmd_ablate,
    cmd_combine,
    cmd_decompose,
    cmd_reconstruct,
    cmd_run_all,
    load_records,
    read_placements,
)

__all__ = [
    "BACKEND_KINDS",
    "BACKEND_NAMES",
    "EXAMPLES",
    "RUN_DIR_ENV",
    "BackendConfig",
    "DecompositionConfig",
    "RunConfig",
    "RunManifest",
    "SpatialInitConfig",
    "ToyBenchmark",
    "cmd_ablate",
    "cmd_combine",
    "cmd_decompose",
    "cmd_reconstruct",
    "cmd_run_all",
    "default_config_document",
    "load_records",
    "load_run_config",
    "parse_run_config",
    "read_placements",
    "run_lock",
    "save_run_config",
    "toy_benchmark",
    "two_cubes_scene",
    "write_example",
]
