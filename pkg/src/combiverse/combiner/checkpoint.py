"""Combination checkpoints.

A checkpoint ``combine/ckpt_<iter>.npz`` holds the state after ``iter``
completed iterations as a flat ``.npz`` archive:

- ``var/<object>.<group>``: placement leaves (scale as ``log s``)
- ``adam/<param>/<key>``: Adam moments and step counts
- ``meta``: JSON with the iteration, seed and loss history

Random streams are derived from ``(seed, iteration, view)`` at every
iteration, so the seed and iteration fully restore them.
"""

from __future__ import annotations

import json
import os
import pathlib
import re
from typing import Any

import numpy as np
import torch

from combiverse.combiner.variables import PlacementVariables
from combiverse.errors import ValidationError
from combiverse.utils_logger import logger

_NAME = re.compile(r"^ckpt_(\d+)\.npz$")


def checkpoint_path(folder: str | pathlib.Path, iteration: int) -> pathlib.Path:
    return pathlib.Path(folder) / f"ckpt_{iteration:05d}.npz"


def save_checkpoint(
    folder: str | pathlib.Path,
    iteration: int,
    variables: PlacementVariables,
    optimizer: torch.optim.Optimizer,
    meta: dict[str, Any],
) -> pathlib.Path:
    target = checkpoint_path(folder, iteration)
    target.parent.mkdir(parents=True, exist_ok=True)
    arrays: dict[str, np.ndarray] = {
        f"var/{name}": value for name, value in variables.state_arrays().items()
    }
    for index, state in optimizer.state_dict()["state"].items():
        for key, value in state.items():
            arrays[f"adam/{index}/{key}"] = torch.as_tensor(value).detach().cpu().numpy().copy()
    arrays["meta"] = np.array(json.dumps({**meta, "iteration": iteration}, sort_keys=True))
    tmp = target.with_suffix(".tmp")
    with tmp.open("wb") as fh:
        np.savez(fh, **arrays)
    os.replace(tmp, target)
    logger.debug(f"Wrote checkpoint {target}")
    return target


def latest_checkpoint(folder: str | pathlib.Path) -> pathlib.Path | None:
    folder = pathlib.Path(folder)
    if not folder.is_dir():
        return None
    found = [(int(m.group(1)), p) for p in folder.iterdir() if (m := _NAME.match(p.name))]
    return max(found)[1] if found else None


def load_checkpoint(
    path: str | pathlib.Path,
    variables: PlacementVariables,
    optimizer: torch.optim.Optimizer,
) -> dict[str, Any]:
    """Restore ``variables`` and ``optimizer`` in place and return the metadata.

    Raises:
        ValidationError: The archive does not match the current variables.
    """
    with np.load(pathlib.Path(path), allow_pickle=False) as archive:
        data = {key: archive[key] for key in archive.files}
    if "meta" not in data:
        raise ValidationError(f"{path} is not a combination checkpoint")
    variables.load_state_arrays(
        {key.removeprefix("var/"): value for key, value in data.items() if key.startswith("var/")}
    )
    state: dict[int, dict[str, torch.Tensor]] = {}
    for key, value in data.items():
        if key.startswith("adam/"):
            _, index, name = key.split("/", 2)
            state.setdefault(int(index), {})[name] = torch.as_tensor(np.array(value))
    current = optimizer.state_dict()
    optimizer.load_state_dict({"state": state, "param_groups": current["param_groups"]})
    return json.loads(str(data["meta"]))


__all__ = ["checkpoint_path", "latest_checkpoint", "load_checkpoint", "save_checkpoint"]
