"""Cross-attention maps and spatial-token reweighting.

Attention is the row-wise softmax of ``Q K^T / sqrt(d)``. Reweighting
multiplies the columns of the designated tokens by ``c`` and leaves every
other column untouched, with no renormalization afterwards.
"""

from __future__ import annotations

from collections.abc import Iterable
from dataclasses import dataclass

import numpy as np
from scipy.special import softmax

from combiverse.errors import ValidationError


@dataclass(frozen=True)
class TokenScaling:
    """Token positions ``j*`` whose attention columns are multiplied by ``c``."""

    token_indices: tuple[int, ...]
    multiplier: float

    def __post_init__(self) -> None:
        indices = tuple(sorted({int(j) for j in self.token_indices}))
        if any(j < 0 for j in indices):
            raise ValidationError(f"token indices must be non-negative: {indices}")
        if not float(self.multiplier) > 0:
            raise ValidationError(f"attention multiplier must be positive, got {self.multiplier}")
        object.__setattr__(self, "token_indices", indices)
        object.__setattr__(self, "multiplier", float(self.multiplier))

    @classmethod
    def of(cls, indices: Iterable[int], multiplier: float) -> TokenScaling:
        return cls(tuple(indices), multiplier)

    def to_dict(self) -> dict:
        return {"indices": list(self.token_indices), "multiplier": self.multiplier}


def attention_maps(queries: np.ndarray, keys: np.ndarray) -> np.ndarray:
    """Row-stochastic attention matrix ``(N_q, N_k)``."""
    queries = np.atleast_2d(np.asarray(queries, dtype=np.float64))
    keys = np.atleast_2d(np.asarray(keys, dtype=np.float64))
    if queries.shape[1] != keys.shape[1]:
        raise ValidationError(
            f"query dim {queries.shape[1]} does not match key dim {keys.shape[1]}"
        )
    d = queries.shape[1]
    if d == 0:
        raise ValidationError("attention needs a positive inner dimension")
    return softmax(queries @ keys.T / np.sqrt(d), axis=1)


def reweight_attention(maps: np.ndarray, scaling: TokenScaling | None) -> np.ndarray:
    """Scale the designated token columns; ``None`` returns an unchanged copy."""
    maps = np.array(maps, dtype=np.float64)
    if scaling is None:
        return maps
    n_keys = maps.shape[-1]
    for j in scaling.token_indices:
        if j >= n_keys:
            raise ValidationError(f"token index {j} out of range for {n_keys} keys")
        maps[..., j] *= scaling.multiplier
    return maps


__all__ = ["TokenScaling", "attention_maps", "reweight_attention"]
