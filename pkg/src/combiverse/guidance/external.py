"""HTTP adapter for an external diffusion backend acting as score provider."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch

from combiverse.backend_http import RetryPolicy, call_backend, decode_array, encode_array, join_url, post_json
from combiverse.errors import ValidationError
from combiverse.guidance.attention import TokenScaling
from combiverse.guidance.diffusion import NoiseHint, NoiseSchedule
from combiverse.scene_model.tokenizer import tokenize_caption


@dataclass(frozen=True)
class PromptHandle:
    """Embeddings stay server-side; the adapter only carries the caption."""

    caption: str
    tokens: tuple[str, ...]


@dataclass
class HttpScoreProvider:
    """Score provider served over ``POST /predict_noise`` and ``POST /attention``.

    Images travel as base64 ``.npy`` arrays of shape ``(C, H, W)``; token
    scaling as ``{"indices": [...], "multiplier": c}`` or ``null``.
    """

    endpoint: str
    timeout_s: float = 120.0
    retry: RetryPolicy = field(default_factory=RetryPolicy)
    schedule: NoiseSchedule = field(default_factory=NoiseSchedule.linear)

    def tokenize(self, caption: str) -> list[str]:
        return tokenize_caption(caption)

    def encode_prompt(self, caption: str) -> PromptHandle:
        return PromptHandle(caption, tuple(self.tokenize(caption)))

    def predict_noise(
        self,
        noisy: torch.Tensor,
        embedding: PromptHandle,
        timestep: int,
        scaling: TokenScaling | None = None,
        *,
        hint: NoiseHint | None = None,
    ) -> torch.Tensor:
        payload = {
            "image": encode_array(noisy.detach().cpu().numpy()),
            "prompt": embedding.caption,
            "timestep": int(timestep),
            "token_scaling": scaling.to_dict() if scaling is not None else None,
        }
        body = call_backend(
            lambda: post_json(join_url(self.endpoint, "predict_noise"), payload, timeout_s=self.timeout_s),
            stage="score",
            policy=self.retry,
        )
        predicted = decode_array(body["noise"])
        if predicted.shape != tuple(noisy.shape):
            raise ValidationError(
                f"score backend returned {predicted.shape}, expected {tuple(noisy.shape)}"
            )
        return torch.as_tensor(np.array(predicted), dtype=noisy.dtype)

    def introspect_attention(
        self, embedding: PromptHandle, scaling: TokenScaling | None = None
    ) -> list[np.ndarray]:
        payload = {
            "prompt": embedding.caption,
            "token_scaling": scaling.to_dict() if scaling is not None else None,
        }
        body = call_backend(
            lambda: post_json(join_url(self.endpoint, "attention"), payload, timeout_s=self.timeout_s),
            stage="score",
            policy=self.retry,
        )
        return [decode_array(site) for site in body["maps"]]


__all__ = ["HttpScoreProvider", "PromptHandle"]
