"""Shared JSON-over-HTTP plumbing for external backend adapters.

Binary payloads travel base64-encoded inside the JSON body: PNG for
rasters, OBJ text for meshes, ``.npy`` bytes for float arrays.
"""

import base64
from collections.abc import Callable
from dataclasses import dataclass
import io
import time
from typing import Any, TypeVar

import numpy as np
import requests

from combiverse.errors import BackendError, ValidationError
from combiverse.utils_logger import logger

T = TypeVar("T")


@dataclass(frozen=True)
class RetryPolicy:
    """Bounded retries with exponential backoff."""

    attempts: int = 3
    base_delay: float = 0.5
    max_delay: float = 8.0

    def delay(self, attempt: int) -> float:
        return min(self.base_delay * (2**attempt), self.max_delay)


def call_backend(
    fn: Callable[[], T],
    *,
    stage: str,
    index: int | None = None,
    policy: RetryPolicy | None = None,
    sleep: Callable[[float], None] = time.sleep,
) -> T:
    """Run a backend call, retrying transient failures.

    Validation failures of the returned payload are not retried.

    Raises:
        BackendError: After the last attempt fails.
    """
    policy = policy or RetryPolicy()
    last: Exception | None = None
    for attempt in range(policy.attempts):
        try:
            return fn()
        except ValidationError:
            raise
        except Exception as e:
            last = e
            if attempt + 1 < policy.attempts:
                wait = policy.delay(attempt)
                logger.warning(
                    f"{stage} backend call failed (attempt {attempt + 1}/{policy.attempts}): "
                    f"{e}; retrying in {wait:.2f}s"
                )
                sleep(wait)
    raise BackendError(stage, f"failed after {policy.attempts} attempts: {last}", index) from last


def post_json(url: str, payload: dict[str, Any], *, timeout_s: float) -> dict[str, Any]:
    """POST a JSON body and return the decoded JSON response, raising on HTTP errors."""
    response = requests.post(url, json=payload, timeout=timeout_s)
    response.raise_for_status()
    data = response.json()
    if not isinstance(data, dict):
        raise ValueError(f"{url} returned a non-object JSON body")
    return data


def join_url(endpoint: str, route: str) -> str:
    return endpoint.rstrip("/") + "/" + route.lstrip("/")


def b64encode(data: bytes) -> str:
    return base64.b64encode(data).decode("ascii")


def b64decode(text: str) -> bytes:
    return base64.b64decode(text.encode("ascii"))


def encode_array(array: np.ndarray) -> str:
    buffer = io.BytesIO()
    np.save(buffer, np.asarray(array), allow_pickle=False)
    return b64encode(buffer.getvalue())


def decode_array(text: str) -> np.ndarray:
    return np.load(io.BytesIO(b64decode(text)), allow_pickle=False)


__all__ = [
    "RetryPolicy",
    "b64decode",
    "b64encode",
    "call_backend",
    "decode_array",
    "encode_array",
    "join_url",
    "post_json",
]
