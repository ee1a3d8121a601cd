"""HTTP client for a local model server (generate + embeddings).

This is the only module that performs model I/O. Everything downstream talks
to the small :class:`ModelProvider` protocol, which the in-process mock in
:mod:`culrag.mock` also satisfies.
"""

from __future__ import annotations

import logging
import os
import threading
import time
from dataclasses import dataclass, field
from typing import Callable, Protocol, Sequence

import httpx

logger = logging.getLogger(__name__)

ENDPOINT_ENV = "CULRAG_MODEL_ENDPOINT"
DEFAULT_ENDPOINT = "http://localhost:11434"
DEFAULT_STOP = ("\n\n",)


class ModelClientError(RuntimeError):
    pass


class ModelTransportError(ModelClientError):
    pass


class ModelConfigError(ModelClientError):
    """The server does not know the requested model. Never retried."""


class ModelTimeoutError(ModelClientError):
    def __init__(self, message: str, elapsed: float) -> None:
        super().__init__(message)
        self.elapsed = elapsed


class EmbeddingDimensionError(ModelClientError):
    pass


@dataclass(frozen=True)
class GenerationRequest:
    model_id: str
    prompt: str
    temperature: float = 0.0
    max_tokens: int = 64
    stop_sequences: tuple[str, ...] = DEFAULT_STOP

    def __post_init__(self) -> None:
        if not self.prompt:
            raise ValueError("prompt must be non-empty")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.max_tokens <= 0:
            raise ValueError("max_tokens must be positive")


@dataclass(frozen=True)
class GenerationResult:
    text: str
    model_id: str
    latency_ms: int


class ModelProvider(Protocol):
    def generate(self, request: GenerationRequest) -> GenerationResult: ...

    def embed(self, model_id: str, text: str) -> list[float]: ...


def resolve_endpoint(endpoint: str | None = None) -> str:
    return endpoint or os.environ.get(ENDPOINT_ENV) or DEFAULT_ENDPOINT


@dataclass
class OllamaClient:
    endpoint: str = field(default_factory=resolve_endpoint)
    timeout: float = 120.0
    retries: int = 3
    backoff: float = 0.5
    max_in_flight: int = 1
    transport: httpx.BaseTransport | None = None
    sleep: Callable[[float], None] = time.sleep

    def __post_init__(self) -> None:
        self._client = httpx.Client(base_url=self.endpoint.rstrip("/"), timeout=self.timeout, transport=self.transport)
        self._slots = threading.BoundedSemaphore(max(1, self.max_in_flight))
        self._dims: dict[str, int] = {}
        self._dims_lock = threading.Lock()
        self.retry_log: list[str] = []

    def close(self) -> None:
        self._client.close()

    def _post(self, path: str, body: dict, model_id: str) -> dict:
        start = time.monotonic()
        attempt = 0
        while True:
            try:
                response = self._client.post(path, json=body)
            except httpx.TimeoutException as exc:
                elapsed = time.monotonic() - start
                raise ModelTimeoutError(f"{path} timed out after {elapsed:.1f}s", elapsed) from exc
            except httpx.TransportError as exc:
                failure = f"{type(exc).__name__}: {exc}"
            else:
                if response.status_code == 404:
                    raise ModelConfigError(f"model {model_id!r} not found at {self.endpoint}: {response.text[:200]}")
                if response.is_success:
                    try:
                        return response.json()
                    except ValueError as exc:
                        raise ModelTransportError(f"{path}: response is not JSON") from exc
                if response.status_code < 500 and response.status_code != 429:
                    raise ModelTransportError(f"{path}: HTTP {response.status_code}: {response.text[:200]}")
                failure = f"HTTP {response.status_code}"
            if attempt >= self.retries:
                raise ModelTransportError(f"{path} failed after {attempt} retries: {failure}")
            attempt += 1
            delay = self.backoff * 2 ** (attempt - 1)
            self.retry_log.append(f"{path} retry {attempt}: {failure}")
            logger.warning("%s failed (%s); retry %d/%d in %.2fs", path, failure, attempt, self.retries, delay)
            self.sleep(delay)

    def generate(self, request: GenerationRequest) -> GenerationResult:
        body = {
            "model": request.model_id,
            "prompt": request.prompt,
            "stream": False,
            "options": {
                "temperature": request.temperature,
                "num_predict": request.max_tokens,
                "stop": list(request.stop_sequences),
            },
        }
        with self._slots:
            start = time.monotonic()
            data = self._post("/api/generate", body, request.model_id)
            latency = int((time.monotonic() - start) * 1000)
        text = data.get("response")
        if not isinstance(text, str):
            raise ModelTransportError("/api/generate: response lacks a 'response' string")
        return GenerationResult(text=text, model_id=request.model_id, latency_ms=latency)

    def embed(self, model_id: str, text: str) -> list[float]:
        return embed_text(self, model_id, text)

    def _embed_raw(self, model_id: str, text: str) -> list[float]:
        data = self._post("/api/embeddings", {"model": model_id, "prompt": text}, model_id)
        vector = data.get("embedding")
        if not isinstance(vector, list) or not vector:
            raise ModelTransportError("/api/embeddings: response lacks an 'embedding' list")
        return [float(v) for v in vector]

    def check_dimension(self, model_id: str, dimension: int) -> None:
        with self._dims_lock:
            known = self._dims.setdefault(model_id, dimension)
        if known != dimension:
            raise EmbeddingDimensionError(
                f"embedding dimension drift for {model_id}: expected {known}, got {dimension}"
            )


def embed_text(client: OllamaClient, model_id: str, text: str) -> list[float]:
    """Embed ``text`` with ``model_id``; the dimension must stay constant per model."""
    if not text:
        raise ValueError("cannot embed empty text")
    vector = client._embed_raw(model_id, text)
    client.check_dimension(model_id, len(vector))
    return vector


def generate(request: GenerationRequest, endpoint: str | None = None, **client_options) -> GenerationResult:
    client = OllamaClient(endpoint=resolve_endpoint(endpoint), **client_options)
    try:
        return client.generate(request)
    finally:
        client.close()


def embedder(provider: ModelProvider, model_id: str):
    """Bind a provider and model into a ``text -> vector`` callable."""

    def embed(text: str) -> Sequence[float]:
        return provider.embed(model_id, text)

    return embed
