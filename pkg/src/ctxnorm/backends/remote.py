"""HTTP client for a model server exposing generation with attention output.

Wire contract::

    POST /v1/generate   {prompt, max_tokens, temperature, return_attention}
                        -> {text, token_count, attention?: {T, weights}}
    POST /v1/tokenize   {text} -> {count}
    GET  /v1/capabilities -> {attention_supported, attention_convention,
                              max_prompt_tokens}

Head/layer aggregation of attention is the server's job.
"""

from __future__ import annotations

import logging
import os
import time
from typing import Any, Callable

import httpx

from ..attention import AttentionError, AttentionVector
from .base import (
    AttentionUnavailable,
    Backend,
    BackendError,
    GenerateOptions,
    GenerationRecord,
    PromptTooLong,
    TransportError,
    check_prompt,
)

log = logging.getLogger(__name__)

ENV_ENDPOINT = "CTXNORM_ENDPOINT"
ENV_API_KEY = "CTXNORM_API_KEY"


class RemoteBackend(Backend):
    def __init__(
        self,
        base_url: str | None = None,
        *,
        api_key: str | None = None,
        timeout: float = 120.0,
        max_retries: int = 3,
        backoff: float = 0.5,
        max_backoff: float = 8.0,
        transport: httpx.BaseTransport | None = None,
        sleep: Callable[[float], None] = time.sleep,
    ):
        base_url = base_url or os.environ.get(ENV_ENDPOINT)
        if not base_url:
            raise BackendError(f"no endpoint given and {ENV_ENDPOINT} is unset")
        api_key = api_key if api_key is not None else os.environ.get(ENV_API_KEY)
        headers = {"Authorization": f"Bearer {api_key}"} if api_key else {}
        self.base_url = base_url.rstrip("/")
        self.max_retries = max_retries
        self.backoff = backoff
        self.max_backoff = max_backoff
        self._sleep = sleep
        self._caps: dict[str, Any] | None = None
        self._client = httpx.Client(
            base_url=self.base_url, headers=headers, timeout=timeout, transport=transport
        )

    def describe(self) -> str:
        return f"remote:{self.base_url}"

    def close(self) -> None:
        self._client.close()

    def _request(self, method: str, path: str, body: dict | None = None) -> dict[str, Any]:
        attempt = 0
        while True:
            try:
                resp = self._client.request(method, path, json=body)
            except httpx.TransportError as e:
                if attempt >= self.max_retries:
                    raise TransportError(f"{method} {path} failed: {e}") from e
                delay = min(self.backoff * 2**attempt, self.max_backoff)
                log.warning("transport error on %s %s (%s); retrying in %.2fs", method, path, e, delay)
                self._sleep(delay)
                attempt += 1
                continue
            break
        if resp.status_code == 413:
            raise PromptTooLong(resp.text or "prompt too long")
        if resp.status_code >= 400:
            raise BackendError(f"{method} {path} returned HTTP {resp.status_code}: {resp.text[:200]}")
        try:
            data = resp.json()
        except ValueError:
            raise BackendError(f"{method} {path} returned non-JSON body") from None
        if not isinstance(data, dict):
            raise BackendError(f"{method} {path} returned {type(data).__name__}, expected object")
        return data

    def capabilities(self) -> dict[str, Any]:
        if self._caps is None:
            self._caps = self._request("GET", "/v1/capabilities")
        return self._caps

    def tokenize_count(self, text: str) -> int:
        data = self._request("POST", "/v1/tokenize", {"text": text})
        try:
            return int(data["count"])
        except (KeyError, TypeError, ValueError):
            raise BackendError("tokenize response lacks an integer 'count'") from None

    def generate(self, prompt: str, options: GenerateOptions | None = None) -> GenerationRecord:
        options = options or GenerateOptions()
        check_prompt(prompt)
        data = self._request(
            "POST",
            "/v1/generate",
            {
                "prompt": prompt,
                "max_tokens": options.max_tokens,
                "temperature": options.temperature,
                "return_attention": options.return_attention,
            },
        )
        if not isinstance(data.get("text"), str) or not isinstance(data.get("token_count"), int):
            raise BackendError("generate response needs string 'text' and integer 'token_count'")
        attention = None
        if options.return_attention:
            raw = data.get("attention")
            if not raw:
                raise AttentionUnavailable("server did not return attention")
            weights = raw.get("weights") or []
            if raw.get("T") != len(weights):
                raise BackendError(f"attention T={raw.get('T')} but {len(weights)} weights")
            try:
                attention = AttentionVector(
                    tuple(weights), options.prompt_id or "", options.format_tag or ""
                )
            except AttentionError as e:
                raise BackendError(f"invalid attention from server: {e}") from None
        return GenerationRecord(data["text"], data["token_count"], attention)
