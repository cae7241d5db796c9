"""Clients for the analyzer and detector services.

Both services speak JSON over ``POST``. :class:`MockServiceClient` replays a
fixture file keyed by the canonical request, which keeps synthesis runs
reproducible without network access.
"""

from __future__ import annotations

import json
import logging
import time
from pathlib import Path
from typing import Any

import httpx

log = logging.getLogger(__name__)

ANALYZE = "/analyze"
DETECT = "/detect"


class ServiceError(RuntimeError):
    pass


class ServiceUnavailableError(ServiceError):
    """Timeout or connection failure; worth retrying."""


class ServiceProtocolError(ServiceError):
    """The service answered with something outside the wire format."""


def canonical_request(endpoint: str, payload: dict[str, Any]) -> str:
    return json.dumps(
        {"endpoint": endpoint, "request": payload},
        sort_keys=True,
        separators=(",", ":"),
        ensure_ascii=False,
    )


class ServiceClient:
    """Retry loop shared by the concrete clients; subclasses implement ``_send``."""

    def __init__(self, retries: int = 2, backoff_s: float = 0.5):
        self.retries = retries
        self.backoff_s = backoff_s

    def _send(self, endpoint: str, payload: dict[str, Any]) -> Any:
        raise NotImplementedError

    def call(self, endpoint: str, payload: dict[str, Any]) -> dict[str, Any]:
        attempt = 0
        while True:
            try:
                response = self._send(endpoint, payload)
                break
            except ServiceUnavailableError as exc:
                if attempt >= self.retries:
                    raise ServiceUnavailableError(
                        f"{endpoint} unavailable after {attempt + 1} attempts: {exc}"
                    ) from exc
                log.warning("%s attempt %d failed (%s); retrying", endpoint, attempt + 1, exc)
                time.sleep(self.backoff_s * 2**attempt)
                attempt += 1
        if not isinstance(response, dict):
            raise ServiceProtocolError(f"{endpoint} returned {type(response).__name__}, expected object")
        return response

    def close(self) -> None:
        pass

    def __enter__(self):
        return self

    def __exit__(self, *exc) -> None:
        self.close()


class HttpServiceClient(ServiceClient):
    def __init__(
        self,
        analyzer_url: str,
        detector_url: str,
        timeout_s: float = 30.0,
        retries: int = 2,
        backoff_s: float = 0.5,
        client: httpx.Client | None = None,
    ):
        super().__init__(retries, backoff_s)
        self.base_urls = {ANALYZE: analyzer_url.rstrip("/"), DETECT: detector_url.rstrip("/")}
        self._client = client or httpx.Client(timeout=timeout_s)

    def _send(self, endpoint: str, payload: dict[str, Any]) -> Any:
        url = self.base_urls[endpoint] + endpoint
        try:
            resp = self._client.post(url, json=payload)
        except (httpx.TimeoutException, httpx.TransportError) as exc:
            raise ServiceUnavailableError(str(exc)) from exc
        if resp.status_code >= 500 or resp.status_code == 429:
            raise ServiceUnavailableError(f"HTTP {resp.status_code} from {url}")
        if resp.status_code >= 400:
            raise ServiceProtocolError(f"HTTP {resp.status_code} from {url}: {resp.text[:200]}")
        try:
            return resp.json()
        except ValueError as exc:
            raise ServiceProtocolError(f"non-JSON body from {url}") from exc

    def close(self) -> None:
        self._client.close()


class MockServiceClient(ServiceClient):
    """Replays responses from a fixture file.

    The file holds ``{"entries": [{"endpoint", "request", "response"}]}``; an
    entry with ``"timeout": true`` in place of a response simulates an
    unreachable service.
    """

    def __init__(self, fixture_path: str | Path, retries: int = 2, backoff_s: float = 0.0):
        super().__init__(retries, backoff_s)
        try:
            with open(fixture_path, encoding="utf-8") as fh:
                data = json.load(fh)
        except FileNotFoundError as exc:
            raise ServiceProtocolError(f"mock fixture file not found: {fixture_path}") from exc
        except json.JSONDecodeError as exc:
            raise ServiceProtocolError(f"mock fixture file is not JSON: {exc}") from exc
        self._table: dict[str, Any] = {}
        for entry in data.get("entries", []):
            key = canonical_request(entry["endpoint"], entry["request"])
            self._table[key] = None if entry.get("timeout") else entry["response"]
        self.calls: list[str] = []

    def _send(self, endpoint: str, payload: dict[str, Any]) -> Any:
        key = canonical_request(endpoint, payload)
        self.calls.append(key)
        if key not in self._table:
            raise ServiceProtocolError(f"no mock fixture for request {key}")
        response = self._table[key]
        if response is None:
            raise ServiceUnavailableError(f"simulated timeout for {key}")
        return response
