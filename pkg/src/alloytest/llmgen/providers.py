"""Chat-completion providers: one HTTP+JSON client plus offline mock and replay."""
from __future__ import annotations

import json
import logging
import os
import time
import urllib.error
import urllib.request
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Optional, Protocol, Sequence, Union

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

log = logging.getLogger(__name__)


class ProviderError(Exception):
    def __init__(self, message: str, kind: str = "transport", status: Optional[int] = None):
        super().__init__(message)
        self.kind = kind
        self.status = status


@dataclass
class ProviderResponse:
    text: str
    usage: dict = field(default_factory=dict)
    cost: Optional[float] = None
    model: str = ""
    params_applied: dict = field(default_factory=dict)


class Provider(Protocol):
    name: str

    def complete(self, system: str, user: str, params: Mapping[str, object]) -> ProviderResponse: ...


@dataclass
class ProviderConfig:
    name: str
    endpoint: str
    model: str
    api_key_env: str = ""
    # price per million tokens, by token class
    prices: dict = field(default_factory=dict)
    supported_params: tuple[str, ...] = ("temperature",)
    timeout: float = 600.0
    max_retries: int = 4
    backoff: float = 2.0


def load_provider_configs(path: Union[str, Path]) -> dict[str, ProviderConfig]:
    with open(path, "rb") as fh:
        doc = tomllib.load(fh)
    out = {}
    for name, entry in doc.get("providers", {}).items():
        out[name] = ProviderConfig(
            name=name,
            endpoint=entry["endpoint"],
            model=entry["model"],
            api_key_env=entry.get("api_key_env", ""),
            prices=dict(entry.get("prices", {})),
            supported_params=tuple(entry.get("supported_params", ("temperature",))),
            timeout=float(entry.get("timeout", 600.0)),
            max_retries=int(entry.get("max_retries", 4)),
            backoff=float(entry.get("backoff", 2.0)),
        )
    return out


def price(usage: Mapping[str, int], prices: Mapping[str, float]) -> Optional[float]:
    if not prices:
        return None
    return sum(usage.get(k, 0) * prices.get(k, 0.0) for k in usage) / 1_000_000


_RETRY_STATUS = {408, 429, 500, 502, 503, 504}


class HTTPProvider:
    """OpenAI-style ``/chat/completions`` endpoint."""

    def __init__(self, config: ProviderConfig, opener: Callable = urllib.request.urlopen, sleep: Callable = time.sleep):
        self.config = config
        self.name = config.name
        self._open = opener
        self._sleep = sleep

    def _request(self, system: str, user: str, params: Mapping[str, object]):
        cfg = self.config
        applied = {k: v for k, v in params.items() if k in cfg.supported_params}
        body = {
            "model": cfg.model,
            "messages": [{"role": "system", "content": system}, {"role": "user", "content": user}],
            **applied,
        }
        headers = {"Content-Type": "application/json"}
        if cfg.api_key_env:
            key = os.environ.get(cfg.api_key_env)
            if not key:
                raise ProviderError(f"{cfg.name}: environment variable {cfg.api_key_env} is not set", "auth")
            headers["Authorization"] = f"Bearer {key}"
        req = urllib.request.Request(cfg.endpoint, json.dumps(body).encode("utf-8"), headers, method="POST")
        return req, applied

    def complete(self, system: str, user: str, params: Mapping[str, object]) -> ProviderResponse:
        cfg = self.config
        req, applied = self._request(system, user, params)
        attempt = 0
        while True:
            try:
                with self._open(req, timeout=cfg.timeout) as resp:
                    raw = resp.read()
                break
            except urllib.error.HTTPError as exc:
                detail = exc.read().decode("utf-8", "replace")[:500] if hasattr(exc, "read") else ""
                if exc.code in (401, 403):
                    raise ProviderError(f"{cfg.name}: authentication failed ({exc.code}): {detail}", "auth", exc.code) from None
                if exc.code not in _RETRY_STATUS or attempt >= cfg.max_retries:
                    kind = "rate_limit" if exc.code == 429 else "http"
                    raise ProviderError(f"{cfg.name}: HTTP {exc.code}: {detail}", kind, exc.code) from None
            except (urllib.error.URLError, TimeoutError, ConnectionError) as exc:
                if attempt >= cfg.max_retries:
                    raise ProviderError(f"{cfg.name}: transport failure: {exc}", "transport") from None
            delay = cfg.backoff * (2**attempt)
            log.warning("%s: transient failure, retrying in %.1fs", cfg.name, delay)
            self._sleep(delay)
            attempt += 1
        return self._decode(raw, applied)

    def _decode(self, raw: bytes, applied: dict) -> ProviderResponse:
        cfg = self.config
        try:
            doc = json.loads(raw)
            text = doc["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise ProviderError(f"{cfg.name}: malformed response ({exc}): {raw[:300]!r}", "malformed") from None
        u = doc.get("usage") or {}
        details = u.get("completion_tokens_details") or {}
        reasoning = int(details.get("reasoning_tokens", 0))
        usage = {
            "input": int(u.get("prompt_tokens", 0)),
            "output": int(u.get("completion_tokens", 0)) - reasoning,
            "reasoning": reasoning,
        }
        return ProviderResponse(text or "", usage, price(usage, cfg.prices), doc.get("model", cfg.model), applied)


class MockProvider:
    """Returns canned responses in order (cycling), or computes them from the prompts."""

    def __init__(self, responses: Union[Sequence[str], Callable[[str, str], str]], name: str = "mock"):
        self.name = name
        self._responses = responses
        self._k = 0
        self.calls: list[tuple[str, str, dict]] = []

    def complete(self, system: str, user: str, params: Mapping[str, object]) -> ProviderResponse:
        self.calls.append((system, user, dict(params)))
        if callable(self._responses):
            text = self._responses(system, user)
        else:
            text = self._responses[self._k % len(self._responses)]
            self._k += 1
        return ProviderResponse(text, {"input": len(system.split()) + len(user.split()), "output": len(text.split()), "reasoning": 0}, 0.0, self.name)


class ReplayProvider:
    """Serves stored raw responses, keyed by requirement index, from ``<dir>/<i>.txt``."""

    def __init__(self, directory: Union[str, Path], name: str = "replay"):
        self.directory = Path(directory)
        self.name = name
        self.index: Optional[int] = None

    def complete(self, system: str, user: str, params: Mapping[str, object]) -> ProviderResponse:
        if self.index is None:
            raise ProviderError("replay provider needs a requirement index", "usage")
        p = self.directory / f"{self.index}.txt"
        if not p.is_file():
            raise ProviderError(f"no stored response {p}", "missing")
        return ProviderResponse(p.read_text(encoding="utf-8"), {}, None, self.name)
