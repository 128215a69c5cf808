"""Client for OpenAI-compatible chat-completions endpoints."""

from __future__ import annotations

import json
import logging
import os
import random
import threading
import time
from dataclasses import dataclass, fields
from typing import Callable, NamedTuple

import requests

log = logging.getLogger(__name__)

FAITHFUL, HALLUCINATED = "faithful", "hallucinated"

JUDGE_PROMPT = (
    "You will be given a document and a summary. Your task is to determine whether the summary "
    "is faithful or unfaithful to the information provided in the document. If the summary "
    "contains any statements that contradict the information given in the document, or if it "
    "includes information not present or implied by the document, reply 'unfaithful'. "
    "Otherwise, reply 'faithful'."
)

RETRYABLE_STATUS = {429, 500, 502, 503, 504}


class LLMError(RuntimeError):
    pass


class TransportError(LLMError):
    """Retries exhausted on timeouts, connection failures, 429 or 5xx."""


class HTTPStatusError(LLMError):
    """Non-retryable HTTP status."""

    def __init__(self, status: int, body: str):
        super().__init__(f"HTTP {status}: {body[:500]}")
        self.status = status
        self.body = body


class ProtocolError(LLMError):
    """Response was not a well-formed chat completion."""


class UnparseableVerdict(LLMError):
    def __init__(self, reply: str):
        super().__init__(f"judge reply contains neither 'faithful' nor 'unfaithful': {reply[:200]!r}")
        self.reply = reply


@dataclass
class ClientConfig:
    base_url: str = "https://api.openai.com"
    model: str = "gpt-4o-mini"
    temperature: float = 0.0
    injection_temperature: float = 0.7
    timeout: float = 60.0
    max_retries: int = 4
    max_in_flight: int = 4
    api_key_env: str = "OPENAI_API_KEY"
    backoff_base: float = 1.0
    backoff_factor: float = 2.0
    judge_max_tokens: int = 100_000

    def __post_init__(self):
        if self.timeout <= 0:
            raise ValueError("timeout must be positive")
        if self.max_retries < 0:
            raise ValueError("max_retries must be non-negative")
        if self.max_in_flight < 1:
            raise ValueError("max_in_flight must be at least 1")

    @classmethod
    def from_dict(cls, d: dict) -> "ClientConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown client config keys {sorted(unknown)}")
        return cls(**d)

    @property
    def url(self) -> str:
        return self.base_url.rstrip("/") + "/v1/chat/completions"


class Verdict(NamedTuple):
    label: str
    reply: str
    truncated: bool


def parse_verdict(reply: str) -> str:
    low = reply.lower()
    if "unfaithful" in low:
        return HALLUCINATED
    if "faithful" in low:
        return FAITHFUL
    raise UnparseableVerdict(reply)


def _redact(headers: dict) -> dict:
    return {k: ("Bearer ***" if k.lower() == "authorization" else v) for k, v in headers.items()}


class LLMClient:
    """Thread-safe; at most ``max_in_flight`` requests are outstanding at once."""

    def __init__(
        self,
        cfg: ClientConfig,
        session: requests.Session | None = None,
        sleep: Callable[[float], None] = time.sleep,
        temperature: float | None = None,
    ):
        self.cfg = cfg
        self.session = session or requests.Session()
        self.sleep = sleep
        self.temperature = cfg.temperature if temperature is None else temperature
        self._slots = threading.BoundedSemaphore(cfg.max_in_flight)

    def _headers(self) -> dict:
        key = os.environ.get(self.cfg.api_key_env)
        if not key:
            raise LLMError(f"environment variable {self.cfg.api_key_env} is not set")
        return {"Authorization": f"Bearer {key}", "Content-Type": "application/json"}

    def chat(self, system: str, user: str) -> str:
        body = {
            "model": self.cfg.model,
            "messages": [{"role": "system", "content": system}, {"role": "user", "content": user}],
            "temperature": self.temperature,
        }
        headers = self._headers()
        log.debug("POST %s headers=%s body=%s", self.cfg.url, _redact(headers), json.dumps(body)[:2000])
        last = None
        with self._slots:
            for attempt in range(self.cfg.max_retries + 1):
                if attempt:
                    delay = self.cfg.backoff_base * self.cfg.backoff_factor ** (attempt - 1)
                    self.sleep(delay * (1.0 + 0.1 * random.random()))
                try:
                    resp = self.session.post(self.cfg.url, json=body, headers=headers, timeout=self.cfg.timeout)
                except (requests.Timeout, requests.ConnectionError) as err:
                    last = f"{type(err).__name__}: {err}"
                    log.debug("attempt %d failed: %s", attempt, last)
                    continue
                if resp.status_code in RETRYABLE_STATUS:
                    last = f"HTTP {resp.status_code}"
                    log.debug("attempt %d got %s", attempt, last)
                    continue
                if resp.status_code >= 400:
                    raise HTTPStatusError(resp.status_code, resp.text)
                return _extract_content(resp)
        raise TransportError(f"gave up after {self.cfg.max_retries + 1} attempts: {last}")

    def judge(self, context: str, response: str) -> Verdict:
        words = context.split()
        truncated = len(words) > self.cfg.judge_max_tokens
        if truncated:
            context = " ".join(words[: self.cfg.judge_max_tokens])
        user = f"Document:\n{context}\n\nSummary:\n{response}"
        reply = self.chat(JUDGE_PROMPT, user)
        return Verdict(parse_verdict(reply), reply, truncated)


def _extract_content(resp: requests.Response) -> str:
    try:
        content = resp.json()["choices"][0]["message"]["content"]
    except (ValueError, KeyError, IndexError, TypeError) as err:
        raise ProtocolError(f"malformed chat completion: {resp.text[:200]!r}") from err
    if not isinstance(content, str) or not content.strip():
        raise ProtocolError("empty reply")
    return content


def chat(cfg: ClientConfig, system: str, user: str) -> str:
    return LLMClient(cfg).chat(system, user)


def judge(cfg: ClientConfig, context: str, response: str) -> Verdict:
    return LLMClient(cfg).judge(context, response)
