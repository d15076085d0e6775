"""Chat-completion HTTP client for remote opponents and policies.

Request: POST {"model": ..., "messages": [{"role": ..., "content": ...}]}
Response: text at choices[0].message.content
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field

import httpx
import numpy as np

from gamenest import spy
from gamenest import tictactoe as ttt
from gamenest.compose import OpponentFailure, PolicyAction, TurnRequest

log = logging.getLogger(__name__)


class RemoteError(OpponentFailure):
    pass


class RemoteTimeout(RemoteError):
    pass


class RemoteHTTPError(RemoteError):
    def __init__(self, status: int, body: str):
        super().__init__(f"HTTP {status}: {body[:200]}")
        self.status = status


class RemoteProtocolError(RemoteError):
    pass


def encode_request(model: str, messages) -> bytes:
    payload = {"model": model, "messages": [{"role": m["role"], "content": m["content"]} for m in messages]}
    return json.dumps(payload, ensure_ascii=False, separators=(",", ":")).encode("utf-8")


def decode_response(body: bytes | str) -> str:
    try:
        data = json.loads(body)
        content = data["choices"][0]["message"]["content"]
    except (ValueError, KeyError, IndexError, TypeError) as exc:
        raise RemoteProtocolError(f"malformed chat-completion response: {exc!r}") from exc
    if not isinstance(content, str):
        raise RemoteProtocolError("choices[0].message.content is not a string")
    return content


def _retryable(status: int) -> bool:
    return status == 429 or status >= 500


@dataclass
class RemoteAgentClient:
    endpoint: str
    model: str
    timeout: float = 30.0
    retries: int = 3
    backoff: float = 0.5
    transport: httpx.BaseTransport | None = None
    exchanges: list[dict] = field(default_factory=list)

    def chat(self, messages) -> str:
        body = encode_request(self.model, messages)
        last: RemoteError | None = None
        for attempt in range(self.retries + 1):
            if attempt:
                time.sleep(self.backoff * 2 ** (attempt - 1))
            entry = {"attempt": attempt + 1, "request": body.decode("utf-8")}
            self.exchanges.append(entry)
            try:
                with httpx.Client(timeout=self.timeout, transport=self.transport) as client:
                    resp = client.post(self.endpoint, content=body, headers={"Content-Type": "application/json"})
            except httpx.TimeoutException as exc:
                entry["error"] = "timeout"
                last = RemoteTimeout(f"{self.endpoint} timed out after {self.timeout}s")
                log.info("remote attempt %d timed out", attempt + 1)
                continue
            except httpx.HTTPError as exc:
                entry["error"] = repr(exc)
                last = RemoteError(f"{self.endpoint}: {exc}")
                continue
            entry["status"] = resp.status_code
            entry["response"] = resp.text
            log.debug("remote attempt %d -> %d", attempt + 1, resp.status_code)
            if 200 <= resp.status_code < 300:
                return decode_response(resp.content)
            last = RemoteHTTPError(resp.status_code, resp.text)
            if not _retryable(resp.status_code):
                break
        assert last is not None
        raise last


def remote_agent_act(endpoint: str, model: str, messages, timeout: float = 30.0, retries: int = 3,
                     backoff: float = 0.5, transport: httpx.BaseTransport | None = None,
                     exchanges: list | None = None) -> str:
    client = RemoteAgentClient(endpoint, model, timeout, retries, backoff, transport)
    if exchanges is not None:
        client.exchanges = exchanges
    return client.chat(messages)


def client_from_spec(spec) -> RemoteAgentClient:
    return RemoteAgentClient(spec.endpoint, spec.model, spec.timeout, spec.retries, spec.backoff)


class RemotePolicy:
    """Trained-side policy answered by a remote model; free text, no log-probs."""

    def __init__(self, client: RemoteAgentClient):
        self.client = client

    def act(self, request: TurnRequest, rng: np.random.Generator) -> PolicyAction:
        return PolicyAction(self.client.chat(list(request.messages)))


class RemoteTicTacToeOpponent:
    name = "remote"

    def __init__(self, client: RemoteAgentClient, template_id: int = 0):
        self.client = client
        self.template_id = template_id

    def move(self, b: ttt.Board, rng: np.random.Generator) -> int:
        prompt = ttt.render_board_prompt(b, self.template_id, True, b.to_move)
        text = self.client.chat([{"role": "user", "content": prompt}])
        cell = ttt.parse_cell(text)
        if cell is None or cell not in ttt.legal_moves(b):
            raise OpponentFailure(f"remote tictactoe opponent gave illegal move {text!r}")
        return cell


class RemoteSpyAgent:
    def __init__(self, client: RemoteAgentClient, template_id: int = 0):
        self.client = client
        self.template_id = template_id

    def describe(self, view: spy.SpyView) -> str:
        prompt = spy.render_view_prompt(view, self.template_id, True)
        return self.client.chat([{"role": "user", "content": prompt}]).strip()

    def vote(self, view: spy.SpyView) -> int:
        prompt = spy.render_view_prompt(view, self.template_id, False)
        text = self.client.chat([{"role": "user", "content": prompt}])
        target = spy.parse_vote(text, view.player)
        if target is None:
            raise OpponentFailure(f"remote spy agent gave no valid vote: {text!r}")
        return target
