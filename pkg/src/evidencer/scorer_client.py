"""Client side of the external scorer wire protocol.

JSON lines over the plugin's stdin/stdout:

* handshake: engine sends ``{"proto": "evidencer-scorer", "version": 1,
  "variant": "S+M"}``; the plugin replies ``{"ok": true, "name": ...}``.
* request: ``{"id", "motion", "sentence", "masked"}``, one per line; every
  field is always present regardless of the variant.
* response: ``{"id", "score"}`` with the same id, same order.
* shutdown: engine closes its write end; the plugin exits 0.

The channel is strictly serial: one request, one response. A reader thread
provides timeouts without platform-specific pipe tricks.
"""

from __future__ import annotations

import json
import queue
import subprocess
import threading
from typing import NamedTuple, Sequence

PROTO_NAME = "evidencer-scorer"
PROTO_VERSION = 1


class ScorerProtocolError(RuntimeError):
    """Protocol violation, timeout, or invalid score; names the offending
    request id when one exists."""


class ScoreRequest(NamedTuple):
    request_id: str
    motion: str
    sentence: str
    masked: str


class _LineReader:
    """Background reader so every receive can carry a timeout."""

    def __init__(self, stream):
        self._queue: queue.Queue = queue.Queue()
        self._thread = threading.Thread(target=self._pump, args=(stream,), daemon=True)
        self._thread.start()

    def _pump(self, stream):
        for line in stream:
            self._queue.put(line)
        self._queue.put(None)

    def readline(self, timeout: float) -> str | None:
        try:
            return self._queue.get(timeout=timeout)
        except queue.Empty:
            raise ScorerProtocolError(
                f"scorer did not respond within {timeout} seconds"
            ) from None


class ExternalScorerSession:
    def __init__(self, command: Sequence[str], variant: str, timeout: float = 30.0):
        self.command = list(command)
        self.variant = variant
        self.timeout = timeout
        self._proc: subprocess.Popen | None = None
        self._reader: _LineReader | None = None

    def __enter__(self) -> "ExternalScorerSession":
        self._proc = subprocess.Popen(
            self.command,
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            text=True,
            encoding="utf-8",
        )
        self._reader = _LineReader(self._proc.stdout)
        reply = self._exchange(
            {"proto": PROTO_NAME, "version": PROTO_VERSION, "variant": self.variant}
        )
        if reply.get("ok") is not True:
            raise ScorerProtocolError(f"scorer refused the handshake: {reply}")
        return self

    def _exchange(self, payload: dict) -> dict:
        assert self._proc is not None and self._proc.stdin is not None
        try:
            self._proc.stdin.write(json.dumps(payload) + "\n")
            self._proc.stdin.flush()
        except (BrokenPipeError, OSError) as exc:
            raise ScorerProtocolError(f"scorer process closed its input: {exc}") from exc
        line = self._reader.readline(self.timeout)
        if line is None:
            raise ScorerProtocolError("scorer closed its output mid-session")
        try:
            reply = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ScorerProtocolError(f"scorer sent invalid JSON: {line!r}") from exc
        if not isinstance(reply, dict):
            raise ScorerProtocolError(f"scorer reply is not an object: {line!r}")
        return reply

    def score(self, requests: Sequence[ScoreRequest]) -> list[float]:
        scores = []
        for req in requests:
            reply = self._exchange(
                {
                    "id": req.request_id,
                    "motion": req.motion,
                    "sentence": req.sentence,
                    "masked": req.masked,
                }
            )
            if "error" in reply:
                raise ScorerProtocolError(
                    f"scorer error for request {req.request_id}: {reply['error']}"
                )
            if reply.get("id") != req.request_id:
                raise ScorerProtocolError(
                    f"response id {reply.get('id')!r} does not match "
                    f"request {req.request_id!r}"
                )
            score = reply.get("score")
            if not isinstance(score, (int, float)) or isinstance(score, bool):
                raise ScorerProtocolError(
                    f"request {req.request_id}: score is not a number"
                )
            score = float(score)
            if not (0.0 <= score <= 1.0):
                raise ScorerProtocolError(
                    f"request {req.request_id}: score {score} outside [0, 1]"
                )
            scores.append(score)
        return scores

    def __exit__(self, *exc_info) -> None:
        if self._proc is None:
            return
        try:
            if self._proc.stdin is not None:
                self._proc.stdin.close()
            self._proc.wait(timeout=self.timeout)
        except subprocess.TimeoutExpired:
            self._proc.kill()
            self._proc.wait()
