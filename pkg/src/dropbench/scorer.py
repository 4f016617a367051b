"""Uniform scorer abstraction for the corruption loop.

The built-in scorer wraps a Graph directly.  The external scorer drives a
child process speaking newline-delimited JSON on stdin/stdout:

    -> {"hello": 1}
    <- {"class_count": C, "expects_m": M, "expects_t": T}
    -> {"id": 0, "batch": [[... M*T row-major ...], ...], "m": M, "t": T}
    <- {"id": 0, "scores": [[p0, p1, ...], ...]}

Requests are serialized behind a lock; responses must echo the request id.
"""

from __future__ import annotations

import json
import queue
import subprocess
import threading
from collections import deque
from typing import Optional, Sequence

import numpy as np

from .autodiff import Graph, forward_batch, softmax
from .errors import ConfigurationError, ScorerError

DEFAULT_TIMEOUT = 60.0
DEFAULT_BATCH = 64
_PROB_SUM_TOL = 1e-6


class InProcessScorer:
    """Scores through the built-in graph; bit-identical to predict_probabilities."""

    def __init__(self, graph: Graph, expects_t: Optional[int] = None):
        self.graph = graph
        self.expects_t = expects_t

    @property
    def capabilities(self) -> dict:
        return {
            "class_count": self.graph.class_count,
            "expects_m": self.graph.input_features,
            "expects_t": self.expects_t,
        }

    def score_batch(self, batch: np.ndarray) -> np.ndarray:
        logits, _ = forward_batch(self.graph, np.asarray(batch, dtype=np.float64))
        return softmax(logits)

    def close(self) -> None:
        pass

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


class ExternalScorer:
    """Child-process scorer over the line protocol.

    The handshake runs on construction.  Any protocol violation (timeout,
    process exit, malformed line, id mismatch, bad probabilities) raises
    ScorerError with the tail of the child's stderr for diagnostics.
    """

    def __init__(self, command: Sequence[str], timeout: float = DEFAULT_TIMEOUT,
                 batch_size: int = DEFAULT_BATCH):
        self.command = list(command)
        self.timeout = timeout
        self.batch_size = batch_size
        self._lock = threading.Lock()
        self._next_id = 0
        self._stderr_tail: deque[str] = deque(maxlen=50)
        try:
            self._proc = subprocess.Popen(
                self.command, stdin=subprocess.PIPE, stdout=subprocess.PIPE,
                stderr=subprocess.PIPE, text=True, bufsize=1)
        except OSError as exc:
            raise ScorerError(f"could not start scorer {self.command}: {exc}") from exc
        self._lines: queue.Queue = queue.Queue()
        threading.Thread(target=self._pump_stdout, daemon=True).start()
        threading.Thread(target=self._pump_stderr, daemon=True).start()
        self.capabilities = self._handshake()

    # -- plumbing ----------------------------------------------------------

    def _pump_stdout(self) -> None:
        try:
            for line in self._proc.stdout:
                self._lines.put(line)
        finally:
            self._lines.put(None)

    def _pump_stderr(self) -> None:
        for line in self._proc.stderr:
            self._stderr_tail.append(line.rstrip("\n"))

    def _diag(self) -> str:
        tail = "\n".join(self._stderr_tail)
        return f" (scorer stderr tail:\n{tail})" if tail else ""

    def _send(self, obj: dict) -> None:
        try:
            self._proc.stdin.write(json.dumps(obj) + "\n")
            self._proc.stdin.flush()
        except (BrokenPipeError, OSError) as exc:
            raise ScorerError(f"scorer process closed its stdin: {exc}{self._diag()}") from exc

    def _recv(self) -> dict:
        try:
            line = self._lines.get(timeout=self.timeout)
        except queue.Empty:
            raise ScorerError(
                f"scorer did not respond within {self.timeout}s{self._diag()}") from None
        if line is None:
            code = self._proc.poll()
            raise ScorerError(f"scorer process exited (code {code}){self._diag()}")
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ScorerError(f"malformed scorer line {line!r}: {exc}{self._diag()}") from exc
        if not isinstance(obj, dict):
            raise ScorerError(f"scorer line is not an object: {line!r}")
        return obj

    def _handshake(self) -> dict:
        self._send({"hello": 1})
        reply = self._recv()
        missing = [k for k in ("class_count", "expects_m", "expects_t") if k not in reply]
        if missing:
            raise ScorerError(f"handshake reply missing {missing}: {reply}")
        return {k: reply[k] for k in ("class_count", "expects_m", "expects_t")}

    # -- public API --------------------------------------------------------

    def validate_dims(self, m: int, t: int, class_count: Optional[int] = None) -> None:
        caps = self.capabilities
        if caps["expects_m"] not in (None, m):
            raise ConfigurationError(
                f"scorer expects {caps['expects_m']} features, dataset has {m}")
        if caps["expects_t"] not in (None, t):
            raise ConfigurationError(
                f"scorer expects series length {caps['expects_t']}, dataset has {t}")
        if class_count is not None and caps["class_count"] != class_count:
            raise ConfigurationError(
                f"scorer reports {caps['class_count']} classes, dataset has {class_count}")

    def score_batch(self, batch: np.ndarray) -> np.ndarray:
        arr = np.asarray(batch, dtype=np.float64)
        if arr.ndim != 3:
            raise ConfigurationError(f"expected [B, M, T] batch, got shape {arr.shape}")
        out = []
        with self._lock:
            for start in range(0, len(arr), self.batch_size):
                out.append(self._score_chunk(arr[start:start + self.batch_size]))
        return np.concatenate(out, axis=0)

    def _score_chunk(self, chunk: np.ndarray) -> np.ndarray:
        req_id = self._next_id
        self._next_id += 1
        b, m, t = chunk.shape
        self._send({"id": req_id, "batch": chunk.reshape(b, m * t).tolist(),
                    "m": m, "t": t})
        reply = self._recv()
        if "error" in reply:
            raise ScorerError(f"scorer returned an error: {reply['error']}{self._diag()}")
        if reply.get("id") != req_id:
            raise ScorerError(f"response id {reply.get('id')!r} != request id {req_id}")
        scores = reply.get("scores")
        if not isinstance(scores, list) or len(scores) != b:
            raise ScorerError(f"expected {b} score vectors, got {type(scores)}"
                              f" of length {len(scores) if isinstance(scores, list) else '?'}")
        arr = np.asarray(scores, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[1] != self.capabilities["class_count"]:
            raise ScorerError(f"score vectors have shape {arr.shape}, expected "
                              f"[{b}, {self.capabilities['class_count']}]")
        if not np.all(np.isfinite(arr)):
            raise ScorerError("scorer returned non-finite probabilities")
        sums = arr.sum(axis=1)
        if np.any(np.abs(sums - 1.0) > _PROB_SUM_TOL):
            worst = float(np.max(np.abs(sums - 1.0)))
            raise ScorerError(f"probability vectors do not sum to 1 (max dev {worst:.2e})")
        return arr

    def close(self) -> None:
        proc = getattr(self, "_proc", None)
        if proc is None:
            return
        try:
            if proc.stdin:
                proc.stdin.close()
            proc.wait(timeout=5)
        except Exception:
            proc.kill()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
