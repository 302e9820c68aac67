"""Line-protocol bridge to external solver processes.

One child process is started per model and kept alive for the whole run.
Each evaluation writes a single JSON line ``{"id": n, "inputs": [...]}``
to the child's stdin and expects exactly one JSON line
``{"id": n, "output": value}`` back, with the id echoed. Any deviation
(timeout, malformed line, wrong id, child exit) raises; the driver treats
that as fatal and aborts the run with partial results.
"""

from __future__ import annotations

import json
import os
import select
import subprocess
import time
from dataclasses import dataclass

import numpy as np

from ._validation import check_positive
from .errors import ModelEvaluationError, ProtocolError


@dataclass
class ExternalModelSpec:
    """Launch description of one external model."""

    command: list[str]
    input_indices: list[int] | None = None
    timeout: float = 30.0
    tau: float = 1.0
    name: str = ""

    def __post_init__(self):
        if not self.command or not all(isinstance(c, str) for c in self.command):
            raise ModelEvaluationError(
                "external model command must be a non-empty list of strings"
            )
        self.timeout = check_positive(self.timeout, "timeout")
        self.tau = check_positive(self.tau, "tau")


class ExternalModel:
    """Persistent child process speaking the one-line-per-evaluation protocol."""

    def __init__(self, spec: ExternalModelSpec):
        self.spec = spec
        self._next_id = 0
        self._buffer = bytearray()
        try:
            self._proc = subprocess.Popen(
                spec.command,
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                stderr=None,
            )
        except OSError as exc:
            raise ModelEvaluationError(
                f"could not start external model {spec.command}: {exc}"
            ) from exc

    # ----------------------------------------------------------- protocol

    def evaluate(self, x: np.ndarray) -> float:
        """Send one request line and parse the echoed reply."""
        request_id = self._next_id
        self._next_id += 1
        line = json.dumps(
            {"id": request_id, "inputs": [float(v) for v in np.atleast_1d(x)]}
        )
        try:
            self._proc.stdin.write((line + "\n").encode("utf-8"))
            self._proc.stdin.flush()
        except (BrokenPipeError, OSError) as exc:
            raise ModelEvaluationError(
                f"external model {self._label()} is gone "
                f"(exit code {self._proc.poll()})",
                point=np.asarray(x, dtype=float),
            ) from exc

        reply = self._read_line(self.spec.timeout, x)
        try:
            payload = json.loads(reply)
        except json.JSONDecodeError as exc:
            raise ProtocolError(
                f"external model {self._label()} sent a malformed reply: "
                f"{reply[:200]!r}",
                point=np.asarray(x, dtype=float),
            ) from exc
        if not isinstance(payload, dict) or payload.get("id") != request_id:
            raise ProtocolError(
                f"external model {self._label()} echoed id "
                f"{payload.get('id') if isinstance(payload, dict) else None!r}, "
                f"expected {request_id}",
                point=np.asarray(x, dtype=float),
            )
        output = payload.get("output")
        if isinstance(output, bool) or not isinstance(output, (int, float)):
            raise ProtocolError(
                f"external model {self._label()} returned a non-numeric "
                f"output: {output!r}",
                point=np.asarray(x, dtype=float),
            )
        return float(output)

    def _read_line(self, timeout: float, x) -> str:
        fd = self._proc.stdout.fileno()
        deadline = time.monotonic() + timeout
        while True:
            newline = self._buffer.find(b"\n")
            if newline >= 0:
                line = self._buffer[:newline].decode("utf-8", errors="replace")
                del self._buffer[: newline + 1]
                return line
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                raise ModelEvaluationError(
                    f"external model {self._label()} timed out after "
                    f"{timeout:g}s",
                    point=np.asarray(x, dtype=float),
                )
            ready, _, _ = select.select([fd], [], [], remaining)
            if not ready:
                continue
            chunk = os.read(fd, 65536)
            if not chunk:
                raise ModelEvaluationError(
                    f"external model {self._label()} closed its output "
                    f"(exit code {self._proc.poll()})",
                    point=np.asarray(x, dtype=float),
                )
            self._buffer.extend(chunk)

    # ---------------------------------------------------------- lifecycle

    def close(self) -> None:
        if self._proc.poll() is None:
            try:
                self._proc.stdin.close()
            except OSError:
                pass
            try:
                self._proc.wait(timeout=2.0)
            except subprocess.TimeoutExpired:
                self._proc.kill()
                self._proc.wait()

    def __enter__(self) -> "ExternalModel":
        return self

    def __exit__(self, *exc_info) -> None:
        self.close()

    def _label(self) -> str:
        return self.spec.name or self.spec.command[0]
