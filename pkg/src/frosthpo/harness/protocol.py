"""Evaluation-worker wire protocol: newline-delimited JSON over std streams.

The worker announces itself first (protocol version + the fidelity axes it
honors); each subsequent line is one request. Responses correlate by
``msg_id`` and may arrive in any order. Anything malformed produces an error
response, never a crash.
"""

from __future__ import annotations

import json
import subprocess
import threading
from dataclasses import dataclass
from typing import Any, Callable, IO, Mapping, Sequence

from ..records import DIVERGED_OBJECTIVE, CostRecord, EvalRecord

PROTOCOL_VERSION = 1

REQUIRED_FIELDS = ("msg_id", "config", "fidelity", "seed", "budget")

# handler(config values, fidelity, seed, budget) -> EvalRecord
Handler = Callable[[Mapping[str, Any], Mapping[str, float], int, Mapping[str, Any]],
                   EvalRecord]


def hello_message(backend: str, axes: Sequence[str]) -> dict[str, Any]:
    return {"type": "hello", "protocol": PROTOCOL_VERSION, "backend": backend,
            "axes": list(axes)}


def _error(msg_id: Any, message: str) -> dict[str, Any]:
    return {"msg_id": msg_id, "error": message}


def handle_request(line: str, handler: Handler,
                   axes: Sequence[str]) -> dict[str, Any]:
    """One request line to one response object."""
    try:
        req = json.loads(line)
    except ValueError as exc:
        return _error(None, f"malformed JSON: {exc}")
    if not isinstance(req, dict):
        return _error(None, "request must be a JSON object")
    msg_id = req.get("msg_id")
    if "protocol" in req and req["protocol"] != PROTOCOL_VERSION:
        return _error(msg_id,
                      f"protocol version mismatch: worker speaks {PROTOCOL_VERSION}, "
                      f"request declares {req['protocol']}")
    missing = [f for f in REQUIRED_FIELDS if f not in req]
    if missing:
        return _error(msg_id, f"missing fields: {', '.join(missing)}")
    for axis in req["fidelity"]:
        if axis not in axes:
            return _error(msg_id, f"unsupported axis: {axis}")
    try:
        record = handler(req["config"], req["fidelity"], int(req["seed"]),
                         req["budget"])
    except Exception as exc:
        return _error(msg_id, f"{type(exc).__name__}: {exc}")
    return {
        "msg_id": msg_id,
        "objective": None if record.diverged else record.objective,
        "diverged": record.diverged,
        "cost": {"flops": record.cost.flops, "peak_bytes": record.cost.peak_bytes,
                 "wall_ms": record.cost.wall_ms},
    }


def serve(handler: Handler, axes: Sequence[str], backend: str,
          stdin: IO[str], stdout: IO[str]) -> int:
    """Worker side: hello, then request/response until EOF."""
    stdout.write(json.dumps(hello_message(backend, axes)) + "\n")
    stdout.flush()
    served = 0
    for line in stdin:
        line = line.strip()
        if not line:
            continue
        resp = handle_request(line, handler, axes)
        stdout.write(json.dumps(resp, allow_nan=False) + "\n")
        stdout.flush()
        served += 1
    return served


class ProtocolError(RuntimeError):
    pass


@dataclass
class WorkerInfo:
    backend: str
    protocol: int
    axes: tuple[str, ...]


class WireClient:
    """Client side: spawns a worker subprocess and correlates responses."""

    def __init__(self, cmd: Sequence[str], timeout: float = 120.0):
        self.proc = subprocess.Popen(
            list(cmd), stdin=subprocess.PIPE, stdout=subprocess.PIPE,
            text=True, bufsize=1)
        self.timeout = timeout
        self._lock = threading.Lock()
        self._pending: dict[Any, dict[str, Any]] = {}
        self._events: dict[Any, threading.Event] = {}
        self._next_id = 0
        self._reader_error: str | None = None
        hello_line = self.proc.stdout.readline()
        try:
            hello = json.loads(hello_line)
        except ValueError:
            self.close()
            raise ProtocolError(f"worker sent no valid hello: {hello_line!r}")
        if hello.get("type") != "hello":
            self.close()
            raise ProtocolError(f"expected hello, got {hello!r}")
        if hello.get("protocol") != PROTOCOL_VERSION:
            self.close()
            raise ProtocolError(
                f"refusing worker: it speaks protocol {hello.get('protocol')}, "
                f"this client requires {PROTOCOL_VERSION}")
        self.info = WorkerInfo(backend=hello.get("backend", "?"),
                               protocol=hello["protocol"],
                               axes=tuple(hello.get("axes", ())))
        self._reader = threading.Thread(target=self._read_loop, daemon=True)
        self._reader.start()

    def _read_loop(self) -> None:
        for line in self.proc.stdout:
            try:
                resp = json.loads(line)
            except ValueError:
                self._reader_error = f"unparseable worker line: {line!r}"
                continue
            msg_id = resp.get("msg_id")
            with self._lock:
                self._pending[msg_id] = resp
                ev = self._events.get(msg_id)
            if ev is not None:
                ev.set()

    def request(self, config: Mapping[str, Any], fidelity: Mapping[str, float],
                seed: int, budget: Mapping[str, Any]) -> dict[str, Any]:
        for axis in fidelity:
            if axis not in self.info.axes:
                raise ProtocolError(
                    f"worker does not honor axis {axis!r} (declared {self.info.axes})")
        with self._lock:
            msg_id = self._next_id
            self._next_id += 1
            ev = threading.Event()
            self._events[msg_id] = ev
            req = {"msg_id": msg_id, "protocol": PROTOCOL_VERSION,
                   "config": dict(config), "fidelity": dict(fidelity),
                   "seed": int(seed), "budget": dict(budget)}
            self.proc.stdin.write(json.dumps(req, allow_nan=False) + "\n")
            self.proc.stdin.flush()
        if not ev.wait(self.timeout):
            raise ProtocolError(f"worker did not answer msg_id={msg_id} in time")
        with self._lock:
            del self._events[msg_id]
            return self._pending.pop(msg_id)

    def close(self) -> None:
        try:
            if self.proc.stdin:
                self.proc.stdin.close()
            self.proc.wait(timeout=10)
        except Exception:
            self.proc.kill()

    def __enter__(self) -> "WireClient":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def wire_backend(client: WireClient, budget: Mapping[str, Any]):
    """Adapt a wire client to the scheduler's backend callable.

    Error responses surface as exceptions; run_sh maps them to the diverged
    sentinel.
    """
    def backend(config, fidelity, seed) -> EvalRecord:
        resp = client.request(config.to_json(), fidelity, seed, budget)
        if "error" in resp:
            raise ProtocolError(resp["error"])
        diverged = bool(resp["diverged"])
        cost = resp.get("cost", {})
        return EvalRecord(
            config_id=config.id, fidelity=dict(fidelity), seed=seed,
            objective=DIVERGED_OBJECTIVE if diverged else float(resp["objective"]),
            cost=CostRecord(flops=int(cost.get("flops", 0)),
                            peak_bytes=int(cost.get("peak_bytes", 0)),
                            wall_ms=float(cost.get("wall_ms", 0.0))),
            diverged=diverged,
        )

    return backend
