"""Append-only JSON-lines result store with resume support.

One record per line keeps appends crash-safe and replay trivial: a truncated
trailing line (killed writer) is dropped on resume, and everything else
replays byte-for-byte.
"""

from __future__ import annotations

import json
import threading
import time
from pathlib import Path
from typing import Any, Iterator

RECORD_KINDS = ("eval", "rung", "wave", "report", "measure", "meta")


class StoreError(RuntimeError):
    pass


def eval_key(payload: dict[str, Any]) -> tuple:
    """Resume identity of an evaluation: (config, fidelity, seed)."""
    return (
        int(payload["config_id"]),
        tuple(sorted(payload["fidelity"].items())),
        int(payload["seed"]),
    )


class ResultStore:
    """Writer/reader over ``<directory>/store.jsonl``."""

    FILENAME = "store.jsonl"

    def __init__(self, directory: str | Path, resume: bool = False):
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)
        self.path = self.directory / self.FILENAME
        self._lock = threading.Lock()
        self._records: list[dict[str, Any]] = []
        if self.path.exists():
            if not resume:
                raise StoreError(
                    f"{self.path} already exists; pass resume=True to continue")
            self._load_and_repair()
        self._fh = open(self.path, "a", encoding="utf-8")

    def _load_and_repair(self) -> None:
        raw = self.path.read_bytes()
        good_end = 0
        for line in raw.split(b"\n"):
            if not line:
                good_end += 1
                continue
            try:
                rec = json.loads(line)
                if not isinstance(rec, dict) or "id" not in rec:
                    raise ValueError("not a store record")
            except ValueError:
                break  # truncated or foreign tail: drop it
            self._records.append(rec)
            good_end += len(line) + 1
        good_end = min(good_end, len(raw))
        if good_end < len(raw):
            with open(self.path, "r+b") as fh:
                fh.truncate(good_end)

    @property
    def next_id(self) -> int:
        return self._records[-1]["id"] + 1 if self._records else 0

    def append(self, kind: str, payload: dict[str, Any]) -> int:
        if kind not in RECORD_KINDS:
            raise StoreError(f"unknown record kind {kind!r}")
        with self._lock:
            rec = {"id": self.next_id, "ts": time.time(), "kind": kind,
                   "payload": payload}
            line = json.dumps(rec, sort_keys=True, allow_nan=False)
            self._fh.write(line + "\n")
            self._fh.flush()
            self._records.append(rec)
            return rec["id"]

    def records(self, kind: str | None = None) -> Iterator[dict[str, Any]]:
        for rec in self._records:
            if kind is None or rec["kind"] == kind:
                yield rec

    def payloads(self, kind: str) -> list[dict[str, Any]]:
        return [r["payload"] for r in self.records(kind)]

    def completed_evals(self) -> set[tuple]:
        return {eval_key(p) for p in self.payloads("eval")}

    def close(self) -> None:
        self._fh.close()

    def __enter__(self) -> "ResultStore":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def read_store(directory: str | Path) -> list[dict[str, Any]]:
    """Read-only load, skipping a truncated trailing line if present."""
    path = Path(directory) / ResultStore.FILENAME
    if not path.exists():
        raise StoreError(f"no store at {path}")
    out = []
    for line in path.read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        try:
            out.append(json.loads(line))
        except ValueError:
            break
    return out
