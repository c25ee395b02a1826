from .config import ConfigError, RunConfig
from .store import ResultStore, read_store
from .protocol import PROTOCOL_VERSION, WireClient, serve, wire_backend
from .backends import micro_backend, worker_handler
from .replay import ReplayError, ReplayTrace, replay_trace

__all__ = [
    "ConfigError", "RunConfig", "ResultStore", "read_store",
    "PROTOCOL_VERSION", "WireClient", "serve", "wire_backend",
    "micro_backend", "worker_handler", "ReplayError", "ReplayTrace",
    "replay_trace",
]
