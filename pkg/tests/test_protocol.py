import io
import json
import sys
import threading

import pytest

from frosthpo.harness.protocol import (PROTOCOL_VERSION, WireClient,
                                       handle_request, hello_message, serve,
                                       wire_backend)
from frosthpo.fidelity import HyperparamConfig
from frosthpo.records import CostRecord, EvalRecord

AXES = ("layers", "data_fraction")


def ok_handler(config, fidelity, seed, budget):
    return EvalRecord(config_id=int(config.get("id", -1)),
                      fidelity=dict(fidelity), seed=seed,
                      objective=float(fidelity.get("layers", 1)),
                      cost=CostRecord(flops=100, peak_bytes=10, wall_ms=2.0))


def _req(msg_id=0, **over):
    req = {"msg_id": msg_id, "config": {"id": 1, "values": {}},
           "fidelity": {"layers": 2, "data_fraction": 1.0}, "seed": 5,
           "budget": {"steps": 4, "batch_size": 2}}
    req.update(over)
    return json.dumps(req)


def test_valid_request_round_trip():
    resp = handle_request(_req(), ok_handler, AXES)
    assert resp["msg_id"] == 0
    assert resp["objective"] == 2.0
    assert resp["diverged"] is False
    assert resp["cost"]["flops"] == 100


def test_malformed_json_is_error_response_not_crash():
    resp = handle_request("{nope", ok_handler, AXES)
    assert resp["msg_id"] is None
    assert "malformed" in resp["error"]


def test_missing_fields_reported():
    resp = handle_request(json.dumps({"msg_id": 3}), ok_handler, AXES)
    assert resp["msg_id"] == 3
    assert "missing fields" in resp["error"]


def test_unsupported_axis_refused():
    resp = handle_request(_req(fidelity={"epochs": 3}), ok_handler, AXES)
    assert resp["error"] == "unsupported axis: epochs"


def test_version_mismatch_refused():
    resp = handle_request(_req(protocol=99), ok_handler, AXES)
    assert "version mismatch" in resp["error"]


def test_handler_exception_becomes_error_response():
    def bad_handler(*a):
        raise ValueError("boom")

    resp = handle_request(_req(msg_id=9), bad_handler, AXES)
    assert resp["msg_id"] == 9
    assert "boom" in resp["error"]


def test_serve_hello_then_responses():
    stdin = io.StringIO(_req(msg_id=1) + "\n" + "{garbage\n" + _req(msg_id=2) + "\n")
    stdout = io.StringIO()
    served = serve(ok_handler, AXES, backend="test", stdin=stdin, stdout=stdout)
    lines = stdout.getvalue().splitlines()
    hello = json.loads(lines[0])
    assert hello["type"] == "hello"
    assert hello["protocol"] == PROTOCOL_VERSION
    assert hello["axes"] == list(AXES)
    assert served == 3
    ids = [json.loads(l).get("msg_id") for l in lines[1:]]
    assert ids == [1, None, 2]


WORKER_SCRIPT = r"""
import json, sys
sys.path.insert(0, {src!r})
from frosthpo.harness.protocol import serve
from frosthpo.records import CostRecord, EvalRecord

def handler(config, fidelity, seed, budget):
    return EvalRecord(config_id=int(config.get("id", -1)), fidelity=dict(fidelity),
                      seed=seed, objective=float(config["values"]["x"]) + fidelity["layers"],
                      cost=CostRecord(flops=7, peak_bytes=3, wall_ms=0.5))

serve(handler, ("layers", "data_fraction"), backend="script", stdin=sys.stdin,
      stdout=sys.stdout)
"""


@pytest.fixture
def worker_cmd(tmp_path):
    import frosthpo
    src = str(next(iter(frosthpo.__path__)) + "/..")
    script = tmp_path / "worker.py"
    script.write_text(WORKER_SCRIPT.format(src=src))
    return [sys.executable, str(script)]


def test_wire_client_round_trip(worker_cmd):
    with WireClient(worker_cmd) as client:
        assert client.info.protocol == PROTOCOL_VERSION
        assert client.info.axes == AXES
        resp = client.request({"id": 4, "values": {"x": 10}}, {"layers": 2}, 0,
                              {"steps": 1, "batch_size": 1})
        assert resp["objective"] == 12.0


def test_wire_client_concurrent_requests_correlate(worker_cmd):
    with WireClient(worker_cmd) as client:
        results = {}

        def one(i):
            resp = client.request({"id": i, "values": {"x": i}}, {"layers": 1}, 0,
                                  {"steps": 1, "batch_size": 1})
            results[i] = resp["objective"]

        threads = [threading.Thread(target=one, args=(i,)) for i in range(6)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        assert results == {i: float(i + 1) for i in range(6)}


def test_wire_backend_maps_errors_to_exceptions(worker_cmd):
    with WireClient(worker_cmd) as client:
        backend = wire_backend(client, {"steps": 1, "batch_size": 1})
        config = HyperparamConfig(id=0, values={"x": 1})
        rec = backend(config, {"layers": 1.0}, 0)
        assert rec.objective == 2.0
        with pytest.raises(Exception, match="axis"):
            backend(config, {"epochs": 1.0}, 0)


def test_hello_message_shape():
    msg = hello_message("micro", AXES)
    assert msg["type"] == "hello"
    assert msg["protocol"] == PROTOCOL_VERSION
