import json
import os
import signal
import subprocess
import sys
import time
from pathlib import Path

import pytest

from frosthpo.harness.cli import main
from frosthpo.harness.store import ResultStore, read_store

TINY = {
    "task": {"name": "spiral", "generator_seed": 5, "n_train": 1024, "n_val": 128,
             "input_dim": 2, "target_dim": 2, "noise": 0.05},
    "architecture": {"dims": [2, 8, 8, 2], "activation": "relu"},
    "search_space": {"learning_rate": [0.001, 0.01], "optimizer": ["adam", "sgd"]},
    "fidelity": {"axes": [
        {"name": "layers", "kind": "integer", "min": 1, "max": 3, "count": 3},
        {"name": "data_fraction", "kind": "rational", "levels": [0.5, 1.0]},
    ]},
    "sh": {"eta": 2, "mode": "single_axis", "n_configs": 4},
    "budget": {"steps": 32, "batch_size": 32},
    "seeds": [0, 1],
}


@pytest.fixture
def tiny_config(tmp_path):
    path = tmp_path / "config.json"
    path.write_text(json.dumps(TINY))
    return str(path)


def _strip_ts(lines):
    out = []
    for line in lines:
        rec = json.loads(line)
        rec.pop("ts")
        out.append(json.dumps(rec, sort_keys=True))
    return out


def test_sweep_writes_all_records(tiny_config, tmp_path):
    store = tmp_path / "out"
    assert main(["sweep", "--config", tiny_config, "--store", str(store)]) == 0
    evals = [r for r in read_store(store) if r["kind"] == "eval"]
    assert len(evals) == 4 * 3 * 2 * 2  # configs x layers x data x seeds


def test_sweep_resume_is_idempotent(tiny_config, tmp_path):
    a = tmp_path / "a"
    main(["sweep", "--config", tiny_config, "--store", str(a)])
    before = (a / ResultStore.FILENAME).read_text()
    assert main(["sweep", "--config", tiny_config, "--store", str(a),
                 "--resume"]) == 0
    assert (a / ResultStore.FILENAME).read_text() == before


def test_sweep_halted_then_resumed_matches_uninterrupted(tiny_config, tmp_path):
    full = tmp_path / "full"
    half = tmp_path / "half"
    main(["sweep", "--config", tiny_config, "--store", str(full)])
    main(["sweep", "--config", tiny_config, "--store", str(half),
          "--halt-after", "17"])
    assert len(read_store(half)) == 17
    main(["sweep", "--config", tiny_config, "--store", str(half), "--resume"])
    a = _strip_ts((full / ResultStore.FILENAME).read_text().splitlines())
    b = _strip_ts((half / ResultStore.FILENAME).read_text().splitlines())
    assert a == b


def test_sweep_killed_midway_resumes_byte_equivalent(tiny_config, tmp_path):
    full = tmp_path / "full"
    killed = tmp_path / "killed"
    main(["sweep", "--config", tiny_config, "--store", str(full)])

    env = dict(os.environ, PYTHONPATH=str(Path(__file__).parent.parent / "src"))
    proc = subprocess.Popen(
        [sys.executable, "-m", "frosthpo.harness.cli", "sweep", "--config",
         tiny_config, "--store", str(killed)],
        env=env, stderr=subprocess.DEVNULL)
    store_file = killed / ResultStore.FILENAME
    deadline = time.time() + 60
    while time.time() < deadline:
        if store_file.exists() and store_file.stat().st_size > 400:
            break
        time.sleep(0.01)
    proc.send_signal(signal.SIGKILL)
    proc.wait()
    assert store_file.exists(), "worker never wrote a record before the kill"

    assert main(["sweep", "--config", tiny_config, "--store", str(killed),
                 "--resume"]) == 0
    a = _strip_ts((full / ResultStore.FILENAME).read_text().splitlines())
    b = _strip_ts((killed / ResultStore.FILENAME).read_text().splitlines())
    assert a == b


def test_sh_single_axis_runs_and_reports_winner(tiny_config, tmp_path, capsys):
    rc = main(["sh", "--config", tiny_config, "--store", str(tmp_path / "sh"),
               "--mode", "single_axis"])
    assert rc == 0
    out = json.loads(capsys.readouterr().out)
    assert out["winner"] is not None
    assert out["rung_sizes"][0] == 4


def test_sh_diagonal_mismatched_rungs_exits_2(tiny_config, tmp_path):
    rc = main(["sh", "--config", tiny_config, "--store", str(tmp_path / "sh"),
               "--mode", "diagonal", "--eta", "2"])
    assert rc == 2  # 3 layer levels vs 2 data levels


def test_sh_store_replays_to_identical_survivors(tiny_config, tmp_path):
    store = tmp_path / "sh"
    main(["sh", "--config", tiny_config, "--store", str(store),
          "--mode", "single_axis"])
    from frosthpo.harness.replay import replay_trace
    trace = replay_trace(read_store(store))  # verify=True recomputes promotion
    assert trace.winner is not None


def test_validate_fidelity_passes_on_tiny_benchmark(tiny_config, tmp_path, capsys):
    rc = main(["validate-fidelity", "--config", tiny_config, "--store",
               str(tmp_path / "sweep")])
    report = json.loads(capsys.readouterr().out)
    assert report["cost_monotonicity"]["all_pass"]
    assert report["measured_equals_estimated_flops"]
    assert (tmp_path / "sweep" / "validation.json").exists()
    assert rc in (0, 1)  # rank curve may be noisy at this tiny scale


def test_missing_config_exits_2(tmp_path):
    assert main(["sweep", "--config", str(tmp_path / "nope.json"),
                 "--store", str(tmp_path / "s")]) == 2


def test_invalid_config_rejected_with_unknown_keys(tmp_path):
    bad = dict(TINY, extra_key=1)
    path = tmp_path / "bad.json"
    path.write_text(json.dumps(bad))
    assert main(["sweep", "--config", str(path), "--store", str(tmp_path / "s")]) == 2


def test_measure_table(tiny_config, tmp_path, capsys):
    rc = main(["measure", "--config", tiny_config, "--store",
               str(tmp_path / "m"), "--warmup", "1", "--reps", "2"])
    assert rc == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert len(lines) == 1 + 3  # header + one row per fidelity level
    assert "MISMATCH" not in "".join(lines)


def test_report_exports_files(tiny_config, tmp_path):
    sweep = tmp_path / "sweep"
    sh_store = tmp_path / "sh"
    main(["sweep", "--config", tiny_config, "--store", str(sweep)])
    main(["sh", "--config", tiny_config, "--store", str(sh_store),
          "--mode", "single_axis"])
    out = tmp_path / "report"
    rc = main(["report", "--config", tiny_config, "--sweep", str(sweep),
               "--trace", f"single={sh_store}", "--out", str(out)])
    assert rc == 0
    assert (out / "schedule_comparison.csv").exists()
    assert (out / "landscape_joint.csv").exists()
    assert (out / "landscape_joint.svg").exists()
    assert (out / "summary.json").exists()
    assert (out / "threshold_maps.json").exists()


def test_worker_subcommand_serves_protocol(tiny_config):
    from frosthpo.harness.protocol import WireClient, wire_backend
    from frosthpo.fidelity import HyperparamConfig

    env = dict(os.environ, PYTHONPATH=str(Path(__file__).parent.parent / "src"))
    import shlex
    cmd = [sys.executable, "-m", "frosthpo.harness.cli", "worker", "--config",
           tiny_config]
    client = WireClient(cmd)
    try:
        assert client.info.axes == ("layers", "data_fraction")
        backend = wire_backend(client, TINY["budget"])
        config = HyperparamConfig(id=0, values={"learning_rate": 0.01,
                                                "optimizer": "adam"})
        rec = backend(config, {"layers": 3.0, "data_fraction": 1.0}, seed=0)
        assert not rec.diverged
        assert rec.cost.flops > 0
    finally:
        client.close()


def test_worker_matches_in_process_backend(tiny_config):
    from frosthpo.harness.protocol import WireClient, wire_backend
    from frosthpo.harness.backends import micro_backend
    from frosthpo.harness.config import RunConfig
    from frosthpo.fidelity import HyperparamConfig

    cfg = RunConfig.load(tiny_config)
    local = micro_backend(cfg)
    config = HyperparamConfig(id=2, values={"learning_rate": 0.01,
                                            "optimizer": "adam"})
    fid = {"layers": 2.0, "data_fraction": 1.0}
    want = local(config, fid, 1)

    cmd = [sys.executable, "-m", "frosthpo.harness.cli", "worker", "--config",
           tiny_config]
    with WireClient(cmd) as client:
        got = wire_backend(client, TINY["budget"])(config, fid, 1)
    assert got.objective == pytest.approx(want.objective, rel=1e-12)
    assert got.cost.flops == want.cost.flops
