import json

import pytest

from superlab.lab import acceptance
from superlab.lab.cli import main
from superlab.lab.ops import run
from superlab.lab.records import (
    ExperimentManifest, ResultRecord, ResultStore, StaleModelError, StoreConflictError,
)
from superlab.model import feller, save_model

SIM = {"n_paths": 2000, "dt": 0.1, "record_times": [0.5, 1.0]}


def test_manifest_hash_is_deterministic():
    a = ExperimentManifest.create("spectral", "builtin:feller", {"x": 1, "y": [1, 2]}, seed=3)
    b = ExperimentManifest.create("spectral", "builtin:feller", {"y": [1, 2], "x": 1}, seed=3)
    assert a.hash == b.hash
    assert ExperimentManifest.create("spectral", "builtin:feller", {"x": 1, "y": [1, 2]}, seed=4).hash != a.hash


def test_manifest_round_trip(tmp_path):
    m = ExperimentManifest.create("cumulant", "builtin:feller_2type", {"t": [1.0]}, seed=9)
    m.save(tmp_path / "m.json")
    back = ExperimentManifest.load(tmp_path / "m.json")
    assert back == m and back.hash == m.hash


def test_same_manifest_gives_identical_record():
    m = ExperimentManifest.create("simulate", "builtin:feller", {"sim": SIM}, seed=42)
    assert run(m).hash == run(m).hash


def test_thread_count_does_not_change_ensemble():
    m = ExperimentManifest.create("simulate", "builtin:feller", {"sim": SIM}, seed=42)
    one, four = run(m, threads=1), run(m, threads=4)
    assert one.data["ensemble_hash"] == four.data["ensemble_hash"]
    assert one.hash == four.hash


def test_spectral_record_for_feller():
    rec = run(ExperimentManifest.create("spectral", "builtin:feller"))
    tr = rec.data["triplet"]
    assert tr["lambda"] == pytest.approx(-1.0, abs=1e-12)
    assert tr["phi"] == pytest.approx([1.0]) and tr["nu"] == pytest.approx([1.0])


def test_tampered_model_is_stale():
    m = ExperimentManifest.create("spectral", "builtin:feller")
    d = m.to_dict()
    d["model"]["beta"] = [-2.0]
    with pytest.raises(StaleModelError):
        run(ExperimentManifest.from_dict(d))


def test_store_round_trip_and_conflict(tmp_path):
    store = ResultStore(tmp_path / "store")
    m = ExperimentManifest.create("spectral", "builtin:feller")
    rec = run(m)
    path = store.put(m, rec)
    assert m.hash in store and store.get(m.hash).hash == rec.hash
    assert store.put(m, rec) == path  # idempotent
    other = ResultRecord.from_dict({**rec.to_dict(), "data": {"tampered": True}})
    with pytest.raises(StoreConflictError):
        store.put(m, other)
    with pytest.raises(ValueError):
        store.put(ExperimentManifest.create("spectral", "builtin:feller", seed=1), rec)


# command line ------------------------------------------------------------------------------

def test_cli_validate_exit_codes(store_dir, tmp_path, capsys):
    assert main(["validate", "builtin:feller"]) == 0
    good = tmp_path / "ok.json"
    save_model(feller(), good)
    assert main(["validate", str(good)]) == 0
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"n": 1, "motion": [[0.0]], "beta": [-1.0], "sigma": [-1.0], "pi": [{"kind": "zero"}]}))
    assert main(["validate", str(bad)]) == 1
    malformed = tmp_path / "malformed.json"
    malformed.write_text(json.dumps({"n": 2, "motion": [[0.0]], "beta": [-1.0], "sigma": [1.0], "pi": [{"kind": "zero"}]}))
    assert main(["validate", str(malformed)]) == 2


def test_cli_spectral_prints_csv(store_dir, capsys):
    assert main(["spectral", "builtin:feller"]) == 0
    out = capsys.readouterr().out
    assert out.startswith("# lambda: -1.0")
    assert any(store_dir.rglob("record.json"))


def test_cli_simulate_and_replay(store_dir, tmp_path, capsys):
    out = tmp_path / "run"
    assert main(["simulate", "builtin:feller", "--n-paths", "500", "--dt", "0.1", "--seed", "5",
                 "--out", str(out), "--csv"]) == 0
    first = json.loads(capsys.readouterr().out)
    assert (out / "ensemble.bin").exists() and (out / "ensemble.csv").exists()
    assert main(["run", str(out / "manifest.json"), "--threads", "3"]) == 0
    second = json.loads(capsys.readouterr().out)
    assert first["record_hash"] == second["record_hash"]


def test_cli_unknown_builtin_exits_2(store_dir, capsys):
    assert main(["spectral", "builtin:no_such_model"]) == 2


def test_cli_accept_refuses_stale_golden(store_dir, tmp_path, capsys):
    golden = {"criteria": {"1": {"models": {"feller": "0" * 64}}}}
    path = tmp_path / "golden.json"
    path.write_text(json.dumps(golden))
    assert main(["accept", "--criteria", "1", "--golden", str(path)]) == 2


def test_cli_accept_single_criterion(store_dir, tmp_path, capsys):
    assert main(["accept", "--criteria", "1", "--out", str(tmp_path)]) == 0
    summary = json.loads((tmp_path / "acceptance.json").read_text())
    assert summary["passed"] and "1" in summary["criteria"]
    assert "[PASS]  1." in capsys.readouterr().out


def test_suite_selection_partitions_criteria():
    det = acceptance.selected("deterministic")
    mc = acceptance.selected("montecarlo")
    assert sorted(det + mc) == acceptance.selected("full") == sorted(acceptance.CRITERIA)
    assert not set(det) & set(mc)
