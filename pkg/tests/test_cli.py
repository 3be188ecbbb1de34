import json

import pytest
import yaml

from privrec import config as cfgmod
from privrec.cli import main

SMALL = {
    "dataset": {"synthetic": {"n_users": 40, "n_items": 30}},
    "simulate": {"target_key_bits": 128, "mediator_key_bits": 258, "participants": 20, "group_size": 7},
}


def write(tmp_path, cfg, name="cfg.yaml"):
    path = tmp_path / name
    path.write_text(yaml.safe_dump(cfg))
    return str(path)


def test_obfuscate_outputs_and_determinism(tmp_path, capsys):
    cfg = write(tmp_path, SMALL)
    assert main(["obfuscate", "--config", cfg, "--out", str(tmp_path / "a")]) == 0
    assert main(["obfuscate", "--config", cfg, "--out", str(tmp_path / "b")]) == 0
    a = (tmp_path / "a" / "obfuscated.csv").read_bytes()
    assert a == (tmp_path / "b" / "obfuscated.csv").read_bytes()
    side = json.loads((tmp_path / "a" / "obfuscated.sidecar.json").read_text())
    assert "plan_fingerprint" in side
    assert "VI" in capsys.readouterr().out


def test_missing_dataset_names_key(tmp_path, capsys):
    cfg = write(tmp_path, {"dataset": {"path": str(tmp_path / "nope.csv")}})
    assert main(["obfuscate", "--config", cfg]) == 2
    assert "dataset.path" in capsys.readouterr().err
    assert main(["obfuscate", "--config", write(tmp_path, {}, "empty.yaml")]) == 2


def test_unknown_key_rejected(tmp_path, capsys):
    cfg = write(tmp_path, {**SMALL, "plan": {"widht": 3}})
    assert main(["obfuscate", "--config", cfg]) == 2
    assert "plan.widht" in capsys.readouterr().err


def test_nesting_checked_before_work(tmp_path, capsys):
    cfg = write(tmp_path, {**SMALL, "simulate": {"target_key_bits": 256, "mediator_key_bits": 300}})
    assert main(["simulate", "--config", cfg, "--out", str(tmp_path / "o")]) == 2
    assert "simulate.mediator_key_bits" in capsys.readouterr().err
    assert not (tmp_path / "o").exists()


def test_simulate_writes_outputs(tmp_path):
    out = tmp_path / "sim"
    assert main(["simulate", "--config", write(tmp_path, SMALL), "--out", str(out)]) == 0
    verdict = json.loads((out / "audit.json").read_text())
    assert verdict["audit"] == "PASS" and verdict["correctness"] == "PASS"
    assert (out / "referrals.csv").read_text().startswith("item_signature,predicted_rating,rank")
    lines = (out / "transcript.jsonl").read_text().splitlines()
    rec = json.loads(lines[0])
    assert {"seq", "kind", "sender", "receiver", "digest", "payload_hex"} <= set(rec)


def test_resolved_config_reproduces_run(tmp_path):
    main(["simulate", "--config", write(tmp_path, SMALL), "--out", str(tmp_path / "a"), "--seed", "4"])
    resolved = tmp_path / "a" / "resolved_config.yaml"
    main(["simulate", "--config", str(resolved), "--out", str(tmp_path / "b")])
    assert (tmp_path / "a" / "transcript.jsonl").read_bytes() == (tmp_path / "b" / "transcript.jsonl").read_bytes()


def test_literal_route_warns(tmp_path, capsys):
    cfg = {**SMALL, "simulate": {**SMALL["simulate"], "route": "paper-literal"}}
    out = tmp_path / "lit"
    assert main(["simulate", "--config", write(tmp_path, cfg), "--out", str(out)]) == 0
    verdict = json.loads((out / "audit.json").read_text())
    assert verdict["audit"] == "PASS" and verdict["correctness"] == "DISCREPANCY"
    assert "warning" in capsys.readouterr().err


def test_theta_one_empty_list(tmp_path, capsys):
    cfg = {**SMALL, "simulate": {**SMALL["simulate"], "theta": 1.0}}
    out = tmp_path / "t1"
    assert main(["simulate", "--config", write(tmp_path, cfg), "--out", str(out)]) == 0
    assert "empty referral list" in capsys.readouterr().out
    assert (out / "referrals.csv").read_text().strip() == "item_signature,predicted_rating,rank"


def test_experiment_fig3(tmp_path):
    cfg = {**SMALL, "experiment": {"fig3": {"key_bits": [256, 512], "record_count": 10, "repeats": 2}}}
    out = tmp_path / "e"
    assert main(["experiment", "fig3", "--config", write(tmp_path, cfg), "--out", str(out)]) == 0
    summary = json.loads((out / "fig3.json").read_text())
    assert summary["assertions"] == {"strictly_increasing": "PASS"}
    assert (out / "fig3.csv").read_text().startswith("key_bits,median_ms")


def test_experiment_single_point_fig56(tmp_path):
    cfg = {**SMALL, "experiment": {"fig56": {"d_sweep": [4]}}}
    out = tmp_path / "e"
    assert main(["experiment", "fig56", "--config", write(tmp_path, cfg), "--out", str(out)]) == 0
    summary = json.loads((out / "fig56.json").read_text())
    assert summary["assertions"]["mae_nonincreasing"] == "NOT-APPLICABLE"


def test_experiment_all_writes_four_reports(tmp_path):
    cfg = {
        "dataset": {"synthetic": {"n_users": 40, "n_items": 20}},
        "experiment": {
            "fig3": {"key_bits": [256], "record_count": 3, "repeats": 1},
            "fig4": {"records": [50, 100], "key_bits": 128},
            "fig56": {"d_sweep": [20]},
            "fig7": {"fractions": [1.0], "n_targets": 1},
        },
    }
    out = tmp_path / "all"
    assert main(["experiment", "all", "--config", write(tmp_path, cfg), "--out", str(out)]) == 0
    assert sorted(p.name for p in out.glob("*.json")) == ["fig3.json", "fig4.json", "fig56.json", "fig7.json"]


def test_unknown_experiment_is_usage_error():
    with pytest.raises(SystemExit) as exc:
        main(["experiment", "fig9"])
    assert exc.value.code == 2


def test_resolve_fills_seeds():
    cfg = cfgmod.resolve({"seed": 5, "dataset": {"synthetic": {}}})
    assert cfg["plan"]["rng_seed"] == 5
    assert cfg["dataset"]["synthetic"]["seed"] == 5
    assert cfgmod.resolve(cfgmod.load_text(cfgmod.dump(cfg))) == cfg
