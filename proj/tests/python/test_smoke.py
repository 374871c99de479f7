import json
from pathlib import Path

import pytest

import hybridpipe as hp

CONFIGS = Path(__file__).resolve().parents[2] / "configs"

TOY = """
workers: 4
seed: 3
parallel: {g_inter: 2, g_data: 2, microbatch_size: 2}
network: {layers: 4, width: 8}
batch: {batch_size: 8}
"""


def test_validate():
    ok = hp.validate(TOY)
    assert ok["ok"] and ok["pipeline_limit"] == 2
    bad = hp.validate(TOY, ["parallel.g_inter=5"])
    assert not bad["ok"]
    assert any(code == "GridMismatch" for code, _ in bad["violations"])


def test_unknown_key_raises():
    with pytest.raises(hp.HybridpipeError):
        hp.validate(TOY + "bogus: 1\n")


def test_train_matches_oracle():
    r = hp.train(TOY, 20, oracle=True)
    assert len(r["losses"]) == 20
    for a, b in zip(r["losses"], r["oracle_losses"]):
        assert abs(a - b) <= 1e-8 * abs(b)
    mixed = hp.train(TOY, 10, oracle=True, overrides=["precision=mixed", "optimizer.loss_scale=256"])
    assert mixed["losses"] == mixed["oracle_losses"]
    assert mixed["parameters"] == mixed["oracle_parameters"]


def test_simulate_and_formulas():
    s = hp.simulate(TOY)
    assert s["batch_time"] >= s["inter_layer_time"] > 0
    assert hp.round_to_half(0.1) == 0.0999755859375
    assert hp.select_checkpoint_interval(48, 6) == 8
    assert hp.activation_units(16, 4, 4) == 9.0
    assert hp.model_state_bytes(2_000_000_000, False, 0) == 40_000_000_000
    assert hp.estimated_training_time(1.0, 2048, 512) == pytest.approx(286102.294921875)


def test_cli_round_trip():
    code, out, _ = hp.run_cli("sweep", str(CONFIGS / "k_sweep.yaml"), ["--axis", "k", "--values", "1,2,4,8,16"])
    assert code == 0
    lines = out.splitlines()
    header = json.loads(lines[0][2:])
    assert header["config"]["parallel"]["bucket_size"] == 524288
    assert lines[1].split(",") == hp.sweep_columns()
    assert len(lines) == 7
    code, _, err = hp.run_cli("validate", str(CONFIGS / "missing.yaml"))
    assert code == 3 and "Io" in err
