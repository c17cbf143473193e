"""CLI contract: exit codes, file outputs, idempotence, atomicity."""

import csv
import os

import pytest

from voltsense.cli import main

BASE_CFG = """
EXPERIMENT
feeder builtin:ieee37
pack builtin:default
out {out}
variant symmetric
seed 77

GRID
start 12:00
end 18:00
step 15

PV
penetration 0.30
actors 14
allocation_seed 11

VALIDATE
node 22
actors 2,11,20,29
samples 600
bins 50
js_bound 1.0

MONTECARLO
runs 2
penetrations 0.30,0.70
actors 20

BENCH
repetitions 30
sizes 10,20
"""


@pytest.fixture()
def cfg_path(tmp_path):
    def write(text=None, name="exp.cfg", out="out"):
        p = tmp_path / name
        p.write_text((text or BASE_CFG).format(out=tmp_path / out))
        return str(p)
    return write


def _read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def test_validate_node_writes_files(cfg_path, tmp_path):
    code = main(["--config", cfg_path(), "validate-node"])
    assert code == 0
    rows = _read_csv(tmp_path / "out" / "validate_22.csv")
    assert rows[0] == ["bin_lo", "bin_hi", "empirical_density", "theoretical_density"]
    assert len(rows) == 51
    summary = _read_csv(tmp_path / "out" / "validate_22.summary.csv")
    assert summary[0][:6] == ["node", "phase", "variant", "js_distance",
                              "js_symmetric", "js_paper"]
    assert summary[1][0] == "22"
    assert float(summary[1][3]) <= 1.0


def test_validate_node_bound_failure_exits_3(cfg_path, tmp_path):
    cfg = BASE_CFG.replace("js_bound 1.0", "js_bound 0.000001")
    code = main(["--config", cfg_path(cfg), "validate-node"])
    assert code == 3
    # outputs are still written: they are the evidence for the failure
    assert (tmp_path / "out" / "validate_22.summary.csv").exists()


def test_missing_feeder_no_partial_outputs(cfg_path, tmp_path):
    cfg = BASE_CFG.replace("builtin:ieee37", str(tmp_path / "nope.feeder"))
    code = main(["--config", cfg_path(cfg), "validate-node"])
    assert code == 1
    out = tmp_path / "out"
    assert not out.exists() or not any(out.iterdir())


def test_unknown_config_key_rejected(cfg_path, tmp_path):
    cfg = BASE_CFG.replace("penetration 0.30", "penetration nope")
    assert main(["--config", cfg_path(cfg), "predict"]) == 1


def test_predict_outputs_and_override(cfg_path, tmp_path):
    code = main(["--config", cfg_path(), "predict", "--penetration", "0.70",
                 "--actors", "20", "--loss-time", "16:32"])
    assert code == 0
    rows = _read_csv(tmp_path / "out" / "violations.csv")
    assert rows[0] == ["time", "predicted_count", "actual_count", "pviolation_file"]
    assert rows[1][0] == "12:15" and rows[-1][0] == "18:00"
    assert len(rows) == 25  # header + 24 instants
    pv = _read_csv(tmp_path / "out" / "pviolations.csv")
    assert pv[0] == ["time", "node", "phase", "p_violation", "vulnerable"]
    assert len(pv) == 1 + 24 * 111


def test_predict_empty_grid_rejected(cfg_path, tmp_path):
    cfg = BASE_CFG.replace("end 18:00", "end 12:00")
    code = main(["--config", cfg_path(cfg), "predict"])
    assert code == 1
    assert not (tmp_path / "out").exists() or not any((tmp_path / "out").iterdir())


def test_montecarlo_rows_and_idempotence(cfg_path, tmp_path):
    cfg_file = cfg_path()
    assert main(["--config", cfg_file, "montecarlo"]) == 0
    first = (tmp_path / "out" / "mc_error.csv").read_bytes()
    rows = _read_csv(tmp_path / "out" / "mc_error.csv")
    assert rows[0] == ["run", "pl", "error_pct"]
    assert len(rows) == 1 + 2 * 2 + 2  # runs x PLs + one mean row per PL
    assert rows[-1][0] == rows[-2][0] == "mean"
    # byte-identical rerun with the same config and seeds
    assert main(["--config", cfg_file, "montecarlo"]) == 0
    assert (tmp_path / "out" / "mc_error.csv").read_bytes() == first


def test_montecarlo_single_run(cfg_path, tmp_path):
    assert main(["--config", cfg_path(), "montecarlo", "--runs", "1"]) == 0
    rows = _read_csv(tmp_path / "out" / "mc_error.csv")
    assert sum(1 for r in rows[1:] if r[0] != "mean") == 2  # one row per PL


def test_seed_flag_changes_output(cfg_path, tmp_path):
    cfg_file = cfg_path()
    assert main(["--config", cfg_file, "montecarlo"]) == 0
    first = (tmp_path / "out" / "mc_error.csv").read_bytes()
    assert main(["--config", cfg_file, "--seed", "78", "montecarlo"]) == 0
    assert (tmp_path / "out" / "mc_error.csv").read_bytes() != first


def test_bench_outputs(cfg_path, tmp_path):
    assert main(["--config", cfg_path(), "bench"]) == 0
    rows = _read_csv(tmp_path / "out" / "bench.csv")
    assert rows[0] == ["feeder_nodes", "method", "median_seconds", "repetitions", "ratio"]
    assert len(rows) == 1 + 2 * 2
    assert {r[1] for r in rows[1:]} == {"analytical", "loadflow"}


def test_bench_rejects_few_repetitions(cfg_path, tmp_path):
    cfg = BASE_CFG.replace("repetitions 30", "repetitions 10")
    assert main(["--config", cfg_path(cfg), "bench"]) == 1
    assert not (tmp_path / "out").exists() or not any((tmp_path / "out").iterdir())


def test_variant_flag(cfg_path, tmp_path):
    assert main(["--config", cfg_path(), "--variant", "paper", "validate-node"]) in (0, 3)
    summary = _read_csv(tmp_path / "out" / "validate_22.summary.csv")
    assert summary[1][2] == "paper"


def test_no_staging_residue(cfg_path, tmp_path):
    assert main(["--config", cfg_path(), "montecarlo", "--runs", "1"]) == 0
    leftovers = [d for d in os.listdir(tmp_path / "out") if d.startswith(".staging")]
    assert leftovers == []
