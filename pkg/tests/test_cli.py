import json

import numpy as np
import pytest

from hmmreal import validate_hmm
from hmmreal.cli import main, parse_int_list, window_rule
from hmmreal.serial import read_model, read_quasi, read_sequences, read_table


def run(*argv):
    return main([str(a) for a in argv])


def test_parse_int_list():
    assert parse_int_list("0,1,2") == [0, 1, 2]
    assert parse_int_list("3-6") == [3, 4, 5, 6]
    assert parse_int_list("0,4-6,9") == [0, 4, 5, 6, 9]
    with pytest.raises(ValueError):
        parse_int_list("")


def test_window_rule():
    assert window_rule("logd", 2, 4) == 2
    assert window_rule("logd", 4, 8) == 2
    assert window_rule("logd", 3, 9) == 2
    assert window_rule("logd", 4, 4) == 1
    assert window_rule("logd", 2, 1) == 1
    assert window_rule("logd+1", 2, 4) == 3
    assert window_rule("fixed:5", 2, 4) == 5


def test_gen_kinds_round_trip(tmp_path):
    for kind, extra in [
        ("generic", ["--d", 4, "--k", 8]),
        ("shift", ["--d", 2, "--k", 4]),
        ("lowrank", ["--d", 4, "--k", 3, "--r", 2]),
        ("identity", ["--d", 2, "--k", 4]),
        ("parity", ["--T", 5, "--s", 3, "--eta", 0.1, "--rho", 0.5]),
    ]:
        path = tmp_path / f"{kind}.json"
        assert run("gen", "--kind", kind, "--seed", 0, "--out", path, *extra) == 0
        model = read_model(path)
        assert validate_hmm(model) == []
        # writing the parsed model again reproduces the file byte for byte
        from hmmreal.serial import write_model

        second = tmp_path / f"{kind}2.json"
        write_model(model, second)
        assert path.read_text() == second.read_text()


def test_probs_and_quasi_realize(tmp_path):
    model_path = tmp_path / "m.json"
    table_path = tmp_path / "t.json"
    quasi_path = tmp_path / "q.json"
    report_path = tmp_path / "r.json"
    assert run("gen", "--kind", "generic", "--d", 2, "--k", 4, "--seed", 3,
               "--out", model_path) == 0
    assert run("probs", "--model", model_path, "--N", 5, "--out", table_path) == 0
    table = read_table(table_path)
    assert abs(table.values.sum() - 1.0) <= 1e-10
    assert run("realize", "--mode", "quasi", "--table", table_path,
               "--out", quasi_path, "--report", report_path) == 0
    report = json.loads(report_path.read_text())
    assert report["order"] == 4
    assert report["verify_error"] <= 1e-9
    assert "config" in report
    realized = read_quasi(quasi_path)
    assert realized.k == 4


def test_realize_exit_code_on_rank_deficiency(tmp_path):
    model_path = tmp_path / "m.json"
    out_path = tmp_path / "q.json"
    run("gen", "--kind", "generic", "--d", 2, "--k", 2, "--seed", 0, "--out", model_path)
    code = run("realize", "--mode", "quasi", "--model", model_path, "--n", 1,
               "--expected-k", 6, "--out", out_path)
    assert code == 2


def test_cli_invalid_input_exit_codes(tmp_path):
    assert run("probs", "--model", tmp_path / "missing.json", "--N", 3,
               "--out", tmp_path / "o.json") == 3
    model_path = tmp_path / "m.json"
    run("gen", "--kind", "generic", "--d", 2, "--k", 2, "--seed", 0, "--out", model_path)
    assert run("probs", "--model", model_path, "--N", 40,
               "--out", tmp_path / "o.json") == 3  # capacity guard
    assert run("gen", "--kind", "bogus", "--out", tmp_path / "x.json") == 3


def test_sample_estimate_realize_flow(tmp_path):
    model_path = tmp_path / "m.json"
    seq_path = tmp_path / "seqs.txt"
    table_path = tmp_path / "emp.json"
    quasi_path = tmp_path / "q.json"
    run("gen", "--kind", "generic", "--d", 2, "--k", 2, "--seed", 13, "--out", model_path)
    assert run("sample", "--model", model_path, "--T", 5000, "--length", 5,
               "--seed", 1, "--out", seq_path) == 0
    batch = read_sequences(seq_path)
    assert batch.count == 5000 and batch.length == 5
    assert run("estimate", "--sequences", seq_path, "--N", 5, "--out", table_path) == 0
    table = read_table(table_path)
    assert table.provenance == "empirical" and table.sample_count == 5000
    with pytest.warns(UserWarning):
        code = run("realize", "--mode", "quasi", "--sequences", seq_path, "--n", 2,
                   "--expected-k", 2, "--out", quasi_path)
    assert code == 0


def test_hmm_realize_report(tmp_path):
    model_path = tmp_path / "m.json"
    report_path = tmp_path / "rec.json"
    run("gen", "--kind", "generic", "--d", 4, "--k", 3, "--seed", 5, "--out", model_path)
    assert run("realize", "--mode", "hmm", "--model", model_path, "--n", 1,
               "--out", report_path) == 0
    report = json.loads(report_path.read_text())
    assert report["backend"] in ("simdiag", "foobi")
    assert report["residuals"]["verify_error"] <= 1e-7
    recovered = np.asarray(report["model"]["Q"])
    assert np.allclose(recovered.sum(axis=0), 1.0, atol=1e-8)


def test_sweep_rank_deterministic_and_escalates(tmp_path):
    out_a = tmp_path / "a.csv"
    out_b = tmp_path / "b.csv"
    spectra = tmp_path / "spectra.csv"
    args = ["sweep-rank", "--d-max", 3, "--k-max", 6, "--seeds", "0,1",
            "--spectra-out", spectra]
    assert run(*args, "--out", out_a) == 0
    assert run(*args, "--out", out_b) == 0
    assert out_a.read_bytes() == out_b.read_bytes()
    lines = out_a.read_text().splitlines()
    assert lines[0] == "d,k,n,seed,rank_of_H0,sigma_k,pass"
    assert spectra.read_text().splitlines()[0] == "d,k,n,sigma_index,sigma_value"
    rows = [line.split(",") for line in lines[1:]]
    base_rule = {(int(r[0]), int(r[1])) for r in rows}
    assert (2, 4) in base_rule and (3, 6) in base_rule


def test_sweep_rank_identity_control_fails(tmp_path):
    out = tmp_path / "control.csv"
    assert run("sweep-rank", "--d-max", 2, "--k-max", 8, "--kind", "identity",
               "--seeds", "0", "--escalations", 0, "--out", out) == 0
    rows = [line.split(",") for line in out.read_text().splitlines()[1:]]
    k8 = [r for r in rows if r[1] == "8"]
    assert k8 and all(r[6] == "false" for r in k8)
    assert all(int(r[4]) < 8 for r in k8)  # rank bounded by multiset count


def test_sweep_samples_csv_schema(tmp_path):
    out = tmp_path / "samples.csv"
    assert run("sweep-samples", "--d", 2, "--k", 2, "--n", 2,
               "--T-list", "500,2000", "--seeds", "0-2", "--model-seed", 13,
               "--out", out) == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "d,k,n,T,seed,err_u,err_v,err_ops_max,sigma_k_hat"
    assert len(lines) == 1 + 2 * 3
    rerun = tmp_path / "samples2.csv"
    assert run("sweep-samples", "--d", 2, "--k", 2, "--n", 2,
               "--T-list", "500,2000", "--seeds", "0-2", "--model-seed", 13,
               "--out", rerun) == 0
    assert out.read_bytes() == rerun.read_bytes()


def test_parity_demo_report(tmp_path):
    out = tmp_path / "parity.json"
    assert run("parity-demo", "--T", 5, "--s", 3, "--eta", 0.1, "--rho", 0.5,
               "--n-list", "1,5", "--out", out) == 0
    payload = json.loads(out.read_text())
    ranks = {row["n"]: row["rank_of_H0"] for row in payload["rows"]}
    assert ranks[1] < ranks[5]
    assert payload["order"] == 17


def test_check_degenerate_json(tmp_path):
    out = tmp_path / "verdicts.json"
    assert run("check-degenerate", "--d", 4, "--k", 3, "--r", 1,
               "--seeds", "0,1", "--out", out) == 0
    payload = json.loads(out.read_text())
    assert payload["summary"] == "no"
    assert all(not v["yes"] for v in payload["verdicts"])
    rerun = tmp_path / "verdicts2.json"
    run("check-degenerate", "--d", 4, "--k", 3, "--r", 1, "--seeds", "0,1",
        "--out", rerun)
    assert out.read_bytes() == rerun.read_bytes()
