import csv
import hashlib
import json
import subprocess
import sys

import numpy as np
import pytest

from ldpofl import mf_mechanism as mfm
from ldpofl.cli import main
from ldpofl.streams import QUADRATIC, DataStream, dump_stream


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def digest(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


def test_factorize_writes_loadable_file(tmp_path, capsys):
    out = tmp_path / "bt.csv"
    code, text, _ = run(capsys, "factorize", "--mechanism", "binary-tree", "--steps", 4,
                        "--out", out)
    assert code == 0
    stats = json.loads(text)
    assert stats["max_col_sq_norm"] == 3 and stats["width"] == 7
    f = mfm.load_factorization(out)
    assert f.residual()[0] == 0.0


def test_factorize_rejects_zero_steps(capsys):
    code, _, err = run(capsys, "factorize", "--mechanism", "toeplitz", "--steps", 0)
    assert code == 2 and "--steps" in err


def test_factorize_unknown_mechanism(capsys):
    code, _, err = run(capsys, "factorize", "--mechanism", "wavelet", "--steps", 4)
    assert code == 2 and "--mechanism" in err


def test_bad_factorization_file(tmp_path, capsys):
    p = tmp_path / "bad.csv"
    p.write_text("garbage\n")
    code, _, err = run(capsys, "calibrate", "--factorization", p, "--epsilon", 1, "--delta", 0.1)
    assert code == 2 and "error" in err


def test_calibrate_prints_budget(capsys):
    code, text, _ = run(capsys, "calibrate", "--mechanism", "identity", "--steps", 4,
                        "--epsilon", 2, "--delta", 1e-3)
    assert code == 0
    out = json.loads(text)
    assert out["noise_variance"] == pytest.approx(15.752, abs=0.01)
    assert set(out) == {"epsilon", "delta", "rho", "sensitivity", "noise_variance",
                        "max_col_sq_norm"}


def test_calibrate_rejects_zero_delta(capsys):
    code, _, err = run(capsys, "calibrate", "--mechanism", "identity", "--steps", 4,
                       "--epsilon", 2, "--delta", 0)
    assert code == 2 and "delta" in err


def one_sample_config(tmp_path):
    stream = DataStream(QUADRATIC, np.ones((1, 1, 1, 1)), np.zeros((1, 1, 1)))
    dump_stream(stream, tmp_path / "one.csv")
    cfg = {"n": 1, "R": 1, "tau": 1, "dim": 1, "eta": 0.1, "mechanism": "noiseless",
           "data_spec": {"kind": "csv", "path": str(tmp_path / "one.csv")}}
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg))
    return path


def test_simulate_minimal(tmp_path, capsys):
    code, text, _ = run(capsys, "simulate", one_sample_config(tmp_path), "--out", tmp_path / "o")
    assert code == 0
    summary = json.loads(text)
    assert summary["final_dyn_regret"] == pytest.approx(0.5)
    assert summary["wall_time_s"] is None
    with open(tmp_path / "o" / "trace.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 1
    assert list(rows[0]) == ["round", "avg_round_loss", "round_opt", "cum_dyn_regret",
                             "cum_static_regret", "cr_analog"]
    assert float(rows[0]["cum_dyn_regret"]) == pytest.approx(0.5)


def small_config(tmp_path, **kw):
    cfg = {"n": 3, "R": 6, "tau": 2, "dim": 4, "eta": 0.05, "mechanism": "toeplitz",
           "budget": {"epsilon": 2.0, "delta": 1e-3}, "master_seed": 5,
           "data_spec": {"kind": "logistic", "alpha": 0.5, "beta": 0.5, "seed": 1},
           "diagnostics": {"virtual_iterate": True, "dual_form_check": True}}
    cfg.update(kw)
    path = tmp_path / "small.json"
    path.write_text(json.dumps(cfg))
    return path


def test_simulate_is_byte_deterministic(tmp_path, capsys):
    cfg = small_config(tmp_path)
    for name in ("a", "b"):
        assert run(capsys, "simulate", cfg, "--out", tmp_path / name)[0] == 0
    for f in ("trace.csv", "summary.json"):
        assert digest(tmp_path / "a" / f) == digest(tmp_path / "b" / f)


@pytest.mark.parametrize("patch,needle", [
    ({"n": 0}, "n:"), ({"budget": None}, "budget"), ({"mechanism": "wavelet"}, "wavelet"),
    ({"eta": "fast"}, "eta"),
])
def test_simulate_config_errors(tmp_path, capsys, patch, needle):
    code, _, err = run(capsys, "simulate", small_config(tmp_path, **patch), "--out", tmp_path)
    assert code == 2 and needle in err


def test_simulate_unreadable_config(tmp_path, capsys):
    (tmp_path / "x.json").write_text("{not json")
    assert run(capsys, "simulate", tmp_path / "x.json")[0] == 2
    assert run(capsys, "simulate", tmp_path / "missing.json")[0] == 2


def test_simulate_diagnostics_exit_code(tmp_path, capsys, monkeypatch):
    import ldpofl.experiment as exp
    from ldpofl.federation import run_simulation
    monkeypatch.setattr(exp, "run_simulation",
                        lambda cfg, stream: run_simulation(cfg, stream, virtual_tol=-1.0))
    code, _, err = run(capsys, "simulate", small_config(tmp_path), "--out", tmp_path / "o")
    assert code == 4 and "round 0" in err


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_simulate_numeric_exit_code(tmp_path, capsys):
    cfg = small_config(tmp_path, eta=1e308, eta_g=1e308, mechanism="noiseless", budget=None,
                       diagnostics={})
    code, _, err = run(capsys, "simulate", cfg, "--out", tmp_path / "o")
    assert code == 3 and "non-finite" in err


def compare_config(tmp_path, seeds=(0, 1)):
    cfg = {"n": 2, "R": 5, "tau": 2, "dim": 3, "eta": 0.05,
           "budget": {"epsilon": 2.0, "delta": 1e-3},
           "data_spec": {"kind": "quadratic", "drift_magnitude": 0.2, "drift_period": 2},
           "seeds": list(seeds), "comparisons": ["noiseless", "identity", "toeplitz"],
           "eta_overrides": {"identity": 0.02}}
    path = tmp_path / "cmp.json"
    path.write_text(json.dumps(cfg))
    return path


def test_compare_outputs(tmp_path, capsys):
    code, text, _ = run(capsys, "compare", compare_config(tmp_path, (3,)), "--out", tmp_path / "o")
    assert code == 0
    rows = json.loads(text)
    assert [r["mechanism"] for r in rows] == ["noiseless", "identity", "toeplitz"]
    assert set(rows[0]) == {"mechanism", "seeds", "mean_final_norm_regret",
                            "std_final_norm_regret", "runtime_s"}
    assert rows[0]["seeds"] == 1 and rows[0]["runtime_s"] is None
    with open(tmp_path / "o" / "long.csv") as fh:
        long = list(csv.DictReader(fh))
    assert list(long[0]) == ["seed", "mechanism", "round", "avg_loss", "cum_dyn_regret"]
    assert len(long) == 3 * 5
    manifest = json.loads((tmp_path / "o" / "manifest.json").read_text())
    assert manifest["complete"] and len(manifest["cells"]) == 3


def test_compare_parallel_matches_sequential(tmp_path, capsys):
    cfg = compare_config(tmp_path)
    assert run(capsys, "compare", cfg, "--out", tmp_path / "s")[0] == 0
    assert run(capsys, "compare", cfg, "--out", tmp_path / "p", "--workers", 2)[0] == 0
    for f in ("long.csv", "summary.json", "summary.csv", "manifest.json"):
        assert digest(tmp_path / "s" / f) == digest(tmp_path / "p" / f)


def test_compare_timing(tmp_path, capsys):
    code, text, _ = run(capsys, "compare", compare_config(tmp_path, (0,)), "--out",
                        tmp_path / "o", "--timing")
    assert code == 0 and all(r["runtime_s"] >= 0 for r in json.loads(text))


def test_compare_rejects_repeated_seeds(tmp_path, capsys):
    code, _, err = run(capsys, "compare", compare_config(tmp_path, (1, 1)))
    assert code == 2 and "seeds" in err


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "ldpofl", "toeplitz-report", "--sizes", "4"],
                          capture_output=True, text=True, check=True)
    report = json.loads(proc.stdout)
    assert report[0]["published_violated"] is True
