import csv
import io
import json
import subprocess
import sys

import pytest

from mfe.cli import load_spec, main, read_reference_pi


def run_cli(args, capsys):
    code = main(args)
    captured = capsys.readouterr()
    return code, captured.out


def write_config(tmp_path, doc, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(doc))
    return path


def parse_csv(text):
    rows = list(csv.DictReader(io.StringIO(text)))
    assert rows, "no data rows"
    return rows


TINY_SEARCH = {"policy_hi": 2.0, "resolution": 1.0, "levels": 1, "top_q": 2,
               "max_report": 5}


class TestLoadSpec:
    def test_defaults_match_benchmark_settings(self):
        spec = load_spec(None)
        assert spec.params.lam == 1.0
        assert spec.params.gamma == 0.95
        assert spec.params.beta == 20.0
        assert spec.trunc.nmax == 200
        assert spec.search.policy_hi == 50.0
        assert spec.search.resolution == 1.0
        assert spec.search.levels == 3

    def test_seed_override(self, tmp_path):
        path = write_config(tmp_path, {"sim": {"seed": 5}})
        assert load_spec(path).sim_seed == 5
        assert load_spec(path, seed=9).sim_seed == 9

    def test_bad_config_rejected(self, tmp_path):
        from mfe.cli import SpecError

        path = write_config(tmp_path, {"params": {"gamma": 2.0}})
        with pytest.raises(SpecError):
            load_spec(path)


class TestStationaryCommand:
    def test_always_switch_kappa_and_marginals(self, tmp_path, capsys):
        cfg = write_config(tmp_path, {
            "params": {"mu01": 0.3, "mu10": 0.7},
            "policy": {"n0": 0.0, "n1": 0.0},
        })
        code, out = run_cli(["stationary", "--config", str(cfg)], capsys)
        assert code == 0
        rows = parse_csv(out)
        kappa = float(rows[0]["kappa"])
        assert kappa == pytest.approx(20.0, abs=1e-4)
        total = sum(float(r["prob"]) for r in rows)
        assert total == pytest.approx(1.0, abs=1e-9)
        z1 = sum(float(r["prob"]) for r in rows if r["z"] == "1")
        assert z1 == pytest.approx(0.3, abs=1e-8)
        assert float(rows[0]["mean_occupancy"]) == pytest.approx(20.0, abs=1e-5)

    def test_round_trips_as_reference_pi(self, tmp_path, capsys):
        cfg = write_config(tmp_path, {"policy": {"n0": 0.0, "n1": 0.0}})
        out_path = tmp_path / "pi.csv"
        code, _ = run_cli(
            ["stationary", "--config", str(cfg), "--out", str(out_path)], capsys
        )
        assert code == 0
        pi = read_reference_pi(out_path)
        assert pi.shape[0] == 2
        assert pi.sum() == pytest.approx(1.0, abs=1e-9)

    def test_json_format(self, tmp_path, capsys):
        cfg = write_config(tmp_path, {"policy": {"n0": 0.0, "n1": 0.0}})
        code, out = run_cli(
            ["stationary", "--config", str(cfg), "--format", "json"], capsys
        )
        assert code == 0
        doc = json.loads(out)
        assert doc["kappa"] == pytest.approx(20.0, abs=1e-4)
        assert len(doc["pi"]) == 400


class TestSolveCommand:
    def test_tiny_solve_csv(self, tmp_path, capsys):
        cfg = write_config(tmp_path, {
            "params": {"beta": 2.0, "gamma": 0.9},
            "nmax": 30,
            "search": TINY_SEARCH,
        })
        code, out = run_cli(["solve", "--config", str(cfg)], capsys)
        assert code == 0
        rows = parse_csv(out)
        assert [r["rank"] for r in rows] == [str(i) for i in range(1, len(rows) + 1)]
        ds = [float(r["d"]) for r in rows]
        assert ds == sorted(ds)
        assert all(float(r["dist"]) >= 0 for r in rows)

    def test_degenerate_reward_flagged(self, tmp_path, capsys):
        cfg = write_config(tmp_path, {
            "params": {"beta": 2.0, "gamma": 0.9,
                       "reward": {"kind": "table", "values": [0.0]}},
            "nmax": 30,
            "search": TINY_SEARCH,
        })
        code, out = run_cli(["solve", "--config", str(cfg)], capsys)
        assert code == 0
        rows = parse_csv(out)
        assert rows[0]["flag"] == "degenerate"
        assert rows[0]["n0"] == "0.0" and rows[0]["n1"] == "0.0"

    def test_json_format(self, tmp_path, capsys):
        cfg = write_config(tmp_path, {
            "params": {"beta": 2.0, "gamma": 0.9},
            "nmax": 30,
            "search": TINY_SEARCH,
        })
        code, out = run_cli(
            ["solve", "--config", str(cfg), "--format", "json"], capsys
        )
        assert code == 0
        doc = json.loads(out)
        assert doc["c_bar"] == pytest.approx(10.0)
        assert len(doc["candidates"]) >= 1
        assert "box" in doc["candidates"][0]


class TestTable1Command:
    def test_grid_shape_with_tiny_search(self, tmp_path, capsys):
        cfg = write_config(tmp_path, {
            "params": {"beta": 2.0, "gamma": 0.9},
            "nmax": 30,
            "search": {**TINY_SEARCH, "c_resolution": 0.5},
        })
        code, out = run_cli(["table1", "--config", str(cfg)], capsys)
        assert code == 0
        rows = parse_csv(out)
        assert len(rows) == 15
        assert {r["reward"] for r in rows} == {
            "inverse_sqrt_n", "inverse_n", "inverse_n_squared"
        }
        assert {r["mu"] for r in rows} == {"0.1", "0.5", "1.0", "10.0", "100.0"}
        for r in rows:
            assert r["status"] == "ok"
            for col in ("dev_c", "dev_n0", "dev_n1"):
                assert float(r[col]) >= 0.0
        fast_sqrt = next(
            r for r in rows
            if r["reward"] == "inverse_sqrt_n" and r["mu"] == "100.0"
        )
        assert (fast_sqrt["c_ref"], fast_sqrt["n0_ref"], fast_sqrt["n1_ref"]) == (
            "2.46", "11.0", "12.0"
        )

    def test_cell_failure_recorded_not_fatal(self, tmp_path, capsys):
        # truncation far below the density makes every calibration fail
        cfg = write_config(tmp_path, {
            "nmax": 12,
            "search": TINY_SEARCH,
        })
        code, out = run_cli(["table1", "--config", str(cfg)], capsys)
        assert code == 1
        rows = parse_csv(out)
        assert len(rows) == 15
        assert all(r["status"].startswith("error") for r in rows)


class TestSimulateCommand:
    def test_deterministic_byte_identical(self, tmp_path, capsys):
        cfg = write_config(tmp_path, {
            "params": {"beta": 3.0},
            "policy": {"n0": 1.0, "n1": 4.0},
            "sim": {"k": 12, "horizon": 200.0, "burn_in": 40.0, "seed": 11},
        })
        _, out1 = run_cli(["simulate", "--config", str(cfg)], capsys)
        _, out2 = run_cli(["simulate", "--config", str(cfg)], capsys)
        assert out1 == out2
        _, out3 = run_cli(["simulate", "--config", str(cfg), "--seed", "12"], capsys)
        assert out3 != out1

    def test_reports_tv_against_reference(self, tmp_path, capsys):
        base = {
            "params": {"beta": 3.0},
            "policy": {"n0": 1.0, "n1": 4.0},
            "sim": {"k": 12, "horizon": 200.0, "burn_in": 40.0, "seed": 11},
        }
        cfg = write_config(tmp_path, base)
        pi_path = tmp_path / "pi.csv"
        code, _ = run_cli(
            ["stationary", "--config", str(cfg), "--out", str(pi_path)], capsys
        )
        assert code == 0
        cfg2 = write_config(tmp_path, {**base, "reference_pi": str(pi_path)},
                            name="cfg2.json")
        code, out = run_cli(["simulate", "--config", str(cfg2)], capsys)
        assert code == 0
        rows = parse_csv(out)
        tv_rows = [r for r in rows if r["record"] == "tv_to_reference"]
        assert len(tv_rows) == 1
        assert 0.0 <= float(tv_rows[0]["value"]) <= 2.0

    def test_empirical_z_marginal_symmetric(self, tmp_path, capsys):
        cfg = write_config(tmp_path, {
            "params": {"beta": 3.0, "mu01": 2.0, "mu10": 2.0},
            "policy": {"n0": 2.0, "n1": 2.0},
            "sim": {"k": 40, "horizon": 1000.0, "burn_in": 100.0, "seed": 3},
        })
        code, out = run_cli(["simulate", "--config", str(cfg)], capsys)
        assert code == 0
        rows = parse_csv(out)
        z1 = sum(float(r["value"]) for r in rows if r["record"] == "pi" and r["z"] == "1")
        assert z1 == pytest.approx(0.5, abs=0.05)


class TestErrorHandling:
    def test_missing_config_file(self, capsys):
        code = main(["stationary", "--config", "/nonexistent/cfg.json"])
        assert code == 1
        assert "cannot read config" in capsys.readouterr().err

    def test_invalid_params(self, tmp_path, capsys):
        cfg = write_config(tmp_path, {"params": {"gamma": 0.0}})
        code = main(["stationary", "--config", str(cfg)])
        assert code == 1


class TestSubprocessEntry:
    def test_module_entrypoint_runs(self, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({
            "params": {"beta": 2.0},
            "policy": {"n0": 0.0, "n1": 0.0},
            "nmax": 40,
        }))
        proc = subprocess.run(
            [sys.executable, "-m", "mfe.cli", "stationary", "--config", str(cfg)],
            capture_output=True, text=True, timeout=300,
        )
        assert proc.returncode == 0
        rows = parse_csv(proc.stdout)
        assert float(rows[0]["kappa"]) == pytest.approx(2.0, abs=1e-4)
