import csv
import io
import json

import pytest

from ntxsim import SEED_ENV
from ntxsim.cli import EXIT_FAIL, EXIT_OK, EXIT_USAGE, main


def run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def rows(text):
    return list(csv.DictReader(io.StringIO(text)))


class TestVerify:
    def test_passes(self, capsys):
        code, out, _ = run(capsys, "verify", "--cases", "60")
        doc = json.loads(out)
        assert code == EXIT_OK and doc["status"] == "pass"
        assert [s["name"] for s in doc["suites"]] == ["oracle", "gradient", "decomposition", "accumulator"]

    @pytest.mark.parametrize("suite", ["oracle", "accumulator"])
    def test_fault_names_suite(self, capsys, suite):
        code, out, _ = run(capsys, "verify", "--cases", "12", "--inject-fault", suite)
        failing = [s["name"] for s in json.loads(out)["suites"] if s["passed"] < s["total"]]
        assert code == EXIT_FAIL and failing == [suite]

    def test_deterministic(self, capsys):
        a = run(capsys, "--seed", "5", "verify", "--cases", "24")[1]
        b = run(capsys, "--seed", "5", "verify", "--cases", "24")[1]
        assert a == b

    def test_env_overrides_seed(self, capsys, monkeypatch):
        monkeypatch.setenv(SEED_ENV, "77")
        _, out, _ = run(capsys, "--seed", "5", "verify", "--cases", "6")
        assert json.loads(out)["seed"] == 77

    def test_bad_cases(self, capsys):
        assert run(capsys, "verify", "--cases", "0")[0] == EXIT_USAGE


class TestModel:
    def test_golden_train(self, capsys):
        code, out, _ = run(capsys, "model", "--network", "googlenet", "--config", "ntx64-28nm", "--golden",
                           "--format", "json")
        doc = json.loads(out)
        assert code == EXIT_OK
        assert doc["total"]["time_ms"] == pytest.approx(8.69, rel=0.15)
        assert all(g["rel_tol"] == 0.15 for g in doc["golden"])

    def test_golden_inference(self, capsys):
        code, out, _ = run(capsys, "model", "--config", "ntx16-28nm", "--pass", "inference", "--golden", "--format",
                           "json")
        assert code == EXIT_OK and json.loads(out)["total"]["time_ms"] == pytest.approx(11.3, rel=0.15)

    def test_csv_rows(self, capsys):
        code, out, _ = run(capsys, "model", "--network", "alexnet")
        r = rows(out)
        assert code == EXIT_OK and r[-1]["layer"] == "TOTAL" and len(r) > 10

    def test_unknown_network(self, capsys):
        code, _, err = run(capsys, "model", "--network", "vgg")
        assert code == EXIT_USAGE and "googlenet" in err

    def test_empty_network(self, capsys, tmp_path):
        p = tmp_path / "empty.json"
        p.write_text(json.dumps({"name": "empty", "input": [3, 8, 8], "layers": []}))
        code, out, _ = run(capsys, "model", "--network", str(p), "--format", "json")
        doc = json.loads(out)
        assert code == EXIT_OK and doc["layers"] == [] and doc["total"]["time_ms"] == 0

    def test_golden_without_reference(self, capsys):
        assert run(capsys, "model", "--network", "alexnet", "--golden")[0] == EXIT_USAGE


class TestReports:
    def test_offloads(self, capsys):
        code, out, _ = run(capsys, "offloads")
        r = rows(out)
        assert code == EXIT_OK and len(r) == 4
        assert r[0]["ns_offloads"] == "802816" and r[3]["ntx_cycles"] == "100352"

    def test_sweep_flags_optimum(self, capsys):
        code, out, _ = run(capsys, "sweep", "--config", "ntx64-28nm", "--networks", "googlenet", "--steps", "49")
        r = rows(out)
        best = [x for x in r if x["optimum"] == "1"]
        assert code == EXIT_OK and len(r) == 49 and len(best) == 1
        assert float(best[0]["power_w"]) <= 25

    def test_mesh(self, capsys):
        code, out, _ = run(capsys, "mesh")
        row = next(x for x in rows(out) if x["N"] == "8" and x["L_B"] == "8192")
        assert code == EXIT_OK and float(row["speedup"]) == pytest.approx(62.8, rel=0.01)

    def test_mesh_bad_sides(self, capsys):
        assert run(capsys, "mesh", "--sides", "a-b")[0] == EXIT_USAGE

    def test_datacenter_same_tdp(self, capsys):
        code, out, _ = run(capsys, "datacenter", "--scenario", "same-tdp")
        doc = json.loads(out)
        assert code == EXIT_OK and doc["n"] == 129 and doc["tflops"] == pytest.approx(258.9)

    def test_datacenter_cube_file(self, capsys, tmp_path):
        p = tmp_path / "cube.json"
        p.write_text(json.dumps({"peak": 2.007, "power": 20.0}))
        code, out, _ = run(capsys, "datacenter", "--scenario", "same-compute", "--cube-config", str(p))
        assert code == EXIT_OK and json.loads(out)["cube_power_w"] == 860

    def test_datacenter_unknown_cube(self, capsys):
        assert run(capsys, "datacenter", "--scenario", "same-tdp", "--cube-config", "nope")[0] == EXIT_USAGE

    def test_trace(self, capsys, tmp_path):
        hist = tmp_path / "h.csv"
        code, out, _ = run(capsys, "trace", "--histogram", str(hist))
        assert code == EXIT_OK and out.startswith("cycle,unit,state")
        assert hist.read_text().startswith("length_bytes")

    def test_output_file(self, capsys, tmp_path):
        p = tmp_path / "o.csv"
        assert run(capsys, "-o", str(p), "offloads")[0] == EXIT_OK
        assert p.read_text().startswith("kernel,")

    def test_usage_error(self, capsys):
        assert run(capsys, "frobnicate")[0] == EXIT_USAGE
        assert run(capsys)[0] == EXIT_USAGE
