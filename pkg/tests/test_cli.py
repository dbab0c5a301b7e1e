import csv
import hashlib
import json
import subprocess
import sys
from pathlib import Path

import pytest

from gsp_lab.cli import (
    POINT_FIELDS,
    RunConfig,
    emit_plotdata,
    main,
    read_points_csv,
    run,
    write_points_csv,
)
from gsp_lab.montecarlo import OperatingPoint, frontier

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def invoke(tmp_path, command, config, trials=None, seed=None, out="out"):
    out_dir = tmp_path / out
    code = run(RunConfig(command, CONFIGS / config if isinstance(config, str) else config,
                         out_dir, seed, trials))
    return code, out_dir


def write_cfg(tmp_path, cfg, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return path


def rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


SMALL = {
    "population": {"value": {"kind": "uniform"}, "relevance": {"kind": "uniform"},
                   "bidders": 4},
    "slots": {"count": 2},
    "specs": ["proposed", "standard_r"],
    "grids": {"proposed": {"r": [0.0, 0.25]}, "standard_r": {"r": [0.1, 0.25]}},
    "dominance": {"r": [0.2]},
    "trials": 300,
    "seed": 3,
}


class TestCommands:
    def test_fig1_sweep_format(self, tmp_path):
        code, out = invoke(tmp_path, "sweep", "fig1.json", trials=50)
        assert code == 0
        table = rows(out / "sweep.csv")
        assert tuple(table[0]) == ("family", "r", "alpha", "rho", "revenue", "revenue_se",
                                   "welfare", "welfare_se", "clicks", "clicks_se", "trials")
        assert len(table) == 1 + 42
        assert {r[0] for r in table[1:]} == {"proposed", "standard_r"}

    def test_condcheck_beta22(self, tmp_path, capsys):
        code, out = invoke(tmp_path, "condcheck", "beta22.json")
        assert code == 0
        assert "theta_bar=0.4215" in capsys.readouterr().out
        last = rows(out / "condcheck.csv")[-1]
        assert abs(float(last[0]) - 0.4215) < 1e-3
        assert abs(float(last[2]) - 1 / 3) < 1e-3

    def test_verify_two_bidder_instance(self, tmp_path, capsys):
        code, out = invoke(tmp_path, "verify", "two_bidder_probe.json")
        assert code == 0
        assert "infeasible interval (0.55, 0.525)" in capsys.readouterr().out
        result = json.loads((out / "verify.json").read_text())
        assert result["feasible"] is False
        assert (result["lower"], result["upper"]) == (pytest.approx(0.55), pytest.approx(0.525))
        assert not any(c["ok"] for c in result["checks"])

    def test_dominance(self, tmp_path):
        code, out = invoke(tmp_path, "dominance", write_cfg(tmp_path, SMALL))
        assert code == 0
        table = rows(out / "dominance.csv")
        assert table[0][0] == "r" and len(table) == 2

    def test_frontier_fig2_five_plot_files(self, tmp_path):
        code, out = invoke(tmp_path, "frontier", "fig2.json", trials=200)
        assert code == 0
        files = sorted(p.name for p in (out / "plotdata").glob("welfare_*.dat"))
        assert files == ["welfare_proposed.dat", "welfare_squashed.dat",
                         "welfare_squashed_rho.dat", "welfare_standard_r.dat",
                         "welfare_standard_rho.dat"]
        cmp = rows(out / "frontier_compare_welfare.csv")
        assert len(cmp) == 1 + 4
        front = read_points_csv(out / "frontier_welfare.csv")
        for family in {p.family for p in front}:
            xs = [p.welfare for p in front if p.family == family]
            assert xs == sorted(xs)

    def test_replay_generated(self, tmp_path, capsys):
        cfg = {"specs": ["proposed", "standard_r"],
               "replay": {"generate": {"market": "thin", "auctions": 100}}}
        code, out = invoke(tmp_path, "replay", write_cfg(tmp_path, cfg))
        assert code == 0
        table = rows(out / "replay.csv")
        assert len(table) == 1 + 2 * 21
        assert "jaggedness standard_r" in capsys.readouterr().out

    def test_replay_from_log(self, tmp_path, capsys):
        (tmp_path / "log.csv").write_text(
            "auction_id,bidder_id,bid,relevance,slot_count\n"
            "a,x,1.0,0.7,2\na,y,0.6,1.0,2\na,z,oops,1.0,2\n")
        cfg = {"specs": ["standard_r"], "replay": {"log": "log.csv", "r_grid": [0.5],
                                                   "decay": 0.5}}
        code, out = invoke(tmp_path, "replay", write_cfg(tmp_path, cfg))
        assert code == 0
        assert "rejected 1" in capsys.readouterr().out
        assert float(rows(out / "replay.csv")[1][4]) == pytest.approx(0.85)

    def test_manifest(self, tmp_path):
        path = write_cfg(tmp_path, SMALL)
        code, out = invoke(tmp_path, "sweep", path, seed=11)
        assert code == 0
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["config_sha256"] == hashlib.sha256(path.read_bytes()).hexdigest()
        assert manifest["seed"] == 11 and manifest["trials"] == 300
        assert set(manifest["versions"]) == {"gsp_lab", "python", "numpy", "scipy"}
        for name, digest in manifest["files"].items():
            assert hashlib.sha256((out / name).read_bytes()).hexdigest() == digest

    def test_repeat_is_bit_identical(self, tmp_path):
        path = write_cfg(tmp_path, SMALL)
        invoke(tmp_path, "sweep", path, out="a")
        invoke(tmp_path, "sweep", path, out="b")
        assert (tmp_path / "a" / "sweep.csv").read_bytes() == \
            (tmp_path / "b" / "sweep.csv").read_bytes()

    def test_main_entry(self, tmp_path):
        path = write_cfg(tmp_path, SMALL)
        assert main(["condcheck", "--config", str(CONFIGS / "beta22.json"),
                     "--out", str(tmp_path / "o")]) == 0
        proc = subprocess.run([sys.executable, "-m", "gsp_lab.cli", "sweep", "--config",
                               str(path), "--trials", "20", "--out", str(tmp_path / "p")],
                              capture_output=True, text=True)
        assert proc.returncode == 0
        assert proc.stdout.count("\n") == 4


class TestExitCodes:
    @pytest.mark.parametrize("mutate", [
        lambda c: c.pop("population"),
        lambda c: c.update(specs=["optimal_phi"]),
        lambda c: c.update(grids={"proposed": {"r": []}}),
        lambda c: c.update(slots={"count": 0}),
        lambda c: c["population"].update(value={"kind": "cauchy"}),
        lambda c: c.update(trials=0),
    ])
    def test_config_errors(self, tmp_path, mutate, capsys):
        cfg = json.loads(json.dumps(SMALL))
        mutate(cfg)
        code, _ = invoke(tmp_path, "sweep", write_cfg(tmp_path, cfg))
        assert code == 2
        assert "config error" in capsys.readouterr().err

    def test_missing_file(self, tmp_path):
        assert invoke(tmp_path, "sweep", tmp_path / "none.json")[0] == 2

    def test_invalid_json(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text("{not json")
        assert invoke(tmp_path, "sweep", path)[0] == 2

    def test_seed_override_out_of_range(self, tmp_path):
        assert invoke(tmp_path, "sweep", write_cfg(tmp_path, SMALL), seed=-1)[0] == 2

    def test_bound_unavailable_is_runtime(self, tmp_path, capsys):
        cfg = json.loads(json.dumps(SMALL))
        cfg["population"]["value"] = {"kind": "lognormal", "mu": 0, "sigma": 1}
        code, _ = invoke(tmp_path, "sweep", write_cfg(tmp_path, cfg))
        assert code == 3
        err = capsys.readouterr().err
        assert "BoundUnavailableError" in err and "gsp_lab.montecarlo" in err

    def test_condcheck_on_lognormal_is_runtime(self, tmp_path):
        cfg = {"population": {"value": {"kind": "lognormal", "mu": 0, "sigma": 1}}}
        assert invoke(tmp_path, "condcheck", write_cfg(tmp_path, cfg))[0] == 3

    def test_unwritable_output(self, tmp_path):
        blocker = tmp_path / "file"
        blocker.write_text("")
        code = run(RunConfig("sweep", write_cfg(tmp_path, SMALL), blocker / "sub"))
        assert code == 2


class TestTables:
    POINTS = [OperatingPoint("proposed", 0.1, 1.0, 0.0, 0.3, 0.01, 1.2, 0.02, 1.5, 0.03, 10),
              OperatingPoint("standard_r", 1 / 3, 1.0, 0.0, 0.1 + 0.2, 1e-17, 0.9, 0.0, 1.1,
                             0.0, 10)]

    def test_round_trip(self, tmp_path):
        path = write_points_csv(self.POINTS, tmp_path / "p.csv")
        assert read_points_csv(path) == self.POINTS
        assert tuple(rows(path)[0]) == POINT_FIELDS

    def test_bad_header(self, tmp_path):
        path = tmp_path / "p.csv"
        path.write_text("a,b\n1,2\n")
        with pytest.raises(ValueError):
            read_points_csv(path)

    def test_plotdata_one_point(self, tmp_path):
        (path,) = emit_plotdata(self.POINTS[:1], tmp_path / "x")
        lines = path.read_text().splitlines()
        assert lines[0].startswith("#")
        assert lines[1].split() == ["1.2", "0.3", "0.01"]

    def test_plotdata_sorted_per_family(self, tmp_path):
        pts = [OperatingPoint("f", 0, 1, 0, y, 0, x, 0, x, 0, 1)
               for x, y in [(3, 1), (1, 3), (2, 2)]]
        (path,) = emit_plotdata(frontier(pts), tmp_path / "fr", x_metric="click_yield")
        xs = [float(line.split()[0]) for line in path.read_text().splitlines()[1:]]
        assert xs == [1, 2, 3]

    def test_plotdata_errors(self, tmp_path):
        with pytest.raises(ValueError):
            emit_plotdata([], tmp_path / "x")
        with pytest.raises(OSError, match="missing"):
            emit_plotdata(self.POINTS, tmp_path / "missing" / "x")
