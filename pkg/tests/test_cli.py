import json

import numpy as np
import pytest

from hptune.analysis import read_table
from hptune.cli import main, parse_reports
from hptune.errors import DomainError
from hptune.kriging import KrigingModel
from hptune.space import SPHERE2
from hptune.tuner import RESULT_FIELDS, TunerResult

SPHERE = ["--preset", "sphere2", "--evaluator", "sphere"]


@pytest.fixture(scope="module")
def tuned(tmp_path_factory):
    out = tmp_path_factory.mktemp("tune")
    assert main(["tune", *SPHERE, "--budget", "14", "--seed", "3", "--out", str(out)]) == 0
    return out


class TestTune:
    def test_outputs(self, tuned):
        raw = json.loads((tuned / "result.json").read_text())
        assert tuple(raw) == RESULT_FIELDS and raw["count"] == 14
        manifest = json.loads((tuned / "manifest.json").read_text())
        assert manifest["schema_version"] == "1" and manifest["seed"] == 3
        assert manifest["budget"] == {"count": 14, "designEvals": 6, "postDesignEvals": 8,
                                      "msg": "budget exhausted"}
        meta, rows = read_table(tuned / "ybestVec.csv")
        assert len(rows) == 8 and (tuned / "run.log").exists()

    def test_deterministic(self, tuned, tmp_path):
        assert main(["tune", *SPHERE, "--budget", "14", "--seed", "3", "--out", str(tmp_path)]) == 0
        assert (tmp_path / "result.json").read_text() == (tuned / "result.json").read_text()

    def test_config_file_and_override(self, tmp_path):
        cfg = tmp_path / "run.yaml"
        cfg.write_text("space: sphere2\nevaluator: sphere\ncontrol:\n  funEvals: 8\nseed: 1\n"
                       f"out: {tmp_path / 'a'}\n")
        assert main(["tune", "--config", str(cfg), "--budget", "9"]) == 0
        assert TunerResult.load(tmp_path / "a" / "result.json").count == 9

    def test_external_echo(self, tmp_path):
        cmd = "{python} -m hptune.harness.echo_metric {x1} {x2}"
        assert main(["tune", "--preset", "sphere2", "--command", cmd, "--budget", "8",
                     "--out", str(tmp_path)]) == 0
        res = TunerResult.load(tmp_path / "result.json")
        assert res.log_info["statuses"] == {"ok": 8}

    def test_budget_rejected_before_evaluation(self, tmp_path, capsys):
        assert main(["tune", *SPHERE, "--budget", "3", "--out", str(tmp_path / "x")]) == 2
        assert "smaller than the initial design" in capsys.readouterr().err
        assert not (tmp_path / "x").exists()

    def test_bad_evaluator(self, tmp_path, capsys):
        cfg = tmp_path / "run.yaml"
        cfg.write_text("space: sphere2\nevaluator: {command: x, builtin: sphere}\n")
        assert main(["tune", "--config", str(cfg), "--budget", "8"]) == 2
        assert "exactly one" in capsys.readouterr().err


class TestBaseline:
    def test_random_schema_parity(self, tuned, tmp_path):
        assert main(["baseline", *SPHERE, "--method", "random", "--budget", "16", "--out", str(tmp_path)]) == 0
        a = json.loads((tmp_path / "result.json").read_text())
        b = json.loads((tuned / "result.json").read_text())
        assert list(a) == list(b) and a["count"] == 16

    def test_grid_count(self, tmp_path):
        assert main(["baseline", *SPHERE, "--method", "grid", "--levels", "4,4", "--budget", "16",
                     "--out", str(tmp_path)]) == 0
        assert TunerResult.load(tmp_path / "result.json").count == 16

    def test_grid_cap(self, tmp_path, capsys):
        code = main(["baseline", "--preset", "section34", "--evaluator", "sphere", "--method", "grid",
                     "--levels", "4", "--budget", "480", "--out", str(tmp_path / "g")])
        assert code == 2 and "exceeds cap" in capsys.readouterr().err


class TestAnalyze:
    def write_result(self, path, y, x=None, design=0):
        x = x or [[float(i) / 10, 0.5] for i in range(len(y))]
        res = TunerResult(xbest=x[int(np.argmin(y))], ybest=min(y), x=x, y=list(y), count=len(y),
                          msg="budget exhausted", model_fit=None, ybest_vec=[],
                          log_info={"space": SPHERE2.to_dict(), "designEvals": design})
        res.save(path)
        return path

    def test_summary_row(self, tmp_path):
        path = self.write_result(tmp_path / "r.json", [1, 2, 3, 4, 5])
        assert main(["analyze", str(path), "--reports", "summary", "--out", str(tmp_path)]) == 0
        _, rows = read_table(tmp_path / "summary.csv")
        assert [float(v) for v in rows[0].values()] == [1, 2, 3, 3, 4, 5]

    def test_ols_insufficient(self, tmp_path, capsys):
        path = self.write_result(tmp_path / "r.json", [1.0, 2.0])
        assert main(["analyze", str(path), "--reports", "ols", "--out", str(tmp_path)]) == 1
        assert "insufficient rows" in capsys.readouterr().err

    def test_unknown_report(self, tmp_path, capsys):
        path = self.write_result(tmp_path / "r.json", [1.0, 2.0])
        assert main(["analyze", str(path), "--reports", "violin"]) == 2
        err = capsys.readouterr().err
        assert all(name in err for name in ("summary", "trace", "importance", "contour(i,j)"))

    def test_contour_matches_predict(self, tuned, tmp_path):
        assert main(["analyze", str(tuned / "result.json"), "--reports", "contour(1,2)",
                     "--out", str(tmp_path)]) == 0
        meta, rows = read_table(tmp_path / "contour_1_2.csv")
        res = TunerResult.load(tuned / "result.json")
        assert len(rows) == 400 and meta["anchor"] == res.xbest and meta["refit"] is False
        model = KrigingModel.from_summary(res.model_fit)
        for row in rows[::37]:
            u = np.array([float(row["u_i"]), float(row["u_j"])])
            assert float(row["mean"]) == pytest.approx(model.predict(u).mean, abs=1e-12)

    def test_contour_refits_without_model(self, tmp_path):
        rng = np.random.default_rng(0)
        x = rng.random((10, 2)).tolist()
        path = self.write_result(tmp_path / "r.json", [sum(r) for r in x], x)
        assert main(["analyze", str(path), "--reports", "contour(1,2)", "--resolution", "5",
                     "--out", str(tmp_path)]) == 0
        meta, rows = read_table(tmp_path / "contour_1_2.csv")
        assert meta["refit"] is True and len(rows) == 25

    def test_all_reports(self, tuned, tmp_path):
        reports = "summary,trace,ols,tree,importance,box"
        assert main(["analyze", str(tuned / "result.json"), "--reports", reports, "--out", str(tmp_path)]) == 0
        for name in reports.split(","):
            assert (tmp_path / f"{name}.csv").exists()
        _, rows = read_table(tmp_path / "box.csv")
        assert {"best", "worst", "worst_tuning"} <= set(rows[0])

    def test_parse_reports(self):
        assert parse_reports("summary, contour(1,5)") == [("summary", ()), ("contour", (1, 5))]
        with pytest.raises(DomainError):
            parse_reports("contour")


def test_demo(capsys):
    assert main(["demo", "--seed", "0"]) == 0
    out = capsys.readouterr().out
    assert "Test loss:" in out and "Test accuracy:" in out
