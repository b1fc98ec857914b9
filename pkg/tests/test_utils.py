import json
import math
import os

import numpy as np
import pandas as pd
import pytest

from datatypes import CtptErr, ErrorFamily, EvidenceResult, NullPartition, TukeyGH
from errors import DataParseError, ReportIOError, ScenarioError
from utils import (
    build_design,
    json_pointer,
    load_csv,
    load_scenario,
    numeric_column,
    report_envelope,
    to_jsonable,
    write_csv,
    write_json_report,
)

SCENARIO_DIR = os.path.join(os.path.dirname(os.path.dirname(__file__)), "scenarios")


def test_load_csv(tmp_path):
    path = tmp_path / "data.csv"
    path.write_text("x,y\n1.5,2\n-3,4e-1\n", encoding="utf-8")
    frame = load_csv(str(path))
    assert list(frame.columns) == ["x", "y"]
    np.testing.assert_array_equal(numeric_column(frame, "y"), [2.0, 0.4])


def test_load_csv_errors(tmp_path):
    with pytest.raises(ReportIOError):
        load_csv(str(tmp_path / "absent.csv"))
    empty = tmp_path / "empty.csv"
    empty.write_text("", encoding="utf-8")
    with pytest.raises(DataParseError):
        load_csv(str(empty))


def test_numeric_column_errors():
    frame = pd.DataFrame({"x": ["1", "2", ""], "y": [1.0, 2.0, 3.0]})
    with pytest.raises(DataParseError, match="Column 'z' not found"):
        numeric_column(frame, "z")
    with pytest.raises(DataParseError, match="data row 3"):
        numeric_column(frame, "x")
    with pytest.raises(DataParseError, match="data row 1"):
        numeric_column(pd.DataFrame({"x": [math.inf, 1.0]}), "x")


def test_build_design():
    frame = pd.DataFrame({"a": [1.0, 2.0, 3.0], "b": [0.5, 0.1, 0.2]})
    design, names = build_design(frame, ["a", "b"])
    assert names == ("intercept", "a", "b")
    np.testing.assert_array_equal(design[:, 0], np.ones(3))
    design, names = build_design(frame, ["b"], add_intercept=False)
    assert names == ("b",)
    assert design.shape == (3, 1)
    with pytest.raises(DataParseError):
        build_design(frame, [], add_intercept=False)


def test_json_pointer():
    assert json_pointer(("err_m", "ctpt", "gamma")) == "/err_m/ctpt/gamma"
    assert json_pointer(("families", 0)) == "/families/0"
    assert json_pointer(("a/b", "c~d")) == "/a~1b/c~0d"


def test_load_scenario(tmp_path):
    path = tmp_path / "scenario.json"
    path.write_text(json.dumps({
        "name": "skewed", "n": 100,
        "err_m": {"kind": "ctpt", "gamma": 3, "nu": "inf"},
        "err_y": {"kind": "tukey", "g": 0.5, "h": 0.2},
        "families": ["full", "normal"],
    }), encoding="utf-8")
    scenario = load_scenario(str(path))
    assert scenario.err_m == CtptErr(gamma=3.0, nu="inf")
    assert scenario.err_y == TukeyGH(g=0.5, h=0.2)
    assert scenario.families == [ErrorFamily.FULL, ErrorFamily.NORMAL]


@pytest.mark.parametrize("content, pointer", [
    ({"err_m": {"kind": "ctpt", "gamma": 0}}, "/err_m/ctpt/gamma"),
    ({"err_y": {"kind": "tukey", "g": 0.5, "h": 1.5}}, "/err_y/tukey/h"),
    ({"n": 2}, "/n"),
    ({"schema_version": 2}, "/schema_version"),
    ({"unknown": 1}, "/unknown"),
])
def test_load_scenario_reports_pointer(tmp_path, content, pointer):
    path = tmp_path / "scenario.json"
    path.write_text(json.dumps(content), encoding="utf-8")
    with pytest.raises(ScenarioError, match=pointer):
        load_scenario(str(path))


def test_load_scenario_file_errors(tmp_path):
    with pytest.raises(ReportIOError):
        load_scenario(str(tmp_path / "absent.json"))
    broken = tmp_path / "broken.json"
    broken.write_text("{", encoding="utf-8")
    with pytest.raises(ScenarioError):
        load_scenario(str(broken))


@pytest.mark.parametrize("name", sorted(os.listdir(SCENARIO_DIR)))
def test_bundled_scenarios_load(name):
    scenario = load_scenario(os.path.join(SCENARIO_DIR, name))
    assert scenario.name


def test_to_jsonable():
    value = {
        "family": ErrorFamily.GAMMA_ONLY,
        "partition": NullPartition(),
        "evidence": EvidenceResult(-1.5, 0.01, 3, True),
        "array": np.array([1.0, np.nan]),
        "inf": math.inf,
        "count": np.int64(3),
        "flag": np.bool_(True),
        "pair": (1.0, 2.0),
    }
    converted = to_jsonable(value)
    assert converted["family"] == "gamma-only"
    assert converted["partition"]["q00"] == pytest.approx(1 / 3)
    assert converted["evidence"]["converged"] is True
    assert converted["array"] == [1.0, None]
    assert converted["inf"] is None
    assert converted["count"] == 3 and isinstance(converted["count"], int)
    assert converted["flag"] is True
    assert converted["pair"] == [1.0, 2.0]
    json.dumps(converted)


def test_report_envelope():
    report = report_envelope("fit", {"seed": 1}, 1)
    assert report["schema_version"] == 1
    assert report["command"] == "fit"
    assert report["seed"] == 1
    assert report["sampler"]
    assert report["deviations"]


def test_write_reports(tmp_path, capsys):
    path = tmp_path / "nested" / "report.json"
    write_json_report(str(path), {"value": math.nan})
    with open(path, "r", encoding="utf-8") as f:
        assert json.load(f) == {"value": None}
    write_json_report(None, {"value": 1})
    assert json.loads(capsys.readouterr().out) == {"value": 1}
    table = tmp_path / "table.csv"
    write_csv(str(table), [{"a": 1, "b": ErrorFamily.FULL}])
    assert pd.read_csv(table).to_dict("records") == [{"a": 1, "b": "full"}]
