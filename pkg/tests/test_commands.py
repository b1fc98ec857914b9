import json
import os
from unittest.mock import patch

import numpy as np
import pytest

import commands
from ctptmed import build_parser, main
from datatypes import ErrorFamily, Event, ExperimentResult, NullPartition
from events import fire_event
from mediation import bf_mediation
from special_math import SeededRng, draw_standard_normal

FAST = ["--iterations", "1000", "--chains", "1"]


@pytest.fixture
def regression_csv(tmp_path):
    rng = SeededRng(1)
    x = draw_standard_normal(rng, 40)
    m = 0.6 * x + draw_standard_normal(rng, 40)
    y = 0.5 * m + 0.2 * x + draw_standard_normal(rng, 40)
    path = tmp_path / "data.csv"
    lines = ["x,m,y"] + [f"{a},{b},{c}" for a, b, c in zip(x, m, y)]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return str(path)


def _read_json(path) -> dict:
    with open(path, "r", encoding="utf-8") as f:
        return json.load(f)


def test_commands_are_registered():
    assert [cmd.name for cmd in commands.COMMANDS] == ["fit", "mediate", "compare", "simulate", "dist"]


def test_dist_pdf(capsys):
    assert main(["dist", "pdf", "0", "--gamma", "1", "--nu", "inf"]) == 0
    assert capsys.readouterr().out.strip() == "0.3989422804"


def test_dist_quantile(capsys):
    assert main(["dist", "quantile", "0.5", "--gamma", "1", "--nu", "5"]) == 0
    assert abs(float(capsys.readouterr().out)) < 1e-9


def test_dist_cdf_of_several_values(capsys):
    assert main(["dist", "cdf", "-1", "0", "1", "--gamma", "2", "--nu", "5"]) == 0
    values = [float(line) for line in capsys.readouterr().out.split()]
    assert len(values) == 3
    assert values == sorted(values)


def test_dist_sample_is_reproducible(capsys):
    main(["dist", "sample", "--n", "5", "--seed", "4", "--gamma", "2"])
    first = capsys.readouterr().out
    main(["dist", "sample", "--n", "5", "--seed", "4", "--gamma", "2"])
    assert capsys.readouterr().out == first
    assert len(first.split()) == 5


def test_dist_skewcurve(capsys):
    assert main(["dist", "skewcurve", "--gamma-min", "0.5", "--gamma-max", "2", "--points", "3", "--nu", "10"]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines[0] == "gamma,sk_fisher,sk_ag"
    assert lines[2] == "1.0000000000,0.0000000000,0.0000000000"
    assert lines[3].startswith("2.0000000000,") and lines[3].endswith(",0.6000000000")


def test_dist_skewcurve_leaves_undefined_fisher_skewness_empty(capsys):
    main(["dist", "skewcurve", "--gamma-min", "2", "--gamma-max", "2", "--points", "1", "--nu", "3"])
    assert capsys.readouterr().out.strip().splitlines()[1] == "2.0000000000,,0.6000000000"


def test_dist_prior(capsys):
    assert main(["dist", "prior", "nu", "--lower", "2", "--upper", "12", "--points", "3"]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines[0] == "value,log_density,density"
    assert len(lines) == 4
    assert lines[1].endswith(",0.0000000000")


def test_dist_rejects_invalid_gamma():
    with patch("ctptmed.logger"):
        assert main(["dist", "pdf", "0", "--gamma", "-1"]) == 2


def test_fit_writes_report(tmp_path, regression_csv):
    output = tmp_path / "fit.json"
    code = main(["fit", regression_csv, "--response", "m", "--predictors", "x", "--family", "normal",
                 "--output", str(output), *FAST])
    assert code == 0
    report = _read_json(output)
    assert report["command"] == "fit"
    assert report["schema_version"] == 1
    assert report["family"] == "normal"
    assert set(report["summaries"]) == {"intercept", "x", "sigma"}
    assert report["sigma_moment_bound"] == 37
    assert "normal_flat_log_evidence" in report
    assert report["deviations"]


def test_fit_is_deterministic(tmp_path, regression_csv):
    paths = [tmp_path / "a.json", tmp_path / "b.json"]
    for path in paths:
        main(["fit", regression_csv, "--response", "y", "--predictors", "m", "x", "--family", "gamma-only",
              "--seed", "11", "--output", str(path), *FAST])
    first, second = (_read_json(path) for path in paths)
    first.pop("generated_at")
    second.pop("generated_at")
    assert first == second


def test_fit_improper_posterior_exits_with_validation_code(tmp_path):
    path = tmp_path / "tiny.csv"
    path.write_text("x,y\n1,2\n2,3.5\n", encoding="utf-8")
    with patch("ctptmed.logger"):
        assert main(["fit", str(path), "--response", "y", "--predictors", "x", *FAST]) == 2


def test_missing_column_is_reported(regression_csv):
    with patch("ctptmed.logger") as mock_logger:
        assert main(["fit", regression_csv, "--response", "z", *FAST]) == 2
    assert "'z'" in mock_logger.error.call_args.args[0]


def test_non_numeric_value_names_the_row(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("x,y\n1,2\n2,abc\n3,4\n4,5\n", encoding="utf-8")
    with patch("ctptmed.logger") as mock_logger:
        assert main(["fit", str(path), "--response", "y", "--predictors", "x", *FAST]) == 2
    assert "data row 2" in mock_logger.error.call_args.args[0]


def test_missing_file_exits_with_io_code(tmp_path):
    with patch("ctptmed.logger"):
        assert main(["fit", str(tmp_path / "absent.csv"), "--response", "y", *FAST]) == 4


def test_invalid_setting_exits_with_validation_code(regression_csv):
    with patch("ctptmed.logger"):
        assert main(["fit", regression_csv, "--response", "y", "--iterations", "10"]) == 2


def test_mediate_uses_null_partition(tmp_path, regression_csv):
    output = tmp_path / "mediate.json"
    code = main(["mediate", regression_csv, "--x", "x", "--m", "m", "--y", "y", "--family", "normal",
                 "--q00", "0.5", "--q01", "0.25", "--q10", "0.25", "--output", str(output), *FAST])
    assert code == 0
    report = _read_json(output)
    expected = bf_mediation(report["bf_alpha"], report["bf_beta"], NullPartition(0.5, 0.25, 0.25))
    assert report["bf_med"] == pytest.approx(expected)
    assert set(report["equations"]) == {"mediator", "outcome"}
    assert report["equations"]["outcome"]["sigma_moment_bound"] == 36


def test_mediate_prior_odds_must_come_in_pairs(regression_csv):
    with patch("ctptmed.logger"):
        assert main(["mediate", regression_csv, "--x", "x", "--m", "m", "--y", "y",
                     "--prior-odds-alpha", "2", *FAST]) == 2


def test_compare_matrix(tmp_path, regression_csv):
    output = tmp_path / "compare.json"
    table = tmp_path / "compare.csv"
    code = main(["compare", regression_csv, "--response", "y", "--predictors", "m", "x",
                 "--families", "normal", "gamma-only", "--output", str(output), "--csv-output", str(table), *FAST])
    assert code == 0
    equation = next(iter(_read_json(output)["equations"].values()))
    matrix = equation["log_bayes_factor"]
    assert matrix["Normal"]["Normal"] == 0.0
    assert matrix["Normal"]["gamma-Only"] == pytest.approx(-matrix["gamma-Only"]["Normal"])
    assert os.path.exists(table)


def test_compare_needs_columns(regression_csv):
    with patch("ctptmed.logger"):
        assert main(["compare", regression_csv, *FAST]) == 2


def test_simulate_recovery_writes_outputs(tmp_path):
    scenario = tmp_path / "tiny.json"
    scenario.write_text(json.dumps({"schema_version": 1, "name": "tiny", "n": 30, "families": ["normal"]}),
                        encoding="utf-8")
    code = main(["simulate", str(scenario), "--mode", "recovery", "--replications", "1", "--iterations", "1000",
                 "--threads", "1", "--output-dir", str(tmp_path / "out")])
    assert code == 0
    report = _read_json(tmp_path / "out" / "tiny_recovery.json")
    assert report["results"][0]["replications"] == 1
    assert os.path.exists(tmp_path / "out" / "tiny_recovery.csv")
    assert os.path.exists(tmp_path / "out" / "tiny_recovery_replications.csv")


def test_simulate_recovery_rejects_null_scenario(tmp_path):
    scenario = tmp_path / "null.json"
    scenario.write_text(json.dumps({"name": "null", "alpha": 0.0}), encoding="utf-8")
    with patch("ctptmed.logger"):
        assert main(["simulate", str(scenario), "--mode", "recovery", "--output-dir", str(tmp_path)]) == 2


def test_simulate_reports_scenario_errors(tmp_path):
    scenario = tmp_path / "bad.json"
    scenario.write_text(json.dumps({"err_m": {"kind": "ctpt", "gamma": -1}}), encoding="utf-8")
    with patch("ctptmed.logger") as mock_logger:
        assert main(["simulate", str(scenario), "--output-dir", str(tmp_path)]) == 2
    assert "/err_m/ctpt/gamma" in mock_logger.error.call_args.args[0]


def test_settings_resolution_prefers_flags(tmp_path):
    config = tmp_path / "config.json"
    config.write_text(json.dumps({"seed": 5, "total_iterations": 2000}), encoding="utf-8")
    args = build_parser().parse_args(["fit", "data.csv", "--response", "y", "--config", str(config), "--seed", "9"])
    settings = commands.resolve_settings(args)
    assert settings.seed == 9
    assert settings.total_iterations == 2000
    assert commands.chain_config(settings, 3).n_chains == 3
    assert commands.prior_config(settings).gamma_support == (0.05, 20.0)


def test_no_intercept_flag(tmp_path):
    args = build_parser().parse_args(["fit", "data.csv", "--response", "y", "--no-intercept"])
    assert commands.resolve_settings(args).add_intercept is False
    defaults = build_parser().parse_args(["fit", "data.csv", "--response", "y"])
    assert commands.resolve_settings(defaults).add_intercept is True


def test_samples_are_parsable_numbers(capsys):
    main(["dist", "sample", "--n", "3", "--seed", "1"])
    assert np.all(np.isfinite([float(v) for v in capsys.readouterr().out.split()]))


def test_mediation_report_uses_resolved_priors(tmp_path, regression_csv):
    with patch("commands.mediator_problem", wraps=commands.mediator_problem) as spy:
        main(["mediate", regression_csv, "--x", "x", "--m", "m", "--y", "y", "--family", "normal",
              "--gamma-upper", "8", "--threads", "1", "--output", str(tmp_path / "mediate.json"), *FAST])
    assert spy.call_args.args[2].gamma_support == (0.05, 8.0)


def test_dist_prior_honours_prior_flags(capsys):
    main(["dist", "prior", "gamma", "--gamma-upper", "3", "--points", "5"])
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines[-1].startswith("3.0000000000,")
    main(["dist", "prior", "gamma", "--lower", "1", "--upper", "1", "--points", "1", "--gamma-rate", "4"])
    faster = float(capsys.readouterr().out.strip().splitlines()[1].split(",")[2])
    main(["dist", "prior", "gamma", "--lower", "1", "--upper", "1", "--points", "1"])
    default = float(capsys.readouterr().out.strip().splitlines()[1].split(",")[2])
    assert faster != pytest.approx(default)


def test_fit_advances_a_chain_progress_bar(tmp_path, regression_csv):
    with patch("events.EVENT_HANDLERS", {}) as handlers, patch("commands.tqdm") as mock_tqdm:
        main(["fit", regression_csv, "--response", "m", "--predictors", "x", "--family", "normal",
              "--iterations", "1000", "--chains", "2", "--output", str(tmp_path / "fit.json")])
        assert handlers[Event.CHAIN_FINISHED] == []
    mock_tqdm.assert_called_once()
    assert mock_tqdm.return_value.update.call_count == 2
    mock_tqdm.return_value.close.assert_called_once()


def test_experiment_summary_is_logged():
    result = ExperimentResult(mode="power", scenario="tiny", family=ErrorFamily.FULL, replications=4, failures=0,
                              records=[], tpr=0.5, fpr=0.0, cutoff=10.0)
    with patch("commands.logger") as mock_logger:
        fire_event(Event.EXPERIMENT_FINISHED, result)
    assert "TPR 0.500" in mock_logger.info.call_args.args[0]
