import csv
import json
import os

import numpy as np
import pytest

from eqdisc import cli
from eqdisc.floquet import ResonanceError
from eqdisc.grid import GridField, save_grid
from eqdisc.tokens import CosToken, DerivativeToken, Term

SMALL_PDE = {
    "data": {"synthetic": {"nx": 40, "nt": 40}},
    "evolution": {"n_epochs": 10},
    "lambda_grid": [1e-4, 1e-3],
}
SMALL_FLOQUET = {
    "floquet": {"npts": 12},
    "evolution": {"n_epochs": 8},
    "lambda_grid": [1e-4],
}


def write_config(tmp_path, data, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(data))
    return str(path)


def run(*argv):
    return cli.main([str(a) for a in argv])


def report_without_timings(out_dir):
    with open(os.path.join(out_dir, "report.json")) as fh:
        data = json.load(fh)
    data.pop("timings")
    return data


@pytest.fixture(scope="module")
def wave_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("wave")
    code = run("discover-pde", "--seed", 1, "--out", out)
    return code, out


# --- discover-pde ------------------------------------------------------------------

def test_wave_seed_one_recovers_wave_equation(wave_run):
    code, out = wave_run
    assert code == cli.EXIT_OK
    rep = json.loads((out / "report.json").read_text())
    assert rep["schema"] == 1 and rep["command"] == "discover-pde"
    model = rep["model"]
    assert {model["target_label"], *model["labels"]} == {"d2u/dt2", "d2u/dx2"}
    assert len(model["coefficients"]) == 1 and len(model["raw_coefficients"]) == 1
    assert model["coefficients"][0] == pytest.approx(1.0, rel=0.05)
    assert rep["structure_epoch"] is not None
    assert (out / "equation.txt").read_text().strip() == model["equation"]
    with open(out / "fitness_history.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0][:2] == ["epoch", "best_fitness"] and len(rows) == 202


def test_validate_wave_report(wave_run, tmp_path, capsys):
    _, out = wave_run
    vout = tmp_path / "val"
    assert run("validate", out / "report.json", "--out", vout) == cli.EXIT_OK
    val = json.loads((vout / "validation.json").read_text())
    assert val["metrics"]["relative_rmse"] <= 1e-2
    for name in ("rmse_map", "mae_map", "solution"):
        assert (vout / name / "meta.json").is_file()
    rmse_map = np.loadtxt(vout / "rmse_map" / "data.csv")
    assert rmse_map[0] <= 1e-12 and rmse_map[-1] <= 1e-12
    with open(vout / "center_series.csv") as fh:
        assert next(csv.reader(fh)) == ["t", "reference", "solution"]
    assert "relative_rmse=" in capsys.readouterr().out


def test_validate_shape_mismatch(wave_run, tmp_path):
    _, out = wave_run
    ref = GridField(("t", "x"), (10, 12), (0.05, 0.1), (0.0, 0.0), np.zeros((10, 12)))
    save_grid(ref, tmp_path / "ref")
    code = run("validate", out / "report.json", "--out", tmp_path / "v",
               "--set", f"reference={json.dumps(str(tmp_path / 'ref'))}")
    assert code == cli.EXIT_INPUT


def test_validate_degenerate_report(wave_run, tmp_path):
    _, out = wave_run
    rep = json.loads((out / "report.json").read_text())
    rep["model"]["degenerate"] = True
    path = tmp_path / "report.json"
    path.write_text(json.dumps(rep))
    assert run("validate", path, "--out", tmp_path / "v") == cli.EXIT_DEGENERATE


def test_validate_missing_report(tmp_path):
    assert run("validate", tmp_path / "nope.json", "--out", tmp_path / "v") == cli.EXIT_INPUT
    assert run("validate", "--out", tmp_path / "v") == cli.EXIT_INPUT


def test_empty_dataset_dir(tmp_path):
    (tmp_path / "empty").mkdir()
    cfg = write_config(tmp_path, {"data": {"dataset": str(tmp_path / "empty")}})
    assert run("discover-pde", "--config", cfg, "--out", tmp_path / "o") == cli.EXIT_INPUT


def test_loaded_dataset_matches_synthetic(tmp_path):
    spec = cli.synthetic_spec(cli.build_config("discover-pde", SMALL_PDE), 0)
    from eqdisc.pdelab import generate_field
    save_grid(generate_field(spec), tmp_path / "data")
    a = cli.build_config("discover-pde", SMALL_PDE)
    b = cli.build_config("discover-pde", SMALL_PDE,
                         [f"data.dataset={json.dumps(str(tmp_path / 'data'))}"])
    ra = cli.cmd_discover_pde(a, str(tmp_path / "a")).as_dict(timings=False)
    rb = cli.cmd_discover_pde(b, str(tmp_path / "b")).as_dict(timings=False)
    assert ra["model"] == rb["model"]


# --- discover-floquet ----------------------------------------------------------------

@pytest.fixture(scope="module")
def floquet_run(tmp_path_factory):
    base = tmp_path_factory.mktemp("floq")
    cfg = write_config(base, SMALL_FLOQUET)
    out = base / "out"
    return run("discover-floquet", "--config", cfg, "--seed", 2, "--out", out), out


def test_floquet_outputs(floquet_run):
    code, out = floquet_run
    assert code in (cli.EXIT_OK, cli.EXIT_DEGENERATE)
    rep = json.loads((out / "report.json").read_text())
    assert rep["n_samples"] == 12
    with open(out / "samples.csv") as fh:
        assert next(csv.reader(fh)) == ["omega", "lambda", "lambda_imag"]
    if not rep["model"]["degenerate"]:
        assert "roots_rmse_oracle" in rep["metrics"]
        cmp = rep["metrics"]["oracle_vs_closed_form"]
        assert cmp["pointwise"]["agrees"] is False
        with open(out / "roots.csv") as fh:
            header = next(csv.reader(fh))
        assert header[:5] == ["omega", "re_root1", "im_root1", "re_root2", "im_root2"]
        assert (out / "bands.csv").is_file()


def test_validate_rejects_floquet_report(floquet_run, tmp_path):
    _, out = floquet_run
    assert run("validate", out / "report.json", "--out", tmp_path / "v") == cli.EXIT_INPUT


def test_floquet_precondition(tmp_path):
    code = run("discover-floquet", "--set", "floquet.npts=2", "--out", tmp_path / "o")
    assert code == cli.EXIT_INPUT


def test_floquet_csv_input(tmp_path):
    (tmp_path / "d.csv").write_text("omega,lambda\n0.1,1.0\n0.2,0.9\n0.3,0.7\n0.4,0.5\n")
    cfg = write_config(tmp_path, dict(SMALL_FLOQUET,
                                      floquet={"dataset": str(tmp_path / "d.csv")}))
    code = run("discover-floquet", "--config", cfg, "--out", tmp_path / "o")
    assert code in (cli.EXIT_OK, cli.EXIT_DEGENERATE)
    assert json.loads((tmp_path / "o" / "report.json").read_text())["n_samples"] == 4


# --- configuration -----------------------------------------------------------------------

def test_unknown_config_key(tmp_path):
    cfg = write_config(tmp_path, {"evolution": {"n_epoch": 3}})
    assert run("discover-pde", "--config", cfg, "--out", tmp_path / "o") == cli.EXIT_INPUT
    assert run("discover-pde", "--set", "evolution.n_epoch=3",
               "--out", tmp_path / "o") == cli.EXIT_INPUT
    assert run("discover-pde", "--set", "evolution", "--out", tmp_path / "o") == cli.EXIT_INPUT
    with pytest.raises(cli.ConfigError):
        cli.build_config("discover-pde", {"bogus": 1})


def test_overrides_win_over_file():
    cfg = cli.build_config("discover-pde", {"evolution": {"n_epochs": 50}},
                           ["evolution.n_epochs=150", "smoothing.enabled=true",
                            "selection.selector=fitness"], seed=7, out="x")
    assert cfg["evolution"]["n_epochs"] == 150 and cfg["smoothing"]["enabled"] is True
    assert cfg["selection"]["selector"] == "fitness"
    assert cfg["seed"] == 7 and cfg["out"] == "x"
    assert cli.DEFAULTS["discover-pde"]["evolution"]["n_epochs"] == 200


def test_defaults_mirror_evolution_config():
    ecfg = cli.evolution_config(cli.build_config("discover-pde"), 3)
    assert ecfg.seed == 3
    assert (ecfg.n_pop, ecfg.n_terms, ecfg.k, ecfg.r_mutation, ecfg.r_crossover) == (
        10, 8, 3, 0.4, 0.4)


def test_bad_selector(tmp_path):
    code = run("discover-pde", "--set", "selection.selector=best", "--set",
               "evolution.n_epochs=1", "--out", tmp_path / "o")
    assert code == cli.EXIT_INPUT


def test_stage_exit_codes():
    for exc, code in ((ResonanceError("x"), cli.EXIT_NUMERIC), (KeyError("k"), cli.EXIT_INPUT),
                      (cli.ConfigError("c"), cli.EXIT_INPUT)):
        with pytest.raises(cli.StageError) as info:
            with cli.stage("s"):
                raise exc
        assert info.value.code == code and str(info.value).startswith("[s]")


# --- serialisation ---------------------------------------------------------------------------

def test_token_and_model_round_trip():
    for tok in (DerivativeToken(1, 2, "x"), DerivativeToken(0, 0), CosToken(6.0, 1)):
        assert cli.token_from_json(json.loads(json.dumps(cli.token_to_json(tok)))) == tok
    with pytest.raises(cli.ConfigError):
        cli.token_from_json({"kind": "sin"})
    term = Term.of(DerivativeToken(0, 1, "t"), DerivativeToken(1, 1, "x"))
    assert cli.term_from_json(cli.term_to_json(term)) == term


def test_clean_handles_numpy_and_infinity(tmp_path):
    path = tmp_path / "x.json"
    cli.dump_json({"a": np.float64(1.5), "b": (1, 2), "c": float("inf"), "d": np.int64(3)},
                  str(path))
    assert json.loads(path.read_text()) == {"a": 1.5, "b": [1, 2], "c": "inf", "d": 3}


# --- determinism ------------------------------------------------------------------------

def normalised_report(out_dir, workers=None):
    data = report_without_timings(out_dir)
    if workers is not None:
        data["config"]["evolution"]["workers"] = workers
    return json.dumps(data, sort_keys=True, indent=2)


@pytest.mark.parametrize("command,small", [("discover-pde", SMALL_PDE),
                                           ("discover-floquet", SMALL_FLOQUET)])
def test_reports_byte_identical(tmp_path, command, small):
    out = tmp_path / "out"
    texts, histories = [], []
    for i, workers in enumerate((1, 1, 2)):
        cfg = json.loads(json.dumps(small))
        cfg["evolution"]["workers"] = workers
        path = write_config(tmp_path, cfg, f"c{i}.json")
        assert run(command, "--config", path, "--seed", 3, "--out", out) in (0, 4)
        texts.append(normalised_report(out, workers=1))
        histories.append((out / "fitness_history.csv").read_bytes())
    assert texts[0] == texts[1] == texts[2]
    assert histories[0] == histories[1] == histories[2]
    # the file itself differs only in the timings block
    raw = json.loads((out / "report.json").read_text())
    assert set(raw) - set(json.loads(texts[0])) == {"timings"}


def test_config_echo_round_trip(tmp_path):
    first = tmp_path / "first"
    assert run("discover-pde", "--config", write_config(tmp_path, SMALL_PDE), "--seed", 5,
               "--out", first) == 0
    rep = json.loads((first / "report.json").read_text())
    echo = write_config(tmp_path, rep["config"], "echo.json")
    second = tmp_path / "second"
    assert run("discover-pde", "--config", echo, "--seed", rep["seed"], "--out", second) == 0
    assert report_without_timings(second)["model"] == rep["model"]


def test_multiple_runs_serial_and_parallel(tmp_path):
    cfg = write_config(tmp_path, SMALL_FLOQUET)
    for name, workers in (("serial", 1), ("parallel", 2)):
        code = run("discover-floquet", "--config", cfg, "--runs", 3, "--seed", 10,
                   "--set", f"workers={workers}", "--out", tmp_path / name)
        assert code in (0, 4)
    serial = (tmp_path / "serial" / "summary.csv").read_text()
    assert serial == (tmp_path / "parallel" / "summary.csv").read_text()
    rows = list(csv.reader(serial.splitlines()))
    assert [r[1] for r in rows[1:]] == ["10", "11", "12"]
    for i in range(3):
        a = report_without_timings(tmp_path / "serial" / f"run_{i:03d}")
        b = report_without_timings(tmp_path / "parallel" / f"run_{i:03d}")
        for rep in (a, b):
            # the echo records where and how the batch was launched
            del rep["config"]["out"], rep["config"]["workers"]
        assert a == b


def test_sweep_writes_distribution(tmp_path):
    cfg = write_config(tmp_path, {"npts_grid": [10, 14], "lambdas": [1e-4, 1e-3],
                                  "base": {"evolution": {"n_epochs": 3}}})
    assert run("sweep", "--config", cfg, "--runs", 2, "--out", tmp_path / "s") == 0
    with open(tmp_path / "s" / "distribution.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 8
    assert {r["cell"] for r in rows} == {"npts_10_lambda_0.0001", "npts_10_lambda_0.001",
                                         "npts_14_lambda_0.0001", "npts_14_lambda_0.001"}
    summary = json.loads((tmp_path / "s" / "sweep.json").read_text())
    assert len(summary["cells"]) == 4
