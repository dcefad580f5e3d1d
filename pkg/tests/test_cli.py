import json

import numpy as np
import pytest

from groupfts.cli import build_parser, run
from groupfts.data import ingest


@pytest.fixture(scope="module")
def fixture_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("sim")
    assert run(["simulate", "--shape", "2x2", "--years", "20", "--max-age", "10", "--seed", "3", "--out", str(d)]) == 0
    return d


def paths(d):
    return ["--rates", str(d / "rates.csv"), "--exposures", str(d / "exposures.csv"), "--structure", str(d / "structure.json")]


def test_simulate_is_byte_reproducible(tmp_path, fixture_dir):
    assert run(["simulate", "--shape", "2x2", "--years", "20", "--max-age", "10", "--seed", "3", "--out", str(tmp_path)]) == 0
    for name in ("rates.csv", "exposures.csv", "structure.json"):
        assert (tmp_path / name).read_bytes() == (fixture_dir / name).read_bytes()


def test_config_echo(fixture_dir):
    rec = json.loads((fixture_dir / "config.json").read_text())
    assert rec["command"] == "simulate" and rec["config"]["seed"] == 3


def test_forecast_csv(tmp_path, fixture_dir, capsys):
    code = run(["forecast", "--rates", str(fixture_dir / "rates.csv"), "--series", "R1*F", "--horizon", "3", "--out", str(tmp_path)])
    assert code == 0
    lines = (tmp_path / "forecast_dynamic.csv").read_text().splitlines()
    assert lines[0] == "series_id,horizon,age,point,lower,upper,alpha"
    assert len(lines) == 1 + 3 * 11
    sid, h, age, pt, lo, up, alpha = lines[1].split(",")
    assert sid == "R1*F" and float(lo) <= float(pt) <= float(up) and float(alpha) == 0.2


def test_dynamic_small_bandwidth_equals_static(tmp_path, fixture_dir):
    base = ["forecast", "--rates", str(fixture_dir / "rates.csv"), "--horizon", "4", "--no-intervals"]
    assert run(base + ["--mode", "dynamic", "--bandwidth", "0.5", "--out", str(tmp_path / "d")]) == 0
    assert run(base + ["--mode", "static", "--out", str(tmp_path / "s")]) == 0
    d = np.genfromtxt(tmp_path / "d/forecast_dynamic.csv", delimiter=",", skip_header=1, usecols=3)
    s = np.genfromtxt(tmp_path / "s/forecast_static.csv", delimiter=",", skip_header=1, usecols=3)
    np.testing.assert_allclose(d, s, rtol=1e-10)


def test_decompose_json(tmp_path, fixture_dir):
    assert run(["decompose", "--rates", str(fixture_dir / "rates.csv"), "--mode", "both", "--out", str(tmp_path)]) == 0
    for mode in ("static", "dynamic"):
        payload = json.loads((tmp_path / f"decomposition_{mode}.json").read_text())
        # simulated files hold bottom rates only; aggregates are derived on ingest
        bottoms = ingest(*[fixture_dir / n for n in ("rates.csv", "exposures.csv", "structure.json")]).structure.bottom_ids
        assert set(payload) == set(bottoms)
        assert payload["R1*F"]["mode"] == mode


@pytest.mark.parametrize("method", ["bottom-up", "ols"])
def test_reconcile_is_coherent(tmp_path, fixture_dir, method):
    assert run(["reconcile", *paths(fixture_dir), "--method", method, "--horizon", "3", "--out", str(tmp_path)]) == 0
    rows = np.genfromtxt(tmp_path / f"reconciled_{method}_dynamic.csv", delimiter=",", skip_header=1, dtype=None, encoding=None)
    assert len(rows) == 9 * 3 * 11


def test_backtest_counts(tmp_path, fixture_dir):
    code = run(["backtest", *paths(fixture_dir), "--horizon", "8", "--interval-horizon", "3", "--workers", "2", "--out", str(tmp_path)])
    assert code == 0
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["forecast_counts"] == [20 - 12 - h + 1 for h in range(1, 9)]
    assert (tmp_path / "plot_data.csv").exists()


def test_backtest_interval_horizon_capped_by_point_horizon(tmp_path, fixture_dir):
    # default interval horizon (15) exceeds the point horizon here
    code = run(["backtest", *paths(fixture_dir), "--initial-train", "16", "--horizon", "2", "--out", str(tmp_path)])
    assert code == 0
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["forecast_counts"] == [4, 3]


def test_smooth(tmp_path, fixture_dir):
    assert run(["smooth", "--rates", str(fixture_dir / "rates.csv"), "--penalty", "1", "--out", str(tmp_path)]) == 0
    assert (tmp_path / "smoothed_rates.csv").read_text().startswith("series_id,year,age,rate")


def test_delta_out_of_range(tmp_path, fixture_dir, capsys):
    code = run(["decompose", "--rates", str(fixture_dir / "rates.csv"), "--delta", "1.5", "--out", str(tmp_path)])
    assert code == 2
    assert "(0, 1]" in capsys.readouterr().err


def test_argparse_errors_exit_2(capsys):
    with pytest.raises(SystemExit) as exc:
        run(["forecast", "--mode", "sideways"])
    assert exc.value.code == 2


def test_missing_file_exit_3(tmp_path):
    assert run(["forecast", "--rates", str(tmp_path / "none.csv"), "--out", str(tmp_path)]) == 3


def test_bad_data_exit_3(tmp_path):
    (tmp_path / "r.csv").write_text("series_id,year,age,rate\na,2000,0,-1\na,2000,1,0.1\n")
    assert run(["forecast", "--rates", str(tmp_path / "r.csv"), "--out", str(tmp_path)]) == 3


def test_numeric_failure_exit_4(tmp_path, monkeypatch):
    from groupfts import cli
    from groupfts.errors import NumericalError

    def boom(*a, **k):
        raise NumericalError("singular")

    monkeypatch.setitem(cli.COMMANDS, "smooth", boom)
    assert run(["smooth", "--rates", "x", "--out", str(tmp_path)]) == 4


def test_help_lists_commands():
    text = build_parser().format_help()
    for cmd in ("simulate", "smooth", "decompose", "forecast", "reconcile", "backtest"):
        assert cmd in text
