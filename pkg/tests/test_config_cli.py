import csv

import numpy as np
import pytest

from qplex_lab.cli import _seed_list, main
from qplex_lab.config import ExperimentConfig, PRESETS, parse_config, parse_pairs
from qplex_lab.errors import UsageError
from qplex_lab.experiment import SUMMARY_HEADER, compare_runs, read_curve, read_qtable, summarize

FAST = ["target_update_episodes=4", "eval_episodes=2", "dataset_episodes=18"]


def test_preset_expansion():
    cfg = parse_pairs([("preset", "harder-matrix-qplex")])
    assert (cfg.env, cfg.algo, cfg.lambda_layers, cfg.lambda_heads, cfg.regime) == \
           ("matrix/harder", "qplex", 3, 10, "offline")


def test_later_values_override_preset():
    cfg = parse_config("preset = harder-matrix-vdn\nseed=3  # comment\n", [("seed", "7")])
    assert cfg.seed == 7 and cfg.algo == "vdn"


def test_every_preset_is_valid():
    for name in PRESETS:
        parse_pairs([("preset", name)])


@pytest.mark.parametrize("pairs, needle", [
    ([("algo", "unknown")], "unknown"),
    ([("colour", "red")], "colour"),
    ([("seed", "x")], "seed"),
    ([("lambda_heads", "0")], "lambda_heads"),
    ([("env", "matrix/nope")], "env"),
    ([("preset", "nope")], "preset"),
    ([("gamma", "1.0")], "gamma"),
])
def test_bad_values_name_the_key(pairs, needle):
    with pytest.raises(UsageError, match=needle):
        parse_pairs(pairs)


def test_config_text_errors_and_booleans():
    with pytest.raises(UsageError, match="line 2"):
        parse_config("seed=1\nnonsense\n")
    assert parse_config("recurrent=yes").recurrent is True
    with pytest.raises(UsageError):
        parse_config("recurrent=maybe")


def test_as_lines_round_trip():
    cfg = ExperimentConfig(seed=4, lr=1e-3, recurrent=True)
    assert parse_config("\n".join(cfg.as_lines())).as_lines() == cfg.as_lines()


def test_seed_list():
    assert _seed_list("0-2,5") == [0, 1, 2, 5]
    with pytest.raises(UsageError):
        _seed_list("a-b")


def _run(tmp_path, name, *extra):
    out = tmp_path / name
    assert main(["run", "--out", str(out), *extra]) == 0
    return out


def test_offline_run_files_and_row_count(tmp_path):
    out = _run(tmp_path, "a", "--preset", "harder-matrix-qmix", "--total-iterations", "5", "--eval-every", "2",
               *FAST)
    rows = read_curve(out / "curve.csv")
    assert len(rows) == 5 // 2 + 1
    assert [r["step"] for r in rows] == sorted({r["step"] for r in rows})
    assert read_qtable(out / "qtable.csv").shape == (3, 3)
    meta = (out / "meta.txt").read_text()
    assert "algo=qmix" in meta and "seed=0" in meta and "version=" in meta
    assert (out / "dataset.txt").exists()


def test_rerun_is_byte_identical(tmp_path):
    args = ["--preset", "harder-matrix-qplex", "--total-iterations", "2", "lambda_layers=1", "lambda_heads=2", *FAST]
    a, b = _run(tmp_path, "a", *args), _run(tmp_path, "b", *args)
    assert (a / "curve.csv").read_bytes() == (b / "curve.csv").read_bytes()
    assert (a / "qtable.csv").read_bytes() == (b / "qtable.csv").read_bytes()


def test_online_row_count(tmp_path):
    out = _run(tmp_path, "o", "--env", "mmdp", "--algo", "vdn", "--regime", "online", "--total-env-steps", "250",
               "--eval-every", "100", "eval_episodes=1")
    assert len(read_curve(out / "curve.csv")) == 250 // 100 + 1
    assert not (out / "qtable.csv").exists()


def test_run_from_config_file_and_dataset_path(tmp_path, capsys):
    data = tmp_path / "d.txt"
    assert main(["dataset", "--env", "matrix/original", "--episodes", "9", "--mode", "exhaustive",
                 "--out", str(data)]) == 0
    assert "9 episodes" in capsys.readouterr().out
    conf = tmp_path / "c.cfg"
    conf.write_text(f"preset=original-matrix-qplex\nlambda_layers=1\nlambda_heads=2\ndataset={data}\n"
                    "total_iterations=1\ntarget_update_episodes=3\neval_episodes=1\n")
    out = _run(tmp_path, "f", "--config", str(conf))
    assert not (out / "dataset.txt").exists()
    assert main(["run", "--config", str(conf), "--out", str(tmp_path / "g"), "env=matrix/harder"]) == 2


def test_seed_sweep_and_compare(tmp_path):
    base = tmp_path / "sweep"
    assert main(["run", "--preset", "harder-matrix-vdn", "--seeds", "0-1", "--out", str(base),
                 "total_iterations=1", *FAST]) == 0
    runs = [str(base / "seed0"), str(base / "seed1")]
    report = tmp_path / "r.csv"
    assert main(["compare", *runs, "--report", str(report)]) == 0
    with open(report) as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == SUMMARY_HEADER
    assert {r[0] for r in rows[1:]} == {"vdn"} and {r[2] for r in rows[1:]} == {"2"}


def test_cli_usage_errors(tmp_path, capsys):
    assert main(["run", "--algo", "unknown"]) == 2
    assert "unknown" in capsys.readouterr().err
    assert main(["run", "--config", str(tmp_path / "missing.cfg")]) == 2
    assert main(["compare", str(tmp_path / "nothing"), "--report", str(tmp_path / "r.csv")]) == 2
    assert "curve" in capsys.readouterr().err
    assert main(["accept", "--only", "99"]) == 2


def _curve(returns, norms=None):
    norms = norms if norms is not None else [0.0] * len(returns)
    return [{"step": 10 * i, "episode": i, "return": r, "q_inf_norm": q, "loss": 0.0}
            for i, (r, q) in enumerate(zip(returns, norms))]


def test_summary_single_run_is_itself():
    (row,) = summarize({"qplex": [_curve([3.5])]})
    assert row[:6] == ["qplex", 0, 1, 3.5, 3.5, 3.5]


def test_summary_identical_runs_zero_band():
    table = summarize({"vdn": [_curve([1.0, 2.0], [4.0, 5.0])] * 6})
    for row in table:
        assert row[3] == row[4] == row[5] and row[6] == row[7] == row[8]


def test_summary_quartiles_by_order_statistics():
    # values 1..6: linear interpolation gives rank (n-1)p, i.e. 2.25, 3.5, 4.75
    curves = [_curve([float(v)], [float(10 * v)]) for v in (6, 2, 4, 1, 5, 3)]
    (row,) = summarize({"qmix": curves})
    assert row[3:6] == [3.5, 2.25, 4.75]
    assert row[6:9] == [35.0, 22.5, 47.5]


def test_malformed_curve_is_named(tmp_path):
    d = tmp_path / "run"
    d.mkdir()
    (d / "curve.csv").write_text("step,episode,return,q_inf_norm,loss\n0,0,abc,0,0\n")
    with pytest.raises(UsageError, match="curve.csv"):
        compare_runs([str(d)], tmp_path / "r.csv")
    (d / "curve.csv").write_text("a,b\n")
    with pytest.raises(UsageError, match="header"):
        compare_runs([str(d)], tmp_path / "r.csv")


def test_csv_round_trip(tmp_path):
    out = _run(tmp_path, "rt", "--preset", "harder-matrix-vdn", "total_iterations=1", *FAST)
    with open(out / "curve.csv") as fh:
        raw = list(csv.reader(fh))[1:]
    parsed = read_curve(out / "curve.csv")
    assert [repr(r["return"]) for r in parsed] == [x[2] for x in raw]
    assert np.isfinite(read_qtable(out / "qtable.csv")).all()


def test_accept_only_fast_criteria(capsys, tmp_path, monkeypatch):
    monkeypatch.setenv("QPLEX_LAB_OUT", str(tmp_path))
    assert main(["accept", "--only", "6"]) == 0
    assert "criterion 6 [PASS]" in capsys.readouterr().out
