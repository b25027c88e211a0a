import csv
import io

import numpy as np
import pytest

from rolmpc import cli


def test_zero_iterations_is_a_usage_error(tmp_path, capsys):
    with pytest.raises(SystemExit) as exc:
        cli.main(["run", "--iters", "0", "--out", str(tmp_path)])
    assert exc.value.code == 2
    assert "positive" in capsys.readouterr().err


def test_unknown_kind_rejected(tmp_path):
    with pytest.raises(SystemExit):
        cli.main(["plot-data", "surfaces", str(tmp_path)])


def test_missing_run_directory(tmp_path, capsys):
    assert cli.main(["validate", str(tmp_path / "nope")]) == 2


def test_config_file(tmp_path):
    path = tmp_path / "c.yaml"
    path.write_text("lmpc:\n  N: 12\n  rpi:\n    seed: 4\nplant:\n  L_true: 0.001\n")
    cfg = cli.load_config(str(path))
    assert cfg.lmpc.N == 12 and cfg.lmpc.rpi.seed == 4 and cfg.plant.L_true == 0.001
    assert cli.load_config(None).lmpc.N == 10


def _table(capsys, argv):
    assert cli.main(argv) == 0
    return list(csv.reader(io.StringIO(capsys.readouterr().out)))


@pytest.fixture
def run_dir(demo_run):
    if demo_run.error is not None:
        pytest.skip("demo run aborted")
    return demo_run.dir


def test_plot_costs(run_dir, capsys):
    rows = _table(capsys, ["plot-data", "costs", run_dir])
    assert rows[0] == ["iteration", "steps", "cost"]
    body = rows[1:]
    assert [int(r[0]) for r in body] == [1, 2, 3, 4, 5]
    costs = [float(r[2]) for r in body]
    assert all(b <= a for a, b in zip(costs, costs[1:]))


def test_plot_tables_shapes(run_dir, demo_run, capsys, tmp_path):
    rows = _table(capsys, ["plot-data", "trajectories", run_dir])
    assert len(rows) - 1 == sum(r.x.shape[0] for r in demo_run.records)
    assert len(rows[0]) == 2 + 3 + 2
    rows = _table(capsys, ["plot-data", "supports", run_dir])
    assert len(rows) == 6 and np.isclose(float(rows[1][1]), demo_run.arts[0].support.trace, rtol=1e-10)
    rows = _table(capsys, ["plot-data", "solve-times", run_dir])
    assert len(rows) - 1 == sum(r.steps for r in demo_run.records[1:])
    out = tmp_path / "t.csv"
    assert cli.main(["plot-data", "tightened", run_dir, "--out", str(out)]) == 0
    assert len(out.read_text().splitlines()) == 6
