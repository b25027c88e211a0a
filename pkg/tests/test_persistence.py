import json

import numpy as np
import pytest

from rolmpc.lmpc import IterationRecord
from rolmpc.persistence import (
    artifacts_from_dict,
    artifacts_to_dict,
    read_iteration,
    record_lines,
    write_iteration,
)


@pytest.fixture
def record(rng):
    T = 7
    return IterationRecord(3, rng.normal(size=(T + 1, 3)), rng.normal(size=(T, 2)), rng.normal(size=(T, 3)),
                           rng.normal(size=(T + 1, 3)), rng.normal(size=(T, 2)), rng.random(T),
                           rng.random(T), np.zeros((2, 0)))


def test_record_lines_layout(record):
    lines = record_lines(record)
    assert len(lines) == record.steps + 1
    last = json.loads(lines[-1])
    assert last["u"] is None and last["J"] is None and last["t"] == record.steps
    assert list(json.loads(lines[0])) == sorted(json.loads(lines[0]))


def test_iteration_round_trip_is_exact(record, tmp_path):
    name = write_iteration(str(tmp_path), record)
    back = read_iteration(str(tmp_path / name))
    for key in ("x", "u", "d", "x_bar", "u_bar", "J", "solve_ms"):
        assert np.array_equal(getattr(back, key), getattr(record, key)), key
    assert back.j == record.j
    assert record_lines(back) == record_lines(record)


def test_empty_file_rejected(tmp_path):
    (tmp_path / "iteration_1.jsonl").write_text("")
    with pytest.raises(ValueError):
        read_iteration(str(tmp_path / "iteration_1.jsonl"))


def test_artifacts_round_trip(demo_run):
    if demo_run.error is not None:
        pytest.skip("demo run aborted")
    for a in demo_run.arts:
        d = artifacts_to_dict(a)
        assert json.dumps(artifacts_to_dict(artifacts_from_dict(d)), sort_keys=True) == json.dumps(d, sort_keys=True)
