import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from latent_chain.io import (
    ModelFileError,
    dumps_model,
    load_model,
    model_from_dict,
    model_to_dict,
    read_sequence_csv,
    read_table_csv,
    save_model,
    write_sequence_csv,
    write_table_csv,
)
from latent_chain.models import ContinuousSsmParams, DiscreteSsmParams, LgssmParams

from _helpers import random_hmm, random_lgssm

finite = st.floats(-1e300, 1e300, allow_nan=False, allow_infinity=False)


def assert_same(a, b):
    da, db = model_to_dict(a), model_to_dict(b)
    assert da == db


@pytest.mark.parametrize("make", [
    lambda r: random_hmm(r, 3, V=4),
    lambda r: random_hmm(r, 2, "gaussian", p=3),
    lambda r: random_lgssm(r, 2, 3),
    lambda r: random_lgssm(r, 3, 1, d=2),
    lambda r: ContinuousSsmParams(r.standard_normal((2, 2)), r.standard_normal((2, 1)),
                                  r.standard_normal((1, 2)), [[0.5]]),
    lambda r: ContinuousSsmParams(r.standard_normal((2, 2)), np.zeros((2, 0)), r.standard_normal((1, 2))),
    lambda r: DiscreteSsmParams(r.standard_normal((2, 2)), r.standard_normal((2, 1)),
                                r.standard_normal((3, 2)), step_size=0.1, rule="zoh"),
])
def test_model_round_trip(tmp_path, rng, make):
    params = make(rng)
    path = tmp_path / "m.json"
    save_model(params, path)
    back = load_model(path)
    assert type(back) is type(params)
    assert_same(params, back)
    assert dumps_model(back) == path.read_text()


def test_model_file_errors(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ModelFileError):
        load_model(bad)
    with pytest.raises(ModelFileError, match="family"):
        model_from_dict({"family": "garch"})
    with pytest.raises(ModelFileError, match="A"):
        model_from_dict({"family": "lgssm"})
    with pytest.raises(ModelFileError):
        model_from_dict({"family": "ssm_discrete", "A_bar": [[1.0]], "B_bar": [[1.0]], "C": [["x"]]})
    with pytest.raises(ModelFileError):
        model_from_dict([1, 2])
    doc = model_to_dict(random_hmm(np.random.default_rng(0), 2))
    doc["num_states"] = 5
    with pytest.raises(ModelFileError):
        model_from_dict(doc)


def test_lgssm_without_inputs_round_trips_empty_b(rng):
    doc = json.loads(dumps_model(random_lgssm(rng, 2, 1)))
    assert doc["B"] == [[], []] and doc["input_dim"] == 0
    assert model_from_dict(doc).B.shape == (2, 0)


@given(st.lists(st.integers(0, 50), min_size=1, max_size=40))
def test_categorical_csv_round_trip(tmp_path_factory, ys):
    path = tmp_path_factory.mktemp("c") / "s.csv"
    write_sequence_csv(path, ys, categorical=True)
    seq = read_sequence_csv(path)
    assert seq.categorical and seq.x is None and seq.y.tolist() == ys


@given(st.integers(1, 30), st.integers(1, 3), st.integers(0, 2), st.data())
def test_continuous_csv_round_trip_is_exact(tmp_path_factory, T, p, d, data):
    y = np.array(data.draw(st.lists(finite, min_size=T * p, max_size=T * p))).reshape(T, p)
    x = np.array(data.draw(st.lists(finite, min_size=T * d, max_size=T * d))).reshape(T, d) if d else None
    path = tmp_path_factory.mktemp("f") / "s.csv"
    write_sequence_csv(path, y, x)
    seq = read_sequence_csv(path)
    assert not seq.categorical
    assert np.array_equal(seq.y, y)
    assert (seq.x is None) if d == 0 else np.array_equal(seq.x, x)


def test_headerless_csv(tmp_path):
    (tmp_path / "a.csv").write_text("0\n2\n1\n")
    assert read_sequence_csv(tmp_path / "a.csv").categorical
    (tmp_path / "b.csv").write_text("0.5\n1.5\n")
    seq = read_sequence_csv(tmp_path / "b.csv")
    assert not seq.categorical and seq.y.shape == (2, 1)
    (tmp_path / "c.csv").write_text("0.5,1\n1.5,2\n")
    assert read_sequence_csv(tmp_path / "c.csv").y.shape == (2, 2)


@pytest.mark.parametrize("text", ["", "y0,y1\n1,2\n3\n", "y1,y0\n1,2\n", "y0,z\n1,2\n", "y\n1.5\n",
                                  "y0\nabc\n"])
def test_bad_csv_rejected(tmp_path, text):
    path = tmp_path / "bad.csv"
    path.write_text(text)
    with pytest.raises(ModelFileError):
        read_sequence_csv(path)


def test_table_csv_round_trip(tmp_path):
    path = tmp_path / "t.csv"
    write_table_csv(path, ["iteration", "log_likelihood"], [(0, -12.345678901234567), (1, -3.0)])
    header, data = read_table_csv(path)
    assert header == ["iteration", "log_likelihood"]
    assert data[0, 1] == -12.345678901234567


def test_atomic_write_leaves_no_temp_files(tmp_path, rng):
    save_model(LgssmParams.create([[1.0]], [[1.0]], [[1.0]], [[1.0]], [0.0], [[1.0]]), tmp_path / "m.json")
    assert [p.name for p in tmp_path.iterdir()] == ["m.json"]
