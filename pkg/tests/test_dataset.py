import numpy as np
import pytest

from optsub.dataset import CsvSchema, Dataset, load_csv, write_csv
from optsub.errors import ParseError, SchemaMismatch


def test_load_three_rows(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("a,b,y\n1,2,0\n3.5,-1,1\n0,0,1\n")
    data = load_csv(p, CsvSchema(response="y"))
    assert data.n == 3 and data.d == 2
    assert data.names == ("a", "b")
    np.testing.assert_array_equal(data.X, [[1, 2], [3.5, -1], [0, 0]])
    np.testing.assert_array_equal(data.y, [0, 1, 1])
    assert data.rejected_rows == 0


def test_intercept_only_when_asked(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("a,y\n2,1\n")
    assert load_csv(p).d == 1
    with_int = load_csv(p, CsvSchema(add_intercept=True))
    np.testing.assert_array_equal(with_int.X, [[1.0, 2.0]])
    assert with_int.names == ("intercept", "a")


def test_malformed_row_names_line(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("a,y\n1,0\nfoo,1\n2,1\n")
    with pytest.raises(ParseError) as err:
        load_csv(p)
    assert err.value.line == 3
    assert "line 3" in str(err.value)


def test_lenient_mode_counts_rejects(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("a,y\n1,0\nfoo,1\n2,1\n3\n")
    data = load_csv(p, CsvSchema(strict=False))
    assert data.n == 2 and data.rejected_rows == 2


def test_missing_columns(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("a,b\n1,2\n")
    with pytest.raises(SchemaMismatch):
        load_csv(p, CsvSchema(response="y"))
    with pytest.raises(SchemaMismatch):
        load_csv(p, CsvSchema(response="b", covariates=("c",)))


def test_trials_column(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("x,y,k\n1,2,5\n0.5,0,3\n")
    data = load_csv(p, CsvSchema(trials="k"))
    np.testing.assert_array_equal(data.k, [5, 3])
    assert data.d == 1


def test_round_trip(tmp_path, rng):
    X = rng.standard_normal((40, 3)) * 10 ** rng.uniform(-5, 5, (40, 3))
    y = rng.standard_normal(40)
    k = rng.integers(1, 9, 40)
    data = Dataset(X, y, k, names=("p", "q", "r"))
    p = tmp_path / "rt.csv"
    write_csv(data, p)
    back = load_csv(p, CsvSchema(trials="k"))
    assert back.equals(data)


def test_dataset_is_immutable():
    data = Dataset(np.eye(2), [1.0, 2.0])
    with pytest.raises(ValueError):
        data.X[0, 0] = 5.0
    with pytest.raises(Exception):
        data.y = np.zeros(2)


def test_dataset_validation():
    with pytest.raises(SchemaMismatch):
        Dataset(np.ones((3, 2)), np.ones(2))
    with pytest.raises(SchemaMismatch):
        Dataset(np.array([[np.nan]]), [1.0])
    with pytest.raises(SchemaMismatch):
        Dataset(np.ones((2, 1)), [1.0, 1.0], k=[1.0, 0.0])


def test_blocks_cover_all_rows(rng):
    data = Dataset(rng.standard_normal((23, 2)), rng.standard_normal(23))
    starts, rows = [], []
    for start, X, y, k in data.blocks(5):
        starts.append(start)
        rows.append(X)
    assert starts == [0, 5, 10, 15, 20]
    np.testing.assert_array_equal(np.vstack(rows), data.X)
