import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from parafun.errors import MatrixMarketError
from parafun.mmio import read_matrix, write_matrix
from parafun.reference import laplacian_1d


def test_identity_round_trip(tmp_path):
    path = tmp_path / "eye.mtx"
    write_matrix(path, np.eye(2))
    assert read_matrix(path).tobytes() == np.eye(2).tobytes()
    assert path.read_text().splitlines()[0].split()[2] == "array"


def test_laplacian_round_trip(tmp_path):
    a = laplacian_1d(8)
    write_matrix(tmp_path / "lap.mtx", a)
    assert np.array_equal(read_matrix(tmp_path / "lap.mtx"), a)


@given(arrays(np.float64, st.tuples(st.integers(1, 5), st.integers(1, 5)),
              elements=st.floats(-1e300, 1e300, allow_nan=False)))
def test_round_trip_is_exact(tmp_path_factory, m):
    path = tmp_path_factory.mktemp("mm") / "m.mtx"
    write_matrix(path, m)
    assert np.array_equal(read_matrix(path), m)


def test_symmetric_coordinate_expands(tmp_path):
    path = tmp_path / "sym.mtx"
    path.write_text("%%MatrixMarket matrix coordinate real symmetric\n"
                    "% lower triangle only\n"
                    "3 3 4\n1 1 2.0\n2 1 -1.0\n3 2 -1.5\n3 3 4.0\n")
    expect = np.array([[2.0, -1.0, 0.0], [-1.0, 0.0, -1.5], [0.0, -1.5, 4.0]])
    assert np.array_equal(read_matrix(path), expect)


def test_symmetric_array_expands(tmp_path):
    path = tmp_path / "sym.mtx"
    path.write_text("%%MatrixMarket matrix array real symmetric\n2 2\n1.0\n3.0\n5.0\n")
    assert np.array_equal(read_matrix(path), [[1.0, 3.0], [3.0, 5.0]])


@pytest.mark.parametrize("text, line", [
    ("", 1),
    ("%%MatrixMarket matrix array complex general\n1 1\n1.0\n", 1),
    ("%%MatrixMarket vector array real general\n1 1\n1.0\n", 1),
    ("%MatrixMarket matrix array real general\n1 1\n1.0\n", 1),
    ("%%MatrixMarket matrix array real skew-symmetric\n1 1\n1.0\n", 1),
    ("%%MatrixMarket matrix array real general\n% note\n2 x\n", 3),
    ("%%MatrixMarket matrix coordinate real general\n2 2\n", 2),
    ("%%MatrixMarket matrix coordinate real symmetric\n2 3 1\n1 1 1.0\n", 2),
])
def test_malformed_header_reports_line(tmp_path, text, line):
    path = tmp_path / "bad.mtx"
    path.write_text(text)
    with pytest.raises(MatrixMarketError) as info:
        read_matrix(path)
    assert info.value.line == line
    assert f"line {line}" in str(info.value)


def test_write_rejects_vectors(tmp_path):
    with pytest.raises(ValueError):
        write_matrix(tmp_path / "v.mtx", np.ones(3))
