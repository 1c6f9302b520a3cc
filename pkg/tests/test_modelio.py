import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mrvr.baseline import fit_baseline
from mrvr.errors import DataError, ModelFormatError
from mrvr.fast import fit_fast
from mrvr.kernels import KernelConfig
from mrvr.modelio import HEADER, dumps_model, load_model, load_table, loads_model, save_model, write_table
from mrvr.sim import two_output_dataset


@pytest.fixture(scope="module")
def models():
    data = two_output_dataset(np.random.default_rng(11), N=80)
    cfg = KernelConfig(1.6)
    f = fit_fast(data.X, data.T, cfg)
    b = fit_baseline(data.X, data.T, cfg)
    f.seed = 11
    return {"proposed": f, "existing": b}


def _write(tmp_path, text, name="d.csv"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def test_load_table_two_rows(tmp_path):
    X, T = load_table(_write(tmp_path, "x1,t1,t2\n0.5,1,2\n-1,3,4e-1\n"))
    assert X.shape == (2, 1) and T.shape == (2, 2)
    np.testing.assert_array_equal(T, [[1, 2], [3, 0.4]])


def test_load_table_single_row(tmp_path):
    X, T = load_table(_write(tmp_path, "x1,t1\n2,3\n"))
    assert X.tolist() == [[2.0]] and T.tolist() == [[3.0]]


def test_load_table_inputs_only(tmp_path):
    X, T = load_table(_write(tmp_path, "x1,x2\n1,2\n3,4\n"), "inputs")
    assert X.shape == (2, 2) and T is None
    with pytest.raises(DataError):
        load_table(_write(tmp_path, "x1,x2\n1,2\n"), "inputs+targets")


@pytest.mark.parametrize("cell", ["nan", "inf", "-Infinity", "NaN"])
def test_load_table_rejects_non_finite_naming_cell(tmp_path, cell):
    with pytest.raises(DataError, match=r"row 3, column t2"):
        load_table(_write(tmp_path, f"x1,t1,t2\n1,2,3\n4,5,{cell}\n"))


@pytest.mark.parametrize("text,match", [
    ("a,b\n1,2\n", "header"),
    ("x1,t2\n1,2\n", "header"),
    ("x1,t1\n1,abc\n", "row 2, column t1"),
    ("x1,t1\n1\n", "row 2 has 1 cells"),
    ("x1,t1\n", "no data rows"),
    ("", "empty"),
])
def test_load_table_malformed(tmp_path, text, match):
    with pytest.raises(DataError, match=match):
        load_table(_write(tmp_path, text))


def test_load_table_missing_file(tmp_path):
    with pytest.raises(DataError, match="no such file"):
        load_table(str(tmp_path / "nope.csv"))


@given(st.lists(st.tuples(st.floats(allow_nan=False, allow_infinity=False, width=64),
                          st.floats(allow_nan=False, allow_infinity=False)), min_size=1, max_size=20))
@settings(max_examples=40)
def test_write_then_load_table_exact(tmp_path_factory, rows):
    path = str(tmp_path_factory.mktemp("t") / "r.csv")
    cols = list(zip(*rows))
    write_table(path, cols, ["x1", "t1"])
    X, T = load_table(path)
    assert X[:, 0].tolist() == list(cols[0]) and T[:, 0].tolist() == list(cols[1])


@pytest.mark.parametrize("kind", ["proposed", "existing"])
def test_round_trip_predictions_bit_identical(models, tmp_path, kind):
    m = models[kind]
    path = str(tmp_path / "m.bin")
    save_model(m, path)
    back = load_model(path)
    xs = np.random.default_rng(5).uniform(-12, 12, size=(100, 1))
    for a, b in zip(m.predict(xs), back.predict(xs)):
        assert a.tobytes() == b.tobytes()
    assert back.method_tag == kind
    assert (back.iterations, back.n_train, back.converged, back.seed) == (m.iterations, m.n_train,
                                                                          m.converged, m.seed)
    assert back.log_marginal == m.log_marginal
    assert dumps_model(back) == dumps_model(m)


def test_header_layout(models):
    buf = dumps_model(models["proposed"])
    assert buf[:8] == b"MRVRMODL"
    assert struct.unpack_from("<H", buf, 8)[0] == 1
    assert buf[10] == 1  # proposed
    assert struct.unpack_from("<d", buf, 16)[0] == 1.6
    assert struct.unpack_from("<q", buf, 48)[0] == 11
    assert HEADER.size == 64


def test_wrong_version_rejected(models):
    buf = bytearray(dumps_model(models["existing"]))
    buf[8] = 2
    with pytest.raises(ModelFormatError, match="version 2"):
        loads_model(bytes(buf))


@pytest.mark.parametrize("cut", [0, 10, 63, 64, 100, -1])
def test_truncated_file_rejected(models, cut):
    buf = dumps_model(models["proposed"])
    with pytest.raises(ModelFormatError):
        loads_model(buf[:cut])


def test_corrupted_payload_rejected(models):
    buf = bytearray(dumps_model(models["proposed"]))
    buf[200] ^= 0x01
    with pytest.raises(ModelFormatError, match="checksum"):
        loads_model(bytes(buf))


def test_bad_magic_and_missing_file(tmp_path):
    with pytest.raises(ModelFormatError, match="magic"):
        loads_model(b"X" * 100)
    with pytest.raises(ModelFormatError):
        load_model(str(tmp_path / "absent.bin"))
