import math

import numpy as np
import pytest

from genrestore import io
from genrestore.errors import MalformedFile, VersionMismatch
from genrestore.metrics import MetricsReport, format_value, mse, psnr, read_report


@pytest.mark.parametrize("shape", [(), (5,), (2, 3), (2, 3, 4)])
def test_tensor_round_trip(tmp_path, rng, shape):
    a = rng.standard_normal(shape)
    io.save_tensor(a, tmp_path / "t.gtn")
    b = io.load_tensor(tmp_path / "t.gtn")
    assert b.shape == a.shape and b.tobytes() == a.tobytes()


def test_tensor_layout():
    data = io.dumps_tensor(np.array([[1.0, 2.0]]))
    assert data[:4] == b"GTN1"
    assert int.from_bytes(data[4:8], "little") == 2
    assert int.from_bytes(data[8:16], "little") == 1
    assert int.from_bytes(data[16:24], "little") == 2
    assert len(data) == 24 + 16


def test_tensor_errors():
    data = io.dumps_tensor(np.ones(3))
    with pytest.raises(MalformedFile):
        io.loads_tensor(data[:-1])
    with pytest.raises(MalformedFile):
        io.loads_tensor(b"ABCD" + data[4:])
    with pytest.raises(VersionMismatch):
        io.loads_tensor(b"GTN2" + data[4:])


@pytest.mark.parametrize("channels, ext", [(1, "pgm"), (3, "ppm")])
def test_image_round_trip(tmp_path, rng, channels, ext):
    img = rng.random((5, 7, channels))
    path = tmp_path / f"x.{ext}"
    io.write_image(path, img)
    back = io.read_image(path)
    assert back.shape == (5, 7, channels)
    assert np.max(np.abs(back - img)) <= 1 / 510 + 1e-12
    np.testing.assert_array_equal(io.load_vector(path), back.reshape(-1))


def test_image_clamps_and_reads_comments(tmp_path):
    path = tmp_path / "c.pgm"
    path.write_bytes(b"P5\n# note\n2 1\n255\n" + bytes([0, 255]))
    np.testing.assert_array_equal(io.read_image(path).reshape(-1), [0.0, 1.0])
    io.write_image(path, np.array([[-1.0, 2.0]]))
    np.testing.assert_array_equal(io.read_image(path).reshape(-1), [0.0, 1.0])
    path.write_bytes(b"P5\n2 1\n255\n" + bytes([0]))
    with pytest.raises(MalformedFile):
        io.read_image(path)


def test_psnr_examples():
    x = np.zeros(4)
    assert psnr(x, x) == math.inf
    assert psnr(x, np.full(4, 0.1)) == pytest.approx(20.0, abs=1e-12)
    x_hat = np.full(100, math.sqrt(0.0029))
    assert psnr(np.zeros(100), x_hat) == pytest.approx(25.376, abs=5e-4)
    with pytest.raises(ValueError):
        psnr(np.zeros(3), np.zeros(4))


def test_mse():
    assert mse([1.0, 2.0], [1.0, 4.0]) == 2.0


def test_format_value():
    assert format_value(0.1) == "0.1"
    assert float(format_value(1 / 3)) == 1 / 3
    assert format_value(math.inf) == "inf"
    assert format_value(None) == ""
    assert format_value(np.int64(3)) == "3"


def test_report_aggregates_and_csv(tmp_path, rng):
    report = MetricsReport(["error", "psnr_db"], ["restart"])
    values = rng.random((3, 2))
    for i, (e, p) in enumerate(values):
        report.add(i, "a", error=float(e), psnr_db=float(p), restart=0)
        report.add(i, "b", error=float(e) * 2, psnr_db=float(p), restart=1)
    assert report.aggregate("a", "error") == pytest.approx(values[:, 0].mean(), abs=1e-12)
    path = tmp_path / "r.csv"
    report.write(path)
    rows = read_report(path)
    assert len(rows) == 8
    assert [r["image"] for r in rows[-2:]] == ["mean", "mean"]
    assert float(rows[-1]["error"]) == report.aggregate("b", "error")
    with pytest.raises(KeyError):
        report.add(0, "a", bogus=1.0)
