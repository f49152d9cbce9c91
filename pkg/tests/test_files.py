import numpy as np
import pytest

from pbpba.errors import ConfigError, IoFailure
from pbpba.kvconfig import format_kv, nest, parse_kv, parse_value
from pbpba.pfm import read_pfm, write_pfm


@pytest.mark.parametrize("shape", [(5, 7), (4, 6, 3)])
def test_pfm_round_trip(tmp_path, rng, shape):
    data = rng.normal(size=shape).astype(np.float32)
    write_pfm(tmp_path / "a.pfm", data)
    assert np.array_equal(read_pfm(tmp_path / "a.pfm"), data)


def test_pfm_bottom_to_top_little_endian(tmp_path):
    data = np.array([[1.0, 2.0], [3.0, 4.0]], dtype=np.float32)
    write_pfm(tmp_path / "a.pfm", data)
    raw = (tmp_path / "a.pfm").read_bytes()
    assert raw.startswith(b"Pf\n2 2\n-1.0\n")
    body = np.frombuffer(raw[len(b"Pf\n2 2\n-1.0\n"):], dtype="<f4")
    assert body.tolist() == [3.0, 4.0, 1.0, 2.0]


def test_pfm_big_endian_read(tmp_path):
    body = np.array([3.0, 4.0, 1.0, 2.0], dtype=">f4").tobytes()
    (tmp_path / "b.pfm").write_bytes(b"Pf\n2 2\n1.0\n" + body)
    assert read_pfm(tmp_path / "b.pfm").tolist() == [[1.0, 2.0], [3.0, 4.0]]


def test_pfm_truncated_reports_file(tmp_path, rng):
    write_pfm(tmp_path / "c.pfm", rng.random((8, 8)))
    raw = (tmp_path / "c.pfm").read_bytes()
    (tmp_path / "c.pfm").write_bytes(raw[:-10])
    with pytest.raises(IoFailure, match="c.pfm: truncated"):
        read_pfm(tmp_path / "c.pfm")
    (tmp_path / "d.pfm").write_bytes(b"P6\n1 1\n-1\n")
    with pytest.raises(IoFailure, match="identifier"):
        read_pfm(tmp_path / "d.pfm")


def test_pfm_rejects_two_channels(tmp_path):
    with pytest.raises(ValueError):
        write_pfm(tmp_path / "e.pfm", np.zeros((2, 2, 2)))


def test_kv_parsing_and_nesting():
    flat = parse_kv("""
        # comment
        seed = 3
        plane.0.albedo = checker   # trailing comment
        plane.1.albedo = constant
        plane.0.color0 = 0.1, 0.2 0.3
        light.lobe.0.sharpness = 40
        flag = yes
    """)
    cfg = nest(flat)
    assert cfg["seed"] == 3 and cfg["flag"] is True
    assert [p["albedo"] for p in cfg["plane"]] == ["checker", "constant"]
    assert cfg["plane"][0]["color0"] == [0.1, 0.2, 0.3]
    assert cfg["light"]["lobe"][0]["sharpness"] == 40


def test_kv_errors():
    with pytest.raises(ConfigError, match="line 1"):
        parse_kv("no equals sign")
    with pytest.raises(ConfigError):
        nest({"plane.0.a": "1", "plane.2.a": "1"})
    with pytest.raises(ConfigError):
        nest({"a": "1", "a.b": "2"})


def test_kv_value_types_and_format_round_trip():
    assert parse_value("1e-3") == 1e-3
    assert parse_value("-4") == -4
    assert parse_value("pb") == "pb"
    text = format_kv({"a": 0.1, "b": [1.0, 2.5], "c": "x", "d": 7})
    back = {k: parse_value(v) for k, v in parse_kv(text).items()}
    assert back == {"a": 0.1, "b": [1.0, 2.5], "c": "x", "d": 7}
