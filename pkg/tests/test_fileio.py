import colorsys
import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from infoplane.fileio import (
    OUTLIER_RGB,
    FormatError,
    dumps_json,
    rank_color,
    read_image16,
    read_json,
    read_ply,
    replace_dir,
    sha256_file,
    write_csv,
    write_image16,
    write_ply,
)

img16 = arrays(np.uint16, st.tuples(st.integers(1, 12), st.integers(1, 12)))


@settings(max_examples=30, deadline=None)
@given(img16, st.sampled_from(["a.pgm", "a.png"]))
def test_image_round_trip(tmp_path_factory, img, name):
    p = tmp_path_factory.mktemp("img") / name
    write_image16(p, img)
    assert np.array_equal(read_image16(p), img)


def test_pgm_with_comments_and_8bit(tmp_path):
    p = tmp_path / "c.pgm"
    p.write_bytes(b"P5\n# made by hand\n3 1\n# depth\n255\n\x01\x02\x03")
    assert read_image16(p).tolist() == [[1, 2, 3]]
    p.write_bytes(b"P5 2 1 65535 \x01\x00\x00\x02")
    assert read_image16(p).tolist() == [[256, 2]]


def test_bad_images(tmp_path):
    p = tmp_path / "x.pgm"
    p.write_bytes(b"P2\n1 1\n255\n7")
    with pytest.raises(FormatError):
        read_image16(p)
    p.write_bytes(b"P5\n4 4\n65535\n\x00")
    with pytest.raises(FormatError):
        read_image16(p)
    with pytest.raises(ValueError):
        write_image16(tmp_path / "n.pgm", np.array([[70000]]))
    with pytest.raises(ValueError):
        write_image16(tmp_path / "n.pgm", np.zeros(3))


def test_palette():
    assert rank_color(0) == OUTLIER_RGB
    assert rank_color(1) == (255, 0, 0)
    h1 = colorsys.rgb_to_hsv(*[c / 255 for c in rank_color(2)])[0]
    h2 = colorsys.rgb_to_hsv(*[c / 255 for c in rank_color(3)])[0]
    assert 0 < h1 < h2
    assert rank_color(17) == rank_color(1)
    assert len({rank_color(r) for r in range(1, 17)}) == 16


def test_ply_round_trip(tmp_path):
    pts = np.array([[0.1, -0.2, 1.5], [1, 2, 3.0], [0, 0, 0.25]])
    labels = np.array([0, 1, 2])
    p = tmp_path / "c.ply"
    write_ply(p, pts, labels)
    got, rgb = read_ply(p)
    np.testing.assert_allclose(got, pts, atol=1e-6)
    assert [tuple(c) for c in rgb] == [rank_color(r) for r in labels]
    (tmp_path / "bad.ply").write_text("nope\n")
    with pytest.raises(FormatError):
        read_ply(tmp_path / "bad.ply")


def test_json_deterministic(tmp_path):
    obj = {"b": np.float64(0.1), "a": [np.int64(3), float("nan")], "c": np.arange(2)}
    s = dumps_json(obj)
    assert s == dumps_json(dict(reversed(list(obj.items()))))
    assert json.loads(s) == {"a": [3, None], "b": 0.1, "c": [0, 1]}
    (tmp_path / "bad.json").write_text("{")
    with pytest.raises(FormatError):
        read_json(tmp_path / "bad.json")


def test_csv_float_repr_and_hash(tmp_path):
    p = tmp_path / "t.csv"
    write_csv(p, [{"x": 0.1 + 0.2, "y": "a"}], ["x", "y"])
    assert p.read_text() == "x,y\n0.30000000000000004,a\n"
    assert len(sha256_file(p)) == 64


def test_replace_dir_moves_everything(tmp_path):
    tmp = tmp_path / "tmp"
    tmp.mkdir()
    (tmp / "a").write_text("1")
    final = tmp_path / "out"
    replace_dir(str(tmp), str(final))
    assert (final / "a").read_text() == "1" and not (tmp / "a").exists()
