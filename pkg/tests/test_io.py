import json

import numpy as np
import pytest

from orthosonar import io as sio
from orthosonar.association import Match
from orthosonar.sonar_image import Detection, PolarImage, SonarIntrinsics


@pytest.fixture
def image():
    k = SonarIntrinsics(1.0, 6.0, 16, 8)
    rng = np.random.default_rng(0)
    return PolarImage(k, rng.exponential(1.0, (16, 8)).astype(np.float32), "vertical")


def test_osi_round_trip(tmp_path, image):
    path = tmp_path / "a.osi"
    sio.write_osi(path, image)
    back = sio.read_osi(path)
    assert back.intrinsics == image.intrinsics
    assert back.orientation == "vertical"
    assert np.array_equal(back.intensities, image.intensities)


def test_osi_layout(image):
    blob = sio.encode_osi(image)
    head, payload = blob.split(b"\n", 1)
    header = json.loads(head)
    assert header["format"] == "OSI" and header["endianness"] == "little"
    assert header["dims"] == [16, 8]
    assert np.frombuffer(payload, "<f4")[1] == np.float32(image.intensities[0, 1])


@pytest.mark.parametrize(
    "mutate, field",
    [
        (lambda h, p: (h.replace(b'"OSI"', b'"XYZ"'), p), "format"),
        (lambda h, p: (h.replace(b'"little"', b'"big"'), p), "endianness"),
        (lambda h, p: (h, p[:-4]), "payload"),
        (lambda h, p: (h.replace(b'"dims": [16, 8]', b'"dims": [8, 16]'), p), "dims"),
        (lambda h, p: (h.replace(b'"num_beams": 8', b'"num_beams": 1'), p), "intrinsics"),
        (lambda h, p: (b"{not json", p), "header"),
    ],
)
def test_osi_errors_name_file_and_field(tmp_path, image, mutate, field):
    head, payload = sio.encode_osi(image).split(b"\n", 1)
    head, payload = mutate(head, payload)
    path = tmp_path / "bad.osi"
    path.write_bytes(head + b"\n" + payload)
    with pytest.raises(sio.FormatError) as info:
        sio.read_osi(path)
    assert "bad.osi" in str(info.value) and field in str(info.value)


def test_missing_file(tmp_path):
    with pytest.raises(sio.FormatError, match="nope.osi"):
        sio.read_osi(tmp_path / "nope.osi")


def test_ply_round_trip(tmp_path):
    pts = np.array([[0.1, -2.0, 3.5], [1e-7, 4.25, -0.125]])
    sio.write_ply(tmp_path / "c.ply", pts)
    back = sio.read_ply(tmp_path / "c.ply")
    np.testing.assert_allclose(back, pts, atol=5e-7)
    sio.write_ply(tmp_path / "empty.ply", np.zeros((0, 3)))
    assert sio.read_ply(tmp_path / "empty.ply").shape == (0, 3)


def test_ply_errors(tmp_path):
    path = tmp_path / "bad.ply"
    path.write_text("ply\nformat ascii 1.0\nelement vertex 2\nproperty float x\nproperty float y\n"
                    "property float z\nend_header\n1 2 3\n")
    with pytest.raises(sio.FormatError, match="bad.ply"):
        sio.read_ply(path)
    path.write_text("hello\n")
    with pytest.raises(sio.FormatError, match="bad.ply"):
        sio.read_ply(path)


def test_csv_tables():
    d = Detection(3, 4, 2.5, -0.1, 0.75)
    text = sio.detections_csv([d])
    assert text.splitlines()[0] == "range_bin,beam,range_m,angle_rad,intensity"
    assert text.splitlines()[1].startswith("3,4,")
    table = sio.matches_csv([Match(d, d, 0.0)], frame=2)
    assert len(table.strip().splitlines()) == 2


def test_atomic_write_leaves_no_temp(tmp_path):
    target = tmp_path / "sub" / "out.txt"
    sio.atomic_write(target, "one")
    sio.atomic_write(target, b"two")
    assert target.read_text() == "two"
    assert [p.name for p in target.parent.iterdir()] == ["out.txt"]


def test_manifest_errors(tmp_path):
    (tmp_path / "m.json").write_text(json.dumps({"frames": [{"horizontal": "h.osi"}]}))
    with pytest.raises(sio.FormatError, match=r"m.json.*frames\[0\]\.vertical"):
        sio.load_manifest(tmp_path / "m.json")
    (tmp_path / "m.json").write_text(json.dumps({"frames": 3}))
    with pytest.raises(sio.FormatError, match="frames"):
        sio.load_manifest(tmp_path / "m.json")


@pytest.mark.parametrize(
    "body, field",
    [
        ("element vertex two\nproperty float x\nproperty float y\nproperty float z\nend_header\n", "element vertex"),
        ("element vertex 1\nproperty float x\nproperty float y\nproperty float z\nend_header\n1 a 3\n", "vertex"),
        ("element vertex 1\nproperty float x\nproperty float y\nproperty float z\nend_header\n1 2\n", "vertex"),
        ("element vertex 1\nproperty float x\nproperty float y\nend_header\n1 2\n", "x, y, z"),
    ],
)
def test_ply_field_errors(tmp_path, body, field):
    path = tmp_path / "bad.ply"
    path.write_text("ply\nformat ascii 1.0\n" + body)
    with pytest.raises(sio.FormatError) as info:
        sio.read_ply(path)
    assert "bad.ply" in str(info.value) and field in str(info.value)
