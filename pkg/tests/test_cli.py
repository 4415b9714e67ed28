import json
import shutil
import subprocess
import sys
from pathlib import Path

import pytest

from orthosonar.cli import main

SCENES = Path(__file__).resolve().parent.parent / "scenes"


@pytest.fixture(scope="module")
def frames(tmp_path_factory):
    out = tmp_path_factory.mktemp("frames")
    assert main(["simulate", "--scene", str(SCENES / "cylinder.json"), "--out", str(out)]) == 0
    return out


def test_simulate_writes_pairs_and_manifest(frames):
    manifest = json.loads((frames / "manifest.json").read_text())
    assert len(manifest["frames"]) == 20
    assert (frames / manifest["frames"][0]["horizontal"]).exists()
    assert "extrinsics" in manifest["config"]


def test_reconstruct_and_eval(frames, tmp_path, capsys):
    cloud = tmp_path / "cloud.ply"
    matches = tmp_path / "matches.csv"
    argv = ["reconstruct", "--manifest", str(frames / "manifest.json"), "--mode", "fast",
            "--clustering", "on", "--out", str(cloud), "--matches", str(matches)]
    assert main(argv) == 0
    header = cloud.read_text().splitlines()[2]
    assert header.startswith("element vertex") and int(header.split()[-1]) >= 1
    assert matches.read_text().startswith("frame,h_range_bin")

    report = tmp_path / "report.json"
    capsys.readouterr()
    assert main(["eval", "--cloud", str(cloud), "--scene", str(SCENES / "cylinder.json"), "--json", str(report)]) == 0
    assert "MAE:" in capsys.readouterr().out
    metrics = json.loads(report.read_text())
    bin_width = 5.0 / 512
    assert metrics["mae"] <= 2 * bin_width


def test_reconstruct_is_byte_identical(frames, tmp_path):
    outs = []
    for k, workers in enumerate((1, 3)):
        path = tmp_path / f"c{k}.ply"
        argv = ["reconstruct", "--manifest", str(frames / "manifest.json"), "--mode", "fast", "--seed", "11",
                "--workers", str(workers), "--out", str(path)]
        assert main(argv) == 0
        outs.append(path.read_bytes())
    assert outs[0] == outs[1]


def test_detect_with_companion(frames, tmp_path):
    out = tmp_path / "d.csv"
    argv = ["detect", "--image", str(frames / "frame_000_h.osi"), "--companion", str(frames / "frame_000_v.osi"),
            "--out", str(out)]
    assert main(argv) == 0
    rows = out.read_text().splitlines()
    assert rows[0] == "range_bin,beam,range_m,angle_rad,intensity" and len(rows) > 1


def test_config_file_and_errors(frames, tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"cfar": {"p_fx": 0.1}}))
    argv = ["reconstruct", "--manifest", str(frames / "manifest.json"), "--config", str(bad),
            "--out", str(tmp_path / "x.ply")]
    assert main(argv) == 2
    err = capsys.readouterr().err
    assert "bad.json" in err and "cfar.p_fx" in err
    assert not (tmp_path / "x.ply").exists()


def test_malformed_inputs_name_file_and_field(frames, tmp_path, capsys):
    broken = tmp_path / "frames"
    shutil.copytree(frames, broken)
    (broken / "frame_003_v.osi").write_bytes(b'{"format": "OSI"}\n')
    assert main(["reconstruct", "--manifest", str(broken / "manifest.json"), "--out", str(tmp_path / "y.ply")]) == 2
    err = capsys.readouterr().err
    assert "frame_003_v.osi" in err and "intrinsics" in err

    scene = tmp_path / "scene.json"
    scene.write_text(json.dumps({"primitives": [{"kind": "cylinder", "radius": -1, "height": 1}]}))
    assert main(["simulate", "--scene", str(scene), "--out", str(tmp_path / "z")]) == 2
    err = capsys.readouterr().err
    assert "scene.json" in err and "primitives" in err


def test_console_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "orthosonar", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0
    for sub in ("simulate", "detect", "reconstruct", "eval"):
        assert sub in proc.stdout
