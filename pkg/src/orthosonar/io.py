"""On-disk formats: OSI images, ASCII PLY clouds, CSV tables, JSON manifests.

An OSI file is one line of JSON header, a newline, then the intensity grid as
row-major little-endian float32 (rows are range bins).
"""

from __future__ import annotations

import csv
import io
import json
import os
import tempfile
from pathlib import Path
from typing import Sequence

import numpy as np

from .association import Match
from .geometry import RigidTransform
from .pipeline import FramePair
from .sonar_image import Detection, PolarImage, SonarIntrinsics

OSI_FORMAT = "OSI"
OSI_VERSION = 1


class FormatError(ValueError):
    """Raised when a file does not parse; the message names file and field."""


def atomic_write(path: str | os.PathLike, data: bytes | str) -> None:
    """Write via a temp file in the target directory, then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = data.encode() if isinstance(data, str) else data
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# ---------------------------------------------------------------------------
# OSI


def encode_osi(image: PolarImage) -> bytes:
    rows, cols = image.shape
    header = {
        "format": OSI_FORMAT,
        "version": OSI_VERSION,
        "orientation": image.orientation,
        "endianness": "little",
        "dtype": "float32",
        "dims": [rows, cols],
        "intrinsics": image.intrinsics.to_dict(),
    }
    payload = image.intensities.astype("<f4").tobytes(order="C")
    return json.dumps(header, sort_keys=True).encode() + b"\n" + payload


def decode_osi(blob: bytes, name: str = "<bytes>") -> PolarImage:
    head, sep, payload = blob.partition(b"\n")
    if not sep:
        raise FormatError(f"{name}: missing header terminator")
    try:
        header = json.loads(head)
    except json.JSONDecodeError as exc:
        raise FormatError(f"{name}: header is not valid JSON ({exc})") from exc
    if header.get("format") != OSI_FORMAT:
        raise FormatError(f"{name}: field 'format' must be {OSI_FORMAT!r}")
    if header.get("endianness", "little") != "little":
        raise FormatError(f"{name}: field 'endianness' must be 'little'")
    if header.get("dtype", "float32") != "float32":
        raise FormatError(f"{name}: field 'dtype' must be 'float32'")
    try:
        intr = SonarIntrinsics.from_dict(header["intrinsics"])
    except KeyError as exc:
        raise FormatError(f"{name}: missing field {exc}") from exc
    except (TypeError, ValueError) as exc:
        raise FormatError(f"{name}: field 'intrinsics': {exc}") from exc
    dims = header.get("dims", [intr.num_range_bins, intr.num_beams])
    if list(dims) != [intr.num_range_bins, intr.num_beams]:
        raise FormatError(f"{name}: field 'dims' {dims} disagrees with intrinsics")
    expected = dims[0] * dims[1] * 4
    if len(payload) != expected:
        raise FormatError(f"{name}: payload has {len(payload)} bytes, expected {expected}")
    grid = np.frombuffer(payload, dtype="<f4").reshape(dims).astype(np.float64)
    try:
        return PolarImage(intr, grid, header.get("orientation", "horizontal"))
    except ValueError as exc:
        raise FormatError(f"{name}: {exc}") from exc


def write_osi(path: str | os.PathLike, image: PolarImage) -> None:
    atomic_write(path, encode_osi(image))


def read_osi(path: str | os.PathLike) -> PolarImage:
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise FormatError(f"{path}: {exc.strerror}") from exc
    return decode_osi(blob, str(path))


# ---------------------------------------------------------------------------
# PLY


def encode_ply(points: np.ndarray) -> str:
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    lines = [
        "ply",
        "format ascii 1.0",
        f"element vertex {len(pts)}",
        "property float x",
        "property float y",
        "property float z",
        "end_header",
    ]
    lines.extend(f"{x:.6f} {y:.6f} {z:.6f}" for x, y, z in pts)
    return "\n".join(lines) + "\n"


def write_ply(path: str | os.PathLike, points: np.ndarray) -> None:
    atomic_write(path, encode_ply(points))


def read_ply(path: str | os.PathLike) -> np.ndarray:
    """Read x, y, z from an ASCII PLY file; other vertex properties are ignored."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise FormatError(f"{path}: {exc.strerror}") from exc
    lines = text.splitlines()
    if not lines or lines[0].strip() != "ply":
        raise FormatError(f"{path}: missing 'ply' magic")
    count = None
    props: list[str] = []
    in_vertex = False
    body = None
    for n, line in enumerate(lines[1:], start=1):
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "format" and parts[1:2] != ["ascii"]:
            raise FormatError(f"{path}: field 'format' must be ascii")
        elif parts[0] == "element":
            in_vertex = parts[1] == "vertex"
            if in_vertex:
                try:
                    count = int(parts[2])
                except (IndexError, ValueError) as exc:
                    raise FormatError(f"{path}: field 'element vertex' needs an integer count") from exc
        elif parts[0] == "property" and in_vertex:
            props.append(parts[-1])
        elif parts[0] == "end_header":
            body = n + 1
            break
    if count is None or body is None:
        raise FormatError(f"{path}: header lacks vertex element or end_header")
    try:
        cols = [props.index(c) for c in ("x", "y", "z")]
    except ValueError as exc:
        raise FormatError(f"{path}: vertex properties must include x, y, z") from exc
    rows = lines[body : body + count]
    if len(rows) < count:
        raise FormatError(f"{path}: expected {count} vertices, found {len(rows)}")
    if count == 0:
        return np.zeros((0, 3))
    try:
        data = np.loadtxt(io.StringIO("\n".join(rows)), ndmin=2)
    except ValueError as exc:
        raise FormatError(f"{path}: field 'vertex' has malformed rows ({exc})") from exc
    if data.shape[1] != len(props):
        raise FormatError(f"{path}: field 'vertex' rows have {data.shape[1]} values, expected {len(props)}")
    return data[:, cols]


# ---------------------------------------------------------------------------
# CSV


def detections_csv(detections: Sequence[Detection]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["range_bin", "beam", "range_m", "angle_rad", "intensity"])
    for d in detections:
        w.writerow([d.range_bin, d.beam_index, repr(d.range), repr(d.angle), repr(d.intensity)])
    return buf.getvalue()


def matches_csv(matches: Sequence[Match], frame: int | None = None) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    head = ["h_range_bin", "h_beam", "v_range_bin", "v_beam", "cost"]
    w.writerow((["frame"] if frame is not None else []) + head)
    for m in matches:
        row = [m.h.range_bin, m.h.beam_index, m.v.range_bin, m.v.beam_index, repr(m.cost)]
        w.writerow(([frame] if frame is not None else []) + row)
    return buf.getvalue()


# ---------------------------------------------------------------------------
# JSON documents


def read_json(path: str | os.PathLike) -> dict:
    try:
        with open(path) as fh:
            data = json.load(fh)
    except OSError as exc:
        raise FormatError(f"{path}: {exc.strerror}") from exc
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(data, dict):
        raise FormatError(f"{path}: top level must be an object")
    return data


def write_json(path: str | os.PathLike, data: dict) -> None:
    atomic_write(path, json.dumps(data, indent=2, sort_keys=True) + "\n")


def load_manifest(path: str | os.PathLike) -> tuple[list[FramePair], dict]:
    """Frames and config overrides from a manifest; image paths resolve against its folder."""
    path = Path(path)
    doc = read_json(path)
    frames_doc = doc.get("frames")
    if not isinstance(frames_doc, list):
        raise FormatError(f"{path}: field 'frames' must be a list")
    frames = []
    for k, entry in enumerate(frames_doc):
        where = f"{path}: field 'frames[{k}]"
        for key in ("horizontal", "vertical"):
            if key not in entry:
                raise FormatError(f"{where}.{key}' is missing")
        try:
            pose = RigidTransform.from_dict(entry.get("pose", {}))
        except (TypeError, ValueError) as exc:
            raise FormatError(f"{where}.pose': {exc}") from exc
        h = read_osi(path.parent / entry["horizontal"])
        v = read_osi(path.parent / entry["vertical"])
        frames.append(FramePair(h, v, pose))
    config = doc.get("config", {})
    if not isinstance(config, dict):
        raise FormatError(f"{path}: field 'config' must be an object")
    return frames, config
