"""Ray-cast renderer for orthogonal imaging-sonar pairs.

Each sonar casts, for every beam, a fan of rays across its unmeasured
aperture.  The first surface a ray meets deposits
``reflectivity * |cos(incidence)|`` into the (range bin, beam) cell, keeping
the maximum over rays.  Noise is applied after rendering.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence, Union

import numpy as np

from .geometry import RigidTransform, SonarExtrinsics, spherical_to_cartesian_array
from .pipeline import FramePair
from .sonar_image import PolarImage, SonarIntrinsics

_T_MIN = 1e-9
GHOST_FACTOR = 0.3


class SceneError(ValueError):
    """Raised for scenes that cannot be rendered."""


@dataclass(frozen=True)
class Cylinder:
    """Closed cylinder with its axis along local z, centred on the local origin."""

    radius: float
    height: float
    pose: RigidTransform = field(default_factory=RigidTransform)
    reflectivity: float = 1.0

    def __post_init__(self) -> None:
        if self.radius <= 0 or self.height <= 0:
            raise ValueError("cylinder dimensions must be positive")
        if not 0.0 <= self.reflectivity <= 1.0:
            raise ValueError("reflectivity must lie in [0, 1]")

    @property
    def area(self) -> float:
        return 2 * math.pi * self.radius * self.height + 2 * math.pi * self.radius**2

    @property
    def lateral_area(self) -> float:
        return 2 * math.pi * self.radius * self.height


@dataclass(frozen=True)
class Box:
    """Box centred on the local origin; width along x, depth y, height z."""

    width: float
    depth: float
    height: float
    pose: RigidTransform = field(default_factory=RigidTransform)
    reflectivity: float = 1.0

    def __post_init__(self) -> None:
        if min(self.width, self.depth, self.height) <= 0:
            raise ValueError("box dimensions must be positive")
        if not 0.0 <= self.reflectivity <= 1.0:
            raise ValueError("reflectivity must lie in [0, 1]")

    @property
    def half_extents(self) -> np.ndarray:
        return 0.5 * np.array([self.width, self.depth, self.height])

    @property
    def area(self) -> float:
        w, d, h = self.width, self.depth, self.height
        return 2 * (w * d + w * h + d * h)


ScenePrimitive = Union[Cylinder, Box]


@dataclass(frozen=True)
class NoiseModel:
    """Additive exponential background plus unit-mean multiplicative speckle."""

    background_mean: float = 0.0
    speckle_variance: float = 0.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.background_mean < 0 or self.speckle_variance < 0:
            raise ValueError("noise parameters must be non-negative")

    @property
    def is_silent(self) -> bool:
        return self.background_mean == 0 and self.speckle_variance == 0


@dataclass(frozen=True)
class Scene:
    primitives: tuple[ScenePrimitive, ...] = ()


# ---------------------------------------------------------------------------
# ray intersection


def _to_local(pose: RigidTransform, origins: np.ndarray, dirs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    rt = pose.rotation.T
    return (origins - pose.translation) @ rt.T, dirs @ rt.T


def _intersect_cylinder(c: Cylinder, origins: np.ndarray, dirs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    o, d = _to_local(c.pose, origins, dirs)
    n = len(d)
    t_best = np.full(n, np.inf)
    normal = np.zeros((n, 3))
    hz = 0.5 * c.height

    # lateral surface
    a = d[:, 0] ** 2 + d[:, 1] ** 2
    b = 2 * (o[:, 0] * d[:, 0] + o[:, 1] * d[:, 1])
    cc = o[:, 0] ** 2 + o[:, 1] ** 2 - c.radius**2
    disc = b * b - 4 * a * cc
    ok = (a > 0) & (disc >= 0)
    sq = np.sqrt(np.where(ok, disc, 0.0))
    safe_a = np.where(ok, a, 1.0)
    for sign in (-1.0, 1.0):
        t = (-b + sign * sq) / (2 * safe_a)
        z = o[:, 2] + t * d[:, 2]
        hit = ok & (t > _T_MIN) & (np.abs(z) <= hz) & (t < t_best)
        t_best = np.where(hit, t, t_best)
        p = o + t[:, None] * d
        side_n = np.column_stack([p[:, 0], p[:, 1], np.zeros(n)]) / c.radius
        normal = np.where(hit[:, None], side_n, normal)

    # end caps
    for zc in (-hz, hz):
        with np.errstate(divide="ignore", invalid="ignore"):
            t = (zc - o[:, 2]) / d[:, 2]
        p = o + np.where(np.isfinite(t), t, 0.0)[:, None] * d
        hit = np.isfinite(t) & (t > _T_MIN) & (p[:, 0] ** 2 + p[:, 1] ** 2 <= c.radius**2) & (t < t_best)
        t_best = np.where(hit, t, t_best)
        normal = np.where(hit[:, None], np.array([0.0, 0.0, np.sign(zc)]), normal)

    return t_best, normal @ c.pose.rotation.T


def _intersect_box(bx: Box, origins: np.ndarray, dirs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    o, d = _to_local(bx.pose, origins, dirs)
    half = bx.half_extents
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / d
        t1 = (-half - o) * inv
        t2 = (half - o) * inv
    # rays parallel to a slab: inside -> (-inf, inf), outside -> empty
    par = d == 0
    inside = np.abs(o) <= half
    t1 = np.where(par, np.where(inside, -np.inf, np.inf), t1)
    t2 = np.where(par, np.where(inside, np.inf, -np.inf), t2)
    t_near = np.minimum(t1, t2)
    t_far = np.maximum(t1, t2)
    t_enter = t_near.max(axis=1)
    t_exit = t_far.min(axis=1)
    axis = t_near.argmax(axis=1)
    hit = (t_enter <= t_exit) & (t_enter > _T_MIN)
    t_best = np.where(hit, t_enter, np.inf)
    normal = np.zeros((len(d), 3))
    rows = np.arange(len(d))
    normal[rows, axis] = -np.sign(d[rows, axis])
    return t_best, normal @ bx.pose.rotation.T


def intersect(prim: ScenePrimitive, origins: np.ndarray, dirs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Nearest forward hit distance (``inf`` for a miss) and world-frame normal."""
    origins = np.broadcast_to(np.asarray(origins, dtype=np.float64), np.shape(dirs))
    dirs = np.asarray(dirs, dtype=np.float64)
    if isinstance(prim, Cylinder):
        return _intersect_cylinder(prim, origins, dirs)
    if isinstance(prim, Box):
        return _intersect_box(prim, origins, dirs)
    raise TypeError(f"unsupported primitive {type(prim).__name__}")


def contains(prim: ScenePrimitive, points: np.ndarray) -> np.ndarray:
    p = prim.pose.inverse().apply(np.atleast_2d(points))
    if isinstance(prim, Cylinder):
        return (np.hypot(p[:, 0], p[:, 1]) <= prim.radius) & (np.abs(p[:, 2]) <= 0.5 * prim.height)
    return np.all(np.abs(p) <= prim.half_extents, axis=1)


def cast_rays(scene: Scene, origin: np.ndarray, dirs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """First-return distance and intensity per ray; misses get ``inf`` and 0."""
    n = len(dirs)
    t_best = np.full(n, np.inf)
    value = np.zeros(n)
    for prim in scene.primitives:
        t, normal = intersect(prim, origin, dirs)
        closer = t < t_best
        t_best = np.where(closer, t, t_best)
        cos_inc = np.abs(np.einsum("ij,ij->i", normal, dirs))
        value = np.where(closer, prim.reflectivity * cos_inc, value)
    return t_best, value


# ---------------------------------------------------------------------------
# rendering


def _apply_noise(img: np.ndarray, noise: NoiseModel, stream: tuple[int, ...]) -> np.ndarray:
    if noise.is_silent:
        return img
    out = img.copy()
    for j in range(img.shape[1]):
        # one substream per beam keeps output schedule-independent
        rng = np.random.default_rng([noise.seed, *stream, j])
        col = out[:, j]
        if noise.speckle_variance > 0:
            shape = 1.0 / noise.speckle_variance
            col *= rng.gamma(shape, noise.speckle_variance, size=col.shape)
        if noise.background_mean > 0:
            col += rng.exponential(noise.background_mean, size=col.shape)
    return out


def render_image(
    scene: Scene,
    intrinsics: SonarIntrinsics,
    sonar_to_world: RigidTransform,
    orientation: str = "horizontal",
    noise: NoiseModel | None = None,
    rays_per_beam: int = 128,
    ghost_echo: bool = False,
    stream: tuple[int, ...] = (0,),
) -> PolarImage:
    """Render one sonar image; the sonar sweeps its own x-y plane."""
    if rays_per_beam < 1:
        raise ValueError("rays_per_beam must be >= 1")
    origin = sonar_to_world.translation
    for prim in scene.primitives:
        if contains(prim, origin[None, :])[0]:
            raise SceneError("sonar origin lies inside a scene primitive")

    k = intrinsics
    beams = k.beam_angles()
    ap = k.vertical_aperture
    spread = -0.5 * ap + (np.arange(rays_per_beam) + 0.5) * ap / rays_per_beam
    bearing = np.repeat(beams, rays_per_beam)
    elevation = np.tile(spread, k.num_beams)
    local_dirs = spherical_to_cartesian_array(1.0, bearing, elevation)
    dirs = local_dirs @ sonar_to_world.rotation.T
    beam_idx = np.repeat(np.arange(k.num_beams), rays_per_beam)

    img = np.zeros((k.num_range_bins, k.num_beams))
    t, value = cast_rays(scene, origin, dirs)

    def deposit(dist: np.ndarray, val: np.ndarray) -> None:
        with np.errstate(invalid="ignore"):
            bins = np.floor((dist - k.min_range) / k.range_resolution)
        ok = np.isfinite(bins) & (bins >= 0) & (bins < k.num_range_bins)
        np.maximum.at(img, (bins[ok].astype(np.int64), beam_idx[ok]), val[ok])

    deposit(t, value)
    if ghost_echo:
        deposit(2.0 * t, GHOST_FACTOR * value)
    if noise is not None:
        img = _apply_noise(img, noise, stream)
    return PolarImage(k, img, orientation)


def render_pair(
    scene: Scene,
    intrinsics_h: SonarIntrinsics,
    intrinsics_v: SonarIntrinsics,
    extrinsics: SonarExtrinsics,
    pose: RigidTransform,
    noise: NoiseModel | None = None,
    rays_per_beam: int = 128,
    ghost_echo: bool = False,
    frame_index: int = 0,
) -> FramePair:
    """Render a concurrent horizontal/vertical image pair from robot pose ``pose``."""
    h = render_image(scene, intrinsics_h, pose, "horizontal", noise, rays_per_beam, ghost_echo, (frame_index, 0))
    v_pose = pose @ extrinsics.transform_v_to_h
    v = render_image(scene, intrinsics_v, v_pose, "vertical", noise, rays_per_beam, ghost_echo, (frame_index, 1))
    return FramePair(h, v, pose)


# ---------------------------------------------------------------------------
# ground truth and scenes


def _sample_cylinder(c: Cylinder, n: int, rng: np.random.Generator) -> np.ndarray:
    ang = rng.uniform(0, 2 * math.pi, n)
    z = rng.uniform(-0.5 * c.height, 0.5 * c.height, n)
    pts = np.column_stack([c.radius * np.cos(ang), c.radius * np.sin(ang), z])
    return c.pose.apply(pts)


def _sample_box(b: Box, n: int, rng: np.random.Generator) -> np.ndarray:
    half = b.half_extents
    # faces ordered -x,+x,-y,+y,-z,+z
    areas = np.repeat([4 * half[1] * half[2], 4 * half[0] * half[2], 4 * half[0] * half[1]], 2)
    face = rng.choice(6, size=n, p=areas / areas.sum())
    pts = rng.uniform(-half, half, size=(n, 3))
    axis = face // 2
    sign = np.where(face % 2 == 0, -1.0, 1.0)
    pts[np.arange(n), axis] = sign * half[axis]
    return b.pose.apply(pts)


def ground_truth_cloud(scene: Scene, density: float, seed: int = 0) -> np.ndarray:
    """Uniform random surface samples, about ``density`` points per square metre.

    Cylinders are sampled on their lateral surface only (pipes and pilings);
    boxes on all six faces.
    """
    if density <= 0:
        raise ValueError("density must be positive")
    rng = np.random.default_rng(seed)
    parts = []
    for prim in scene.primitives:
        if isinstance(prim, Cylinder):
            parts.append(_sample_cylinder(prim, int(round(prim.lateral_area * density)), rng))
        else:
            parts.append(_sample_box(prim, int(round(prim.area * density)), rng))
    return np.concatenate(parts) if parts else np.zeros((0, 3))


def orbit_poses(
    center: Sequence[float] = (0.0, 0.0, 0.0),
    radius: float = 5.0,
    count: int = 20,
    arc: float = math.radians(90.0),
    height: float = 0.0,
    start: float = math.pi,
) -> list[RigidTransform]:
    """Poses on a circular arc around ``center``, each facing it.

    ``start`` is the azimuth (about world z) of the arc's midpoint as seen
    from the centre; the default puts the robot on the -x side.
    """
    cx, cy, cz = center
    if count == 1:
        azimuths = np.array([start])
    else:
        azimuths = start + np.linspace(-0.5 * arc, 0.5 * arc, count)
    poses = []
    for az in azimuths:
        pos = (cx + radius * math.cos(az), cy + radius * math.sin(az), cz + height)
        yaw = az + math.pi
        poses.append(RigidTransform.from_rpy(0.0, 0.0, yaw, translation=pos))
    return poses


def cylinder_scene(radius: float = 0.045, height: float = 2.5) -> Scene:
    """Single vertical piling centred on the world origin."""
    return Scene((Cylinder(radius, height),))


def box_on_cylinder_scene(
    pipe_radius: float = 0.045,
    pipe_height: float = 2.5,
    box_size: tuple[float, float, float] = (0.82, 0.82, 0.45),
    box_center_height: float = 1.2,
    sonar_height: float = 1.2,
    box_reflectivity: float = 1.0,
) -> Scene:
    """Box threaded on a vertical pipe.

    Heights are measured from the bottom of the pipe; the world origin sits
    on the pipe axis at ``sonar_height`` so orbit poses at height 0 look
    straight at it.
    """
    pipe_z = 0.5 * pipe_height - sonar_height
    box_z = box_center_height - sonar_height
    pipe = Cylinder(pipe_radius, pipe_height, RigidTransform(translation=(0.0, 0.0, pipe_z)))
    box = Box(*box_size, pose=RigidTransform(translation=(0.0, 0.0, box_z)), reflectivity=box_reflectivity)
    return Scene((pipe, box))


# ---------------------------------------------------------------------------
# JSON schema


def primitive_from_dict(data: dict) -> ScenePrimitive:
    kind = data.get("kind")
    pose = RigidTransform.from_dict(data.get("pose", {}))
    refl = float(data.get("reflectivity", 1.0))
    if kind == "cylinder":
        return Cylinder(float(data["radius"]), float(data["height"]), pose, refl)
    if kind == "box":
        return Box(float(data["width"]), float(data["depth"]), float(data["height"]), pose, refl)
    raise ValueError(f"unknown primitive kind {kind!r}")


def primitive_to_dict(prim: ScenePrimitive) -> dict:
    if isinstance(prim, Cylinder):
        out = {"kind": "cylinder", "radius": prim.radius, "height": prim.height}
    else:
        out = {"kind": "box", "width": prim.width, "depth": prim.depth, "height": prim.height}
    out["pose"] = prim.pose.to_dict()
    out["reflectivity"] = prim.reflectivity
    return out


def scene_from_dict(data: dict) -> Scene:
    return Scene(tuple(primitive_from_dict(p) for p in data.get("primitives", [])))


def scene_to_dict(scene: Scene) -> dict:
    return {"primitives": [primitive_to_dict(p) for p in scene.primitives]}


def noise_from_dict(data: dict | None) -> NoiseModel:
    data = data or {}
    return NoiseModel(
        float(data.get("background_mean", 0.0)),
        float(data.get("speckle_variance", 0.0)),
        int(data.get("seed", 0)),
    )


def trajectory_from_dict(data: dict | None) -> list[RigidTransform]:
    """Either an explicit ``poses`` list or an ``orbit`` description."""
    data = data or {}
    if "poses" in data:
        return [RigidTransform.from_dict(p) for p in data["poses"]]
    orbit = data.get("orbit", {})
    return orbit_poses(
        center=orbit.get("center", (0.0, 0.0, 0.0)),
        radius=float(orbit.get("radius", 5.0)),
        count=int(orbit.get("count", 20)),
        arc=math.radians(float(orbit.get("arc_deg", 90.0))),
        height=float(orbit.get("height", 0.0)),
        start=math.radians(float(orbit.get("start_deg", 180.0))),
    )


def with_seed(noise: NoiseModel, seed: int) -> NoiseModel:
    return replace(noise, seed=seed)
