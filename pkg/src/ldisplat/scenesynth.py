"""Procedural room-plus-sprites scenes with exact ray-cast ground truth.

World frame: x right, y down, z forward. The room box spans
``x, y in [-1, 1]`` and ``z in [1, 3]``; the canonical camera sits at the
origin looking down +z. Side walls, floor and ceiling continue in front of
``z = 1`` so that perturbed cameras never look out of the box.

Sprites are front-facing planar cut-outs whose rectangles stand on the
floor, placed left to right at increasing depths. Their opaque blobs keep a
minimum disparity gap to whatever lies directly behind them, so the two
ground-truth layers stay well separated relative to the z-buffer
temperature.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .geometry import Intrinsics, RigidTransform, rotation_from_euler, scale_intrinsics
from .ldi import Ldi

ROOM_MIN = np.array([-1.0, -1.0, 1.0])
ROOM_MAX = np.array([1.0, 1.0, 3.0])
ROOM_SURFACES = ("left_wall", "right_wall", "ceiling", "floor", "back_wall")
#: Minimum disparity gap between a sprite and the surface right behind it.
MIN_LAYER_GAP = 0.15
SPRITE_NEAREST = 1.15
SCENE_VERSION = 1


# ---------------------------------------------------------------------------
# textures


def _smoothstep(t):
    return t * t * (3.0 - 2.0 * t)


@dataclass
class ProceduralTexture:
    """Smooth color field on a plane: gradient, value noise and stripes.

    All features are band-limited in world units (noise cells >= 0.15 m,
    stripe periods >= 0.3 m), which keeps point sampling nearly alias free.
    """

    color_a: np.ndarray
    color_b: np.ndarray
    gradient: np.ndarray  # (dir_u, dir_v, frequency, phase)
    noise: np.ndarray  # (octaves, G, G) values in [-1, 1]
    noise_cells: np.ndarray  # cell size per octave, meters
    noise_amplitude: float
    stripes: np.ndarray  # (dir_u, dir_v, frequency, phase, amplitude)
    stripe_color: np.ndarray

    @classmethod
    def random(cls, rng: np.random.Generator, lattice: int = 8) -> "ProceduralTexture":
        angle = rng.uniform(0, 2 * np.pi)
        s_angle = rng.uniform(0, np.pi)
        return cls(
            color_a=rng.uniform(0.1, 0.9, 3),
            color_b=rng.uniform(0.1, 0.9, 3),
            gradient=np.array([np.cos(angle), np.sin(angle), rng.uniform(0.5, 2.0), rng.uniform(0, 2 * np.pi)]),
            noise=rng.uniform(-1.0, 1.0, (3, lattice, lattice)),
            noise_cells=np.array([0.6, 0.3, 0.15]) * rng.uniform(0.9, 1.3),
            noise_amplitude=float(rng.uniform(0.15, 0.35)),
            stripes=np.array(
                [np.cos(s_angle), np.sin(s_angle), rng.uniform(1.0, 3.0), rng.uniform(0, 2 * np.pi), rng.uniform(0.0, 0.4)]
            ),
            stripe_color=rng.uniform(0.0, 1.0, 3),
        )

    def _value_noise(self, octave: int, u, v):
        lat = self.noise[octave]
        g = lat.shape[0]
        pu = u / self.noise_cells[octave]
        pv = v / self.noise_cells[octave]
        iu = np.floor(pu)
        iv = np.floor(pv)
        fu = _smoothstep(pu - iu)
        fv = _smoothstep(pv - iv)
        i0 = iu.astype(np.int64) % g
        j0 = iv.astype(np.int64) % g
        i1 = (i0 + 1) % g
        j1 = (j0 + 1) % g
        top = lat[j0, i0] * (1 - fu) + lat[j0, i1] * fu
        bot = lat[j1, i0] * (1 - fu) + lat[j1, i1] * fu
        return top * (1 - fv) + bot * fv

    def __call__(self, u, v) -> np.ndarray:
        u = np.asarray(u, dtype=np.float64)
        v = np.asarray(v, dtype=np.float64)
        du, dv, freq, phase = self.gradient
        g = 0.5 + 0.5 * np.sin(freq * (du * u + dv * v) + phase)
        color = self.color_a * (1 - g)[..., None] + self.color_b * g[..., None]
        n = sum(0.5**o * self._value_noise(o, u, v) for o in range(self.noise.shape[0])) / 1.75
        color = color * (1.0 + self.noise_amplitude * n)[..., None]
        su, sv, sfreq, sphase, samp = self.stripes
        s = samp * (0.5 + 0.5 * np.sin(2 * np.pi * sfreq * (su * u + sv * v) + sphase))
        color = color * (1 - s)[..., None] + self.stripe_color * s[..., None]
        return np.clip(color, 0.0, 1.0)

    def to_lines(self) -> list[str]:
        return [
            "color_a " + _fmt(self.color_a),
            "color_b " + _fmt(self.color_b),
            "gradient " + _fmt(self.gradient),
            f"noise {self.noise.shape[0]} {self.noise.shape[1]} " + _fmt(self.noise.ravel()),
            "noise_cells " + _fmt(self.noise_cells),
            "noise_amplitude " + _fmt([self.noise_amplitude]),
            "stripes " + _fmt(self.stripes),
            "stripe_color " + _fmt(self.stripe_color),
        ]

    @classmethod
    def from_fields(cls, fields: dict) -> "ProceduralTexture":
        octaves, g, *vals = fields["noise"]
        return cls(
            color_a=np.array(fields["color_a"]),
            color_b=np.array(fields["color_b"]),
            gradient=np.array(fields["gradient"]),
            noise=np.array(vals).reshape(int(octaves), int(g), int(g)),
            noise_cells=np.array(fields["noise_cells"]),
            noise_amplitude=float(fields["noise_amplitude"][0]),
            stripes=np.array(fields["stripes"]),
            stripe_color=np.array(fields["stripe_color"]),
        )


def _fmt(values) -> str:
    return " ".join(format(float(v), ".17g") for v in np.ravel(values))


# ---------------------------------------------------------------------------
# scene


@dataclass
class Sprite:
    """Front-facing cut-out on the plane ``z = depth``.

    The rectangle spans ``[x0, x1] x [y0, 1]`` (standing on the floor); texels
    are opaque inside a star-shaped blob with center ``(bx, by)``, radii
    ``(rx, ry)`` and radial harmonics ``(amplitude, phase)`` for orders 2..
    """

    depth: float
    x0: float
    x1: float
    y0: float
    blob: np.ndarray  # bx, by, rx, ry
    harmonics: np.ndarray  # (K, 2)
    texture: ProceduralTexture

    def opaque(self, x, y) -> np.ndarray:
        bx, by, rx, ry = self.blob
        dx = (x - bx) / rx
        dy = (y - by) / ry
        theta = np.arctan2(dy, dx)
        radius = np.ones_like(theta)
        for k, (a, p) in enumerate(self.harmonics, start=2):
            radius = radius + a * np.cos(k * theta + p)
        inside_rect = (x >= self.x0) & (x <= self.x1) & (y >= self.y0) & (y <= ROOM_MAX[1])
        return inside_rect & (dx * dx + dy * dy < radius * radius)

    @property
    def max_blob_extent(self) -> float:
        return 1.0 + np.abs(self.harmonics[:, 0]).sum()


@dataclass
class Scene:
    room: dict  # surface name -> ProceduralTexture
    sprites: list = field(default_factory=list)
    seed: int = 0


def _sample_sprite_depths(rng, n: int) -> np.ndarray:
    back = 1.0 / ROOM_MAX[2]
    top = 1.0 / SPRITE_NEAREST
    gap = min(MIN_LAYER_GAP, (top - back) / (n + 0.25))
    slack = (top - back) - gap * n
    # disparities: descending, consecutive gaps >= gap, last one >= gap above the back wall
    cuts = np.sort(rng.uniform(0.0, slack, n))[::-1]
    disp = back + gap * np.arange(n, 0, -1) + cuts
    return 1.0 / disp


def generate_scene(seed: int, n_obj_min: int = 1, n_obj_max: int = 3) -> Scene:
    if not 1 <= n_obj_min <= n_obj_max <= 4:
        raise ValueError(f"need 1 <= n_obj_min <= n_obj_max <= 4, got {n_obj_min}, {n_obj_max}")
    rng = np.random.default_rng(seed)
    room = {name: ProceduralTexture.random(rng) for name in ROOM_SURFACES}
    n = int(rng.integers(n_obj_min, n_obj_max + 1))
    depths = _sample_sprite_depths(rng, n)
    sprites = []
    for i, z in enumerate(depths):
        # opaque blob stays inside the canonical frustum and keeps MIN_LAYER_GAP
        # of disparity to the walls, floor and ceiling behind it
        reach = min(0.42 * z, 1.0 - MIN_LAYER_GAP * z) - 0.02
        slot = 2.0 * reach / n
        center = -reach + (i + rng.uniform(0.4, 0.6)) * slot
        harmonics = np.column_stack([rng.uniform(-0.1, 0.1, 4), rng.uniform(0, 2 * np.pi, 4)])
        extent = 1.0 + np.abs(harmonics[:, 0]).sum()
        rx = min(rng.uniform(0.15, 0.3), rng.uniform(0.3, 0.45) * slot) / extent
        ry = rng.uniform(0.25, 0.45) * 2.0 * reach / extent
        by = reach - ry * extent
        sprites.append(
            Sprite(
                depth=float(z),
                x0=float(center - rx * extent),
                x1=float(center + rx * extent),
                y0=float(by - ry * extent),
                blob=np.array([center, by, rx, ry]),
                harmonics=harmonics,
                texture=ProceduralTexture.random(rng),
            )
        )
    return Scene(room, sprites, seed)


def check_scene(scene: Scene) -> list[str]:
    """Invariant violations of a generated scene (empty when valid)."""
    problems = []
    depths = [s.depth for s in scene.sprites]
    if not 1 <= len(depths) <= 4:
        problems.append(f"sprite count {len(depths)} outside [1, 4]")
    if any(b <= a for a, b in zip(depths, depths[1:])):
        problems.append("sprite depths are not strictly increasing")
    centers = [s.blob[0] for s in scene.sprites]
    if any(b <= a for a, b in zip(centers, centers[1:])):
        problems.append("sprites are not ordered left to right")
    for i, s in enumerate(scene.sprites):
        if not (ROOM_MIN[2] < s.depth < ROOM_MAX[2]):
            problems.append(f"sprite {i} depth {s.depth} outside the room")
        if not (ROOM_MIN[0] < s.x0 < s.x1 < ROOM_MAX[0] and ROOM_MIN[1] < s.y0 < ROOM_MAX[1]):
            problems.append(f"sprite {i} rectangle leaves the room")
    return problems


# ---------------------------------------------------------------------------
# cameras and ray casting


@dataclass(frozen=True)
class Camera:
    """Pinhole camera with camera-to-world ``rotation`` and ``center``."""

    intrinsics: Intrinsics
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    center: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def world_to_camera(self) -> RigidTransform:
        r = np.asarray(self.rotation).T
        return RigidTransform(r, -r @ np.asarray(self.center))

    def scaled(self, factor: float) -> "Camera":
        return Camera(scale_intrinsics(self.intrinsics, factor), self.rotation, self.center)


def relative_transform(source: Camera, target: Camera) -> RigidTransform:
    """Rigid map from source-camera coordinates to target-camera coordinates."""
    return target.world_to_camera().compose(source.world_to_camera().inverse())


def canonical_camera(width: int, height: int) -> Camera:
    return Camera(Intrinsics.from_fov(width, height))


class RayHits(NamedTuple):
    depth: np.ndarray  # (S, N) camera-frame depth per surface, inf when missed
    points: np.ndarray  # (S, N, 3) world hit points
    names: tuple


class SceneEscapeError(RuntimeError):
    pass


def _surfaces(scene: Scene):
    names = list(ROOM_SURFACES) + [f"sprite{i}" for i in range(len(scene.sprites))]
    return names


def _camera_rays(camera: Camera, xs, ys):
    k = camera.intrinsics
    local = np.stack([(xs - k.cx) / k.fx, (ys - k.cy) / k.fy, np.ones_like(xs)], axis=-1)
    dirs = local @ np.asarray(camera.rotation).T  # camera z component of each direction is 1
    return np.asarray(camera.center, dtype=np.float64), dirs


def _intersect(scene: Scene, origin, dirs) -> RayHits:
    """Hit depth of every ray against every surface (room planes and sprites)."""
    n = dirs.shape[0]
    names = _surfaces(scene)
    depth = np.full((len(names), n), np.inf)
    points = np.zeros((len(names), n, 3))
    lo, hi = ROOM_MIN, ROOM_MAX
    eps = 1e-12

    def plane(axis, value):
        with np.errstate(divide="ignore", invalid="ignore"):
            t = (value - origin[axis]) / dirs[:, axis]
            p = origin + t[:, None] * dirs
        return t, p

    planes = [(0, lo[0]), (0, hi[0]), (1, lo[1]), (1, hi[1]), (2, hi[2])]
    for s, (axis, value) in enumerate(planes):
        t, p = plane(axis, value)
        ok = t > eps
        if axis == 0:
            ok &= (p[:, 1] >= lo[1]) & (p[:, 1] <= hi[1]) & (p[:, 2] <= hi[2])
        elif axis == 1:
            ok &= (p[:, 0] >= lo[0]) & (p[:, 0] <= hi[0]) & (p[:, 2] <= hi[2])
        else:
            ok &= (p[:, 0] >= lo[0]) & (p[:, 0] <= hi[0]) & (p[:, 1] >= lo[1]) & (p[:, 1] <= hi[1])
        depth[s] = np.where(ok, t, np.inf)
        points[s] = p
    for i, sprite in enumerate(scene.sprites):
        s = len(ROOM_SURFACES) + i
        t, p = plane(2, sprite.depth)
        with np.errstate(invalid="ignore"):
            ok = (t > eps) & sprite.opaque(p[:, 0], p[:, 1])
        depth[s] = np.where(ok, t, np.inf)
        points[s] = p
    return RayHits(depth, points, tuple(names))


def _shade(scene: Scene, surface: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Color of world ``points`` lying on the given surface indices."""
    out = np.zeros(points.shape)
    uv_axes = {
        "left_wall": (2, 1),
        "right_wall": (2, 1),
        "ceiling": (0, 2),
        "floor": (0, 2),
        "back_wall": (0, 1),
    }
    for s, name in enumerate(ROOM_SURFACES):
        sel = surface == s
        if sel.any():
            a, b = uv_axes[name]
            out[sel] = scene.room[name](points[sel, a], points[sel, b])
    for i, sprite in enumerate(scene.sprites):
        sel = surface == len(ROOM_SURFACES) + i
        if sel.any():
            out[sel] = sprite.texture(points[sel, 0] - sprite.x0, points[sel, 1] - sprite.y0)
    return out


def _cast(scene: Scene, camera: Camera, xs, ys):
    origin, dirs = _camera_rays(camera, xs.reshape(-1), ys.reshape(-1))
    hits = _intersect(scene, origin, dirs)
    order = np.argsort(hits.depth, axis=0, kind="stable")
    first = order[0]
    n = first.size
    idx = np.arange(n)
    d1 = hits.depth[first, idx]
    if not np.all(np.isfinite(d1)):
        raise SceneEscapeError(f"{int((~np.isfinite(d1)).sum())} rays leave the room")
    return hits, order, idx


def raycast(scene: Scene, camera: Camera, width: int, height: int, supersample: int = 1):
    """Exact first-hit color ``(H, W, 3)`` and disparity ``(H, W)``.

    With ``supersample > 1`` the color is the box average of an
    ``s x s`` grid of sub-pixel rays per pixel; disparity always comes from
    the pixel-center ray.
    """
    if supersample > 1:
        fine = camera.scaled(supersample)
        color, _ = raycast(scene, fine, width * supersample, height * supersample)
        color = color.reshape(height, supersample, width, supersample, 3).mean(axis=(1, 3))
        _, disp = raycast(scene, camera, width, height)
        return color, disp
    ys, xs = np.mgrid[0:height, 0:width].astype(np.float64)
    hits, order, idx = _cast(scene, camera, xs, ys)
    first = order[0]
    depth = hits.depth[first, idx]
    color = _shade(scene, first, hits.points[first, idx])
    return color.reshape(height, width, 3), (1.0 / depth).reshape(height, width)


def ground_truth_ldi(scene: Scene, camera: Camera, width: int, height: int, n_layers: int = 2, d_max: float = 1.0):
    """Two-layer LDI from the first and second opaque hits along each ray.

    Returns ``(ldi, has_second)``; where a ray meets only one surface the
    second layer repeats the first and ``has_second`` is False.
    """
    if n_layers != 2:
        raise ValueError("ground-truth LDIs are built with exactly two layers")
    ys, xs = np.mgrid[0:height, 0:width].astype(np.float64)
    hits, order, idx = _cast(scene, camera, xs, ys)
    first, second = order[0], order[1]
    d1 = hits.depth[first, idx]
    d2 = hits.depth[second, idx]
    # room surfaces close the box: only a sprite hit can have something behind it
    has_second = np.isfinite(d2) & (first >= len(ROOM_SURFACES))
    second = np.where(has_second, second, first)
    d2 = np.where(has_second, d2, d1)
    c1 = _shade(scene, first, hits.points[first, idx])
    c2 = _shade(scene, second, hits.points[second, idx])
    shape = (height, width)
    ldi = Ldi(
        np.stack([c1.reshape(*shape, 3), c2.reshape(*shape, 3)]),
        np.stack([(1.0 / d1).reshape(shape), (1.0 / d2).reshape(shape)]),
        d_max,
    )
    return ldi, has_second.reshape(shape)


def disocclusion_mask(scene: Scene, source: Camera, target: Camera, width: int, height: int,
                      source_size: tuple, tolerance: float = 1e-4) -> np.ndarray:
    """1 where a target pixel's surface point is hidden in (or outside) the source view.

    ``width``/``height`` are the target image size for ``target``'s
    intrinsics; ``source_size`` is the source ``(width, height)``.
    """
    ys, xs = np.mgrid[0:height, 0:width].astype(np.float64)
    hits, order, idx = _cast(scene, target, xs, ys)
    points = hits.points[order[0], idx]

    w2c = source.world_to_camera()
    local = w2c.apply(points)
    z = local[:, 2]
    k = source.intrinsics
    front = z > 1e-9
    safe_z = np.where(front, z, 1.0)
    u = k.fx * local[:, 0] / safe_z + k.cx
    v = k.fy * local[:, 1] / safe_z + k.cy
    sw, sh = source_size
    inside = front & (u >= -0.5) & (u <= sw - 0.5) & (v >= -0.5) & (v <= sh - 0.5)

    mask = np.ones(points.shape[0])
    if inside.any():
        origin, dirs = _camera_rays(source, u[inside], v[inside])
        src_hits = _intersect(scene, origin, dirs)
        nearest = src_hits.depth.min(axis=0)
        visible = nearest >= z[inside] - tolerance
        mask[np.flatnonzero(inside)[visible]] = 0.0
    return mask.reshape(height, width)


# ---------------------------------------------------------------------------
# view sampling


@dataclass(frozen=True)
class ViewRanges:
    """Half-widths of the uniform pose perturbation around the canonical view."""

    lateral: float = 0.25
    vertical: float = 0.1
    axial: float = 0.2
    rotation_deg: float = 2.0

    def __post_init__(self):
        if min(self.lateral, self.vertical, self.axial, self.rotation_deg) < 0:
            raise ValueError("view sampling ranges must be nonnegative")


class ViewPairSample(NamedTuple):
    source: Camera
    target: Camera
    relative: RigidTransform
    source_is_canonical: bool


def sample_camera(rng: np.random.Generator, intrinsics: Intrinsics, ranges: ViewRanges) -> Camera:
    t = rng.uniform(-1.0, 1.0, 3) * np.array([ranges.lateral, ranges.vertical, ranges.axial])
    angles = np.deg2rad(rng.uniform(-1.0, 1.0, 3) * ranges.rotation_deg)
    return Camera(intrinsics, rotation_from_euler(*angles), t)


def sample_view_pair(seed: int, ranges: ViewRanges = ViewRanges(), width: int = 64, height: int = 64,
                     canonical: str = "random") -> ViewPairSample:
    """One canonical front-facing camera and one perturbed camera.

    ``canonical`` picks which side is canonical: ``"random"`` (coin flip),
    ``"source"`` or ``"target"``.
    """
    rng = np.random.default_rng(seed)
    k = Intrinsics.from_fov(width, height)
    front = Camera(k)
    moved = sample_camera(rng, k, ranges)
    if canonical == "random":
        source_canonical = bool(rng.integers(0, 2))
    elif canonical in ("source", "target"):
        source_canonical = canonical == "source"
    else:
        raise ValueError(f"canonical must be 'random', 'source' or 'target', got {canonical!r}")
    src, tgt = (front, moved) if source_canonical else (moved, front)
    return ViewPairSample(src, tgt, relative_transform(src, tgt), source_canonical)


# ---------------------------------------------------------------------------
# text serialization


def scene_to_text(scene: Scene) -> str:
    lines = [f"ldisplat-scene {SCENE_VERSION}", f"seed {scene.seed}", f"sprites {len(scene.sprites)}"]
    for name in ROOM_SURFACES:
        lines.append(f"surface {name}")
        lines += ["  " + s for s in scene.room[name].to_lines()]
    for i, sp in enumerate(scene.sprites):
        lines.append(f"sprite {i}")
        lines.append("  rect " + _fmt([sp.depth, sp.x0, sp.x1, sp.y0]))
        lines.append("  blob " + _fmt(sp.blob))
        lines.append(f"  harmonics {sp.harmonics.shape[0]} " + _fmt(sp.harmonics))
        lines += ["  " + s for s in sp.texture.to_lines()]
    return "\n".join(lines) + "\n"


def scene_from_text(text: str) -> Scene:
    lines = [l.strip() for l in text.splitlines() if l.strip()]
    head = lines[0].split()
    if head[0] != "ldisplat-scene" or int(head[1]) != SCENE_VERSION:
        raise ValueError(f"unsupported scene header {lines[0]!r}")
    seed = int(lines[1].split()[1])
    blocks = []
    for line in lines[3:]:
        key, *vals = line.split()
        if key in ("surface", "sprite"):
            blocks.append((key, vals[0], {}))
        else:
            blocks[-1][2][key] = [float(v) for v in vals]
    room, sprites = {}, []
    for kind, name, fields_ in blocks:
        tex = ProceduralTexture.from_fields(fields_)
        if kind == "surface":
            room[name] = tex
        else:
            depth, x0, x1, y0 = fields_["rect"]
            k, *h = fields_["harmonics"]
            sprites.append(Sprite(depth, x0, x1, y0, np.array(fields_["blob"]), np.array(h).reshape(int(k), 2), tex))
    return Scene(room, sprites, seed)
