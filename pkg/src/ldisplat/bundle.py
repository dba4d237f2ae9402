"""Dataset bundles: a scene, its cameras, rendered images and ground truth.

Directory layout::

    scene.txt               scene description (text, versioned)
    cameras.txt             source and target cameras (text, versioned)
    source.img / .png       ray-cast source image
    gt_ldi.bin              two-layer ground-truth LDI
    gt_second.img           1 where a second surface exists behind layer 0
    target_XXX.img / .png   ray-cast target images at the downsampled size
    disocc_XXX.img / .png   dis-occlusion masks for each target
    heldout_XXX.img / .png  extra targets never used for fitting (optional)
    heldout_disocc_XXX.img / .png

Metrics are always computed from the ``.img`` float files; PNGs are for
viewing only.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .geometry import Intrinsics, ViewTransform
from .ldi import Ldi, read_image, read_ldi, write_image, write_ldi, write_png
from .scenesynth import (
    Camera,
    Scene,
    ViewRanges,
    canonical_camera,
    disocclusion_mask,
    generate_scene,
    ground_truth_ldi,
    raycast,
    relative_transform,
    sample_view_pair,
    scene_from_text,
    scene_to_text,
)

CAMERAS_MAGIC = "ldisplat-cameras"
CAMERAS_VERSION = 1
MAX_VIEWS = 999


class BundleError(ValueError):
    """A bundle directory is missing files or holds inconsistent data."""


def _fmt(values) -> str:
    return " ".join(format(float(v), ".17g") for v in np.ravel(values))


@dataclass
class CameraSet:
    """Named cameras sharing one full-resolution image size.

    Target images are stored at ``target_downsampling`` times that size.
    """

    width: int
    height: int
    target_downsampling: float
    cameras: dict  # name -> Camera, "source" first

    @property
    def source(self) -> Camera:
        return self.cameras["source"]

    @property
    def target_names(self) -> list:
        return [n for n in self.cameras if n.startswith("target_")]

    @property
    def heldout_names(self) -> list:
        return [n for n in self.cameras if n.startswith("heldout_")]

    def view(self, name: str) -> ViewTransform:
        """Transform from the source camera to camera ``name``."""
        if name not in self.cameras:
            raise BundleError(f"unknown camera {name!r}; available: {', '.join(self.cameras)}")
        src, tgt = self.source, self.cameras[name]
        return ViewTransform(src.intrinsics, tgt.intrinsics, relative_transform(src, tgt))


def cameras_to_text(cams: CameraSet) -> str:
    lines = [
        f"{CAMERAS_MAGIC} {CAMERAS_VERSION}",
        f"size {cams.width} {cams.height}",
        f"target_downsampling {cams.target_downsampling!r}",
    ]
    for name, cam in cams.cameras.items():
        k = cam.intrinsics
        lines += [
            f"camera {name}",
            "  intrinsics " + _fmt([k.fx, k.fy, k.cx, k.cy]),
            "  rotation " + _fmt(cam.rotation),
            "  center " + _fmt(cam.center),
        ]
    return "\n".join(lines) + "\n"


def cameras_from_text(text: str, origin: str = "cameras") -> CameraSet:
    lines = [l.split() for l in text.splitlines() if l.strip() and not l.lstrip().startswith("#")]
    if not lines or lines[0][0] != CAMERAS_MAGIC:
        raise BundleError(f"{origin}: not a camera file")
    if int(lines[0][1]) != CAMERAS_VERSION:
        raise BundleError(f"{origin}: unsupported camera file version {lines[0][1]}")
    width = height = None
    ds = 1.0
    cams, current = {}, None
    try:
        for key, *vals in lines[1:]:
            if key == "size":
                width, height = int(vals[0]), int(vals[1])
            elif key == "target_downsampling":
                ds = float(vals[0])
            elif key == "camera":
                current = vals[0]
                cams[current] = {}
            elif current is not None and key in ("intrinsics", "rotation", "center"):
                cams[current][key] = np.array([float(v) for v in vals])
            else:
                raise BundleError(f"{origin}: unexpected line {' '.join([key, *vals])!r}")
        out = {}
        for name, f in cams.items():
            out[name] = Camera(Intrinsics(*f["intrinsics"]), f["rotation"].reshape(3, 3), f["center"])
    except (KeyError, IndexError, ValueError) as exc:
        if isinstance(exc, BundleError):
            raise
        raise BundleError(f"{origin}: malformed camera entry ({exc})") from None
    if width is None or "source" not in out:
        raise BundleError(f"{origin}: needs a 'size' line and a 'source' camera")
    ordered = {"source": out.pop("source"), **out}
    return CameraSet(width, height, ds, ordered)


def read_cameras(path) -> CameraSet:
    path = Path(path)
    if not path.is_file():
        raise BundleError(f"camera file not found: {path}")
    return cameras_from_text(path.read_text(), str(path))


@dataclass
class Bundle:
    scene: Scene
    cameras: CameraSet
    source_image: np.ndarray
    target_images: list
    disocc_masks: list
    gt_ldi: Ldi
    gt_second: np.ndarray
    heldout_images: list = field(default_factory=list)
    heldout_masks: list = field(default_factory=list)

    def views(self) -> list:
        """``(target_image, ViewTransform)`` pairs for the loss functions."""
        return [(img, self.cameras.view(n)) for n, img in zip(self.cameras.target_names, self.target_images)]

    def eval_views(self) -> list:
        """``(image, ViewTransform, disocc_mask)`` triples used for scoring:
        the held-out targets when present, otherwise the fitting targets."""
        if self.heldout_images:
            names, imgs, masks = self.cameras.heldout_names, self.heldout_images, self.heldout_masks
        else:
            names, imgs, masks = self.cameras.target_names, self.target_images, self.disocc_masks
        return [(img, self.cameras.view(n), m) for n, img, m in zip(names, imgs, masks)]


def make_bundle(seed: int, n_obj_min: int = 1, n_obj_max: int = 3, n_views: int = 8,
                width: int = 64, height: int = 64, ranges: ViewRanges = ViewRanges(),
                target_downsampling: float = 0.5, n_heldout: int = 0) -> Bundle:
    """Generate a scene and ray-cast a canonical source view plus ``n_views`` targets
    and ``n_heldout`` held-out targets.

    Targets are ray-cast at the downsampled size with ``round(1 / factor)``
    supersampling, so each target pixel averages the area it covers.
    """
    if not 1 <= n_views <= MAX_VIEWS:
        raise ValueError(f"views must lie in [1, {MAX_VIEWS}], got {n_views}")
    if not 0 <= n_heldout <= MAX_VIEWS:
        raise ValueError(f"held-out views must lie in [0, {MAX_VIEWS}], got {n_heldout}")
    tw, th = width * target_downsampling, height * target_downsampling
    if abs(tw - round(tw)) > 1e-9 or abs(th - round(th)) > 1e-9:
        raise ValueError(f"size {width}x{height} times downsampling {target_downsampling} is not integral")
    tw, th = int(round(tw)), int(round(th))
    supersample = max(1, int(round(1.0 / target_downsampling)))

    scene = generate_scene(seed, n_obj_min, n_obj_max)
    source = canonical_camera(width, height)
    source_image, _ = raycast(scene, source, width, height)
    gt, second = ground_truth_ldi(scene, source, width, height)
    cams = {"source": source}
    images = {"target": ([], []), "heldout": ([], [])}
    for i in range(n_views + n_heldout):
        view_seed = int(np.random.SeedSequence([seed, i]).generate_state(1)[0])
        pair = sample_view_pair(view_seed, ranges, width, height, canonical="source")
        kind, j = ("target", i) if i < n_views else ("heldout", i - n_views)
        cams[f"{kind}_{j:03d}"] = pair.target
        small = pair.target.scaled(target_downsampling)
        images[kind][0].append(raycast(scene, small, tw, th, supersample=supersample)[0])
        images[kind][1].append(disocclusion_mask(scene, source, small, tw, th, (width, height)))
    camset = CameraSet(width, height, float(target_downsampling), cams)
    return Bundle(scene, camset, source_image, *images["target"], gt, second.astype(np.float64),
                  *images["heldout"])


def write_bundle(bundle: Bundle, out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "scene.txt").write_text(scene_to_text(bundle.scene))
    (out / "cameras.txt").write_text(cameras_to_text(bundle.cameras))
    write_image(out / "source.img", bundle.source_image)
    write_png(out / "source.png", bundle.source_image)
    write_ldi(out / "gt_ldi.bin", bundle.gt_ldi)
    write_image(out / "gt_second.img", bundle.gt_second)
    for name, img, mask in zip(bundle.cameras.target_names, bundle.target_images, bundle.disocc_masks):
        suffix = name.split("_", 1)[1]
        write_image(out / f"{name}.img", img)
        write_png(out / f"{name}.png", img)
        write_image(out / f"disocc_{suffix}.img", mask)
        write_png(out / f"disocc_{suffix}.png", mask)
    for name, img, mask in zip(bundle.cameras.heldout_names, bundle.heldout_images, bundle.heldout_masks):
        suffix = name.split("_", 1)[1]
        write_image(out / f"{name}.img", img)
        write_png(out / f"{name}.png", img)
        write_image(out / f"heldout_disocc_{suffix}.img", mask)
        write_png(out / f"heldout_disocc_{suffix}.png", mask)
    return out


def _need(path: Path) -> Path:
    if not path.is_file():
        raise BundleError(f"bundle file missing: {path}")
    return path


def read_bundle(path) -> Bundle:
    root = Path(path)
    if not root.is_dir():
        raise BundleError(f"bundle directory not found: {root}")
    scene = scene_from_text(_need(root / "scene.txt").read_text())
    cams = read_cameras(root / "cameras.txt")
    source = read_image(_need(root / "source.img"))
    if source.shape != (cams.height, cams.width, 3):
        raise BundleError(f"{root / 'source.img'}: size does not match cameras.txt")
    targets, masks = [], []
    for name in cams.target_names:
        suffix = name.split("_", 1)[1]
        targets.append(read_image(_need(root / f"{name}.img")))
        masks.append(read_image(_need(root / f"disocc_{suffix}.img")))
    held, held_masks = [], []
    for name in cams.heldout_names:
        suffix = name.split("_", 1)[1]
        held.append(read_image(_need(root / f"{name}.img")))
        held_masks.append(read_image(_need(root / f"heldout_disocc_{suffix}.img")))
    gt = read_ldi(_need(root / "gt_ldi.bin"))
    second = read_image(_need(root / "gt_second.img"))
    return Bundle(scene, cams, source, targets, masks, gt, second, held, held_masks)
